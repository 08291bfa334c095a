//! Channel datasets: Rayleigh generation, CSI perturbation and `.chjson` files.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};
use crate::seeding::{derive_seed, rng_from, stream};

/// Antenna count `M`, user count `K` and frequency-bin count `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDims {
    pub antennas: usize,
    pub users: usize,
    pub bins: usize,
}

/// One channel draw: `B` matrices `H[b]`, each `M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    matrices: Vec<ComplexMatrix>,
}

impl ChannelRealization {
    pub fn new(matrices: Vec<ComplexMatrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidArgument("a channel realization needs at least one bin".into()))?
            .shape();
        for h in &matrices {
            if h.shape() != first {
                return Err(Error::DimensionMismatch {
                    op: "ChannelRealization::new",
                    left: first,
                    right: h.shape(),
                });
            }
        }
        Ok(Self { matrices })
    }

    pub fn bins(&self) -> usize {
        self.matrices.len()
    }

    pub fn antennas(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn users(&self) -> usize {
        self.matrices[0].cols()
    }

    pub fn dims(&self) -> ChannelDims {
        ChannelDims {
            antennas: self.antennas(),
            users: self.users(),
            bins: self.bins(),
        }
    }

    pub fn matrices(&self) -> &[ComplexMatrix] {
        &self.matrices
    }

    /// All-zero channel with the given shape.
    pub fn zeros(dims: ChannelDims) -> Self {
        Self {
            matrices: (0..dims.bins)
                .map(|_| ComplexMatrix::zeros(dims.antennas, dims.users))
                .collect(),
        }
    }

    /// `H[b] + E[b]` with `E` i.i.d. circularly-symmetric Gaussian of per-entry variance `variance`.
    pub fn perturbed(&self, variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "CSI error variance must be non-negative, got {variance}"
            )));
        }
        if variance == 0.0 {
            return Ok(self.clone());
        }
        let mut rng = rng_from(seed);
        let std = variance.sqrt();
        let matrices = self
            .matrices
            .iter()
            .map(|h| h.map(|z| z + complex_gaussian(&mut rng) * std))
            .collect();
        Ok(Self { matrices })
    }
}

/// One draw of `CN(0, 1)`.
pub(crate) fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// A labelled collection of channel realizations sharing `(M, K, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub dims: ChannelDims,
    pub samples: Vec<ChannelRealization>,
    pub seed: u64,
    pub model_tag: String,
}

impl ChannelDataset {
    pub fn new(dims: ChannelDims, samples: Vec<ChannelRealization>, seed: u64, model_tag: impl Into<String>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.dims() != dims {
                return Err(Error::Schema(format!(
                    "sample {i} has dims {:?}, dataset declares {:?}",
                    s.dims(),
                    dims
                )));
            }
        }
        Ok(Self {
            dims,
            samples,
            seed,
            model_tag: model_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Deterministic 80/10/10 split by sample index into (train, validation, test).
    pub fn split(&self) -> (ChannelDataset, ChannelDataset, ChannelDataset) {
        let n = self.len();
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let part = |range: std::ops::Range<usize>| ChannelDataset {
            dims: self.dims,
            samples: self.samples[range].to_vec(),
            seed: self.seed,
            model_tag: self.model_tag.clone(),
        };
        (
            part(0..n_train),
            part(n_train..n_train + n_val),
            part(n_train + n_val..n),
        )
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> ChannelDataset {
        ChannelDataset {
            samples: self.samples.iter().take(n).cloned().collect(),
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> ChannelDataset {
        ChannelDataset {
            dims: self.dims,
            samples: Vec::new(),
            seed: self.seed,
            model_tag: self.model_tag.clone(),
        }
    }
}

/// Draws `n` i.i.d. Rayleigh channel realizations with unit-variance `CN(0,1)` entries.
pub fn generate_rayleigh(antennas: usize, users: usize, bins: usize, n: usize, seed: u64) -> Result<ChannelDataset> {
    if antennas == 0 || users == 0 || bins == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "generate_rayleigh needs M,K,B,n >= 1 (got {antennas},{users},{bins},{n})"
        )));
    }
    let mut rng = rng_from(derive_seed(seed, stream::CHANNEL, 0));
    let samples = (0..n)
        .map(|_| ChannelRealization {
            matrices: (0..bins)
                .map(|_| ComplexMatrix::from_fn(antennas, users, |_, _| complex_gaussian(&mut rng)))
                .collect(),
        })
        .collect();
    ChannelDataset::new(
        ChannelDims { antennas, users, bins },
        samples,
        seed,
        "rayleigh",
    )
}

/// Adds fresh CSI estimation noise to every sample; sample `i` uses its own derived stream.
pub fn perturb_csi(d: &ChannelDataset, sigma_e2: f64, seed: u64) -> Result<ChannelDataset> {
    let samples = d
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.perturbed(sigma_e2, derive_seed(seed, stream::CSI_NOISE, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelDataset {
        samples,
        ..d.clone_empty()
    })
}

/// Symbol power `rho_s` and noise variance `sigma_w^2`, both linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub rho_s: f64,
    pub sigma_w2: f64,
}

impl SystemParams {
    pub fn new(rho_s: f64, sigma_w2: f64) -> Result<Self> {
        if !(rho_s > 0.0 && sigma_w2 > 0.0) || !rho_s.is_finite() || !sigma_w2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rho_s and sigma_w2 must be positive and finite, got {rho_s}, {sigma_w2}"
            )));
        }
        Ok(Self { rho_s, sigma_w2 })
    }

    /// `rho_s = 1`, `sigma_w^2 = 10^(-snr_db/10)`.
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        Self::new(1.0, 10f64.powf(-snr_db / 10.0))
    }

    pub fn snr(&self) -> f64 {
        self.rho_s / self.sigma_w2
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "B")]
    b: usize,
    n: usize,
    seed: u64,
    model_tag: String,
    /// samples[i][b][row][col] = [re, im]
    samples: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

pub fn save_dataset(d: &ChannelDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = DatasetFile {
        m: d.dims.antennas,
        k: d.dims.users,
        b: d.dims.bins,
        n: d.len(),
        seed: d.seed,
        model_tag: d.model_tag.clone(),
        samples: d
            .samples
            .iter()
            .map(|s| {
                s.matrices
                    .iter()
                    .map(|h| {
                        (0..h.rows())
                            .map(|r| (0..h.cols()).map(|c| [h[(r, c)].re, h[(r, c)].im]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ChannelDataset> {
    let text = fs::read_to_string(path)?;
    let file: DatasetFile = serde_json::from_str(&text)?;
    let dims = ChannelDims {
        antennas: file.m,
        users: file.k,
        bins: file.b,
    };
    if file.n != file.samples.len() {
        return Err(Error::Schema(format!(
            "n: declared {} but file holds {} samples",
            file.n,
            file.samples.len()
        )));
    }
    let mut samples = Vec::with_capacity(file.samples.len());
    for (i, sample) in file.samples.into_iter().enumerate() {
        if sample.len() != dims.bins {
            return Err(Error::Schema(format!(
                "samples[{i}]: expected B={} matrices, found {}",
                dims.bins,
                sample.len()
            )));
        }
        let mut matrices = Vec::with_capacity(dims.bins);
        for (b, rows) in sample.into_iter().enumerate() {
            if rows.len() != dims.antennas {
                return Err(Error::Schema(format!(
                    "samples[{i}][{b}]: expected M={} rows, found {}",
                    dims.antennas,
                    rows.len()
                )));
            }
            let mut data = Vec::with_capacity(dims.antennas * dims.users);
            for (r, row) in rows.into_iter().enumerate() {
                if row.len() != dims.users {
                    return Err(Error::Schema(format!(
                        "samples[{i}][{b}][{r}]: expected K={} entries, found {}",
                        dims.users,
                        row.len()
                    )));
                }
                data.extend(row.into_iter().map(|[re, im]| C64::new(re, im)));
            }
            matrices.push(ComplexMatrix::new(dims.antennas, dims.users, data)?);
        }
        samples.push(ChannelRealization { matrices });
    }
    ChannelDataset::new(dims, samples, file.seed, file.model_tag)
}
