//! Non-learned comparison optimizers: PGA+M with grid-tuned scalar
//! hyperparameters, and PGA with a per-iteration grid line search.

use std::cmp::Ordering;

use crate::channel::{ChannelRealization, SystemParams};
use crate::constraints::ProjectionSpec;
use crate::error::{Error, Result};
use crate::learning::TrainingSample;
use crate::linalg::ComplexMatrix;
use crate::objective::{evaluate, ConnectivityMatrix};
use crate::optimizer::{pga_step, run_unfolded, scalar_hyperparameters, AnalogBeamformer, StepMode, Trajectory};

/// Default step-size grid.
pub const DEFAULT_MU_GRID: [f64; 6] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1];

/// Default momentum grid.
pub const DEFAULT_BETA_GRID: [f64; 5] = [0.0, 0.3, 0.5, 0.7, 0.9];

/// Outcome of an exhaustive grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTuning {
    pub mu: f64,
    pub beta: f64,
    pub mean_rate: f64,
    /// `(μ, β, mean final rate)` for every pair, in lexicographic order.
    pub table: Vec<(f64, f64, f64)>,
}

fn sorted_pairs(mu_grid: &[f64], beta_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if mu_grid.is_empty() || beta_grid.is_empty() {
        return Err(Error::InvalidArgument("grid search needs non-empty grids".into()));
    }
    if mu_grid.iter().chain(beta_grid).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("grid values must be finite".into()));
    }
    let mut pairs: Vec<(f64, f64)> = mu_grid
        .iter()
        .flat_map(|&m| beta_grid.iter().map(move |&b| (m, b)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    pairs.dedup();
    Ok(pairs)
}

/// Mean final rate of scalar PGA+M run for `iterations` steps over `samples`.
pub fn mean_final_rate(
    a: &ConnectivityMatrix,
    samples: &[TrainingSample],
    p: &SystemParams,
    iterations: usize,
    mu: f64,
    beta: f64,
    projection: &ProjectionSpec,
) -> Result<f64> {
    let theta = scalar_hyperparameters(projection.structure, iterations, mu, beta);
    let mut total = 0.0;
    for s in samples {
        total += run_unfolded(&theta, a, &s.channel, p, projection, StepMode::Hard, &s.init)?.final_rate();
    }
    Ok(total / samples.len() as f64)
}

/// Picks the `(μ, β)` pair maximizing the mean rate after `iterations` steps.
///
/// Ties go to the lexicographically smallest pair.
pub fn grid_tune_fixed(
    a: &ConnectivityMatrix,
    samples: &[TrainingSample],
    p: &SystemParams,
    iterations: usize,
    mu_grid: &[f64],
    beta_grid: &[f64],
    projection: &ProjectionSpec,
) -> Result<GridTuning> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("grid tuning needs at least one sample".into()));
    }
    let pairs = sorted_pairs(mu_grid, beta_grid)?;
    let mut table = Vec::with_capacity(pairs.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for (mu, beta) in pairs {
        let mean = mean_final_rate(a, samples, p, iterations, mu, beta, projection)?;
        table.push((mu, beta, mean));
        if best.is_none_or(|(_, _, r)| mean.total_cmp(&r) == Ordering::Greater) {
            best = Some((mu, beta, mean));
        }
    }
    let (mu, beta, mean_rate) = best.expect("at least one pair");
    Ok(GridTuning {
        mu,
        beta,
        mean_rate,
        table,
    })
}

/// Trajectory of a line-searched run and the pair committed at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchRun {
    pub trajectory: Trajectory,
    pub chosen: Vec<(f64, f64)>,
    /// Rate of every grid candidate at every step; `None` where the rank guard fired.
    pub candidate_rates: Vec<Vec<Option<f64>>>,
}

/// PGA where each iteration commits the grid pair whose projected iterate has the highest rate.
#[allow(clippy::too_many_arguments)]
pub fn line_search_pga(
    a: &ConnectivityMatrix,
    h: &ChannelRealization,
    p: &SystemParams,
    iterations: usize,
    mu_grid: &[f64],
    beta_grid: &[f64],
    projection: &ProjectionSpec,
    init: &AnalogBeamformer,
) -> Result<LineSearchRun> {
    let pairs = sorted_pairs(mu_grid, beta_grid)?;
    let s = projection.structure;
    let n = s.support_len();
    let mut ev = evaluate(init, a, h, p, iterations > 0)?;
    let mut traj = Trajectory {
        iterates: vec![init.clone()],
        rates: vec![ev.rate],
        sparsity: vec![init.active_count()],
        flags: vec![ev.regularized],
    };
    let mut chosen = Vec::with_capacity(iterations);
    let mut candidate_rates = Vec::with_capacity(iterations);
    let mut previous = ComplexMatrix::zeros(s.total_rows(), s.total_cols());
    for j in 0..iterations {
        let current = traj.iterates[j].matrix().clone();
        let grad = ev.gradient.take().expect("gradient requested for every non-final iterate");
        let mut best: Option<(usize, AnalogBeamformer, f64)> = None;
        let mut rates = Vec::with_capacity(pairs.len());
        for (idx, &(mu, beta)) in pairs.iter().enumerate() {
            let next = pga_step(&current, &previous, &grad, &vec![mu; n], &vec![beta; n], projection, StepMode::Hard)?;
            let cand = AnalogBeamformer::new(next, s)?;
            let cev = evaluate(&cand, a, h, p, false)?;
            if cev.regularized {
                rates.push(None);
                continue;
            }
            rates.push(Some(cev.rate));
            if best.as_ref().is_none_or(|b| cev.rate > b.2) {
                best = Some((idx, cand, cev.rate));
            }
        }
        candidate_rates.push(rates);
        let need_grad = j + 1 < iterations;
        match best {
            Some((idx, cand, rate)) => {
                ev = evaluate(&cand, a, h, p, need_grad)?;
                chosen.push(pairs[idx]);
                traj.sparsity.push(cand.active_count());
                traj.iterates.push(cand);
                traj.rates.push(rate);
                traj.flags.push(false);
            }
            None => {
                let kept = traj.iterates[j].clone();
                ev = evaluate(&kept, a, h, p, need_grad)?;
                chosen.push(pairs[0]);
                traj.sparsity.push(kept.active_count());
                traj.rates.push(traj.rates[j]);
                traj.iterates.push(kept);
                traj.flags.push(true);
            }
        }
        previous = current;
    }
    Ok(LineSearchRun {
        trajectory: traj,
        chosen,
        candidate_rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_rayleigh;
    use crate::constraints::ProjectionKind;
    use crate::learning::with_initializations;
    use crate::linalg::BlockStructure;

    fn setup(n: usize) -> (BlockStructure, ConnectivityMatrix, SystemParams, Vec<TrainingSample>, ProjectionSpec) {
        let s = BlockStructure::new(2, 3, 2).unwrap();
        let d = generate_rayleigh(6, 2, 2, n, 3).unwrap();
        let samples = with_initializations(&d, s, 4);
        (
            s,
            ConnectivityMatrix::round_robin(4, 3).unwrap(),
            SystemParams::from_snr_db(0.0).unwrap(),
            samples,
            ProjectionSpec::new(ProjectionKind::UnitModulus, s).unwrap(),
        )
    }

    #[test]
    fn singleton_grid_returns_its_pair() {
        let (_, a, p, samples, proj) = setup(3);
        let t = grid_tune_fixed(&a, &samples, &p, 5, &[0.02], &[0.4], &proj).unwrap();
        assert_eq!((t.mu, t.beta), (0.02, 0.4));
        assert!(grid_tune_fixed(&a, &samples, &p, 5, &[], &[0.4], &proj).is_err());
    }

    #[test]
    fn tuned_pair_is_table_argmax() {
        let (_, a, p, samples, proj) = setup(4);
        let t = grid_tune_fixed(&a, &samples, &p, 8, &[0.1, 0.01, 0.03], &[0.5, 0.0], &proj).unwrap();
        assert_eq!(t.table.len(), 6);
        let best = t.table.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(t.mean_rate, best);
        let again = mean_final_rate(&a, &samples, &p, 8, t.mu, t.beta, &proj).unwrap();
        assert_eq!(again, t.mean_rate);
        assert!(t.table.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));

        let wider = grid_tune_fixed(&a, &samples, &p, 8, &[0.1, 0.01, 0.03, 0.3], &[0.5, 0.0, 0.9], &proj).unwrap();
        assert!(wider.mean_rate >= t.mean_rate);
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        // with a zero channel every pair has rate 0
        let (s, a, p, _, proj) = setup(1);
        let h = crate::channel::ChannelRealization::zeros(crate::channel::ChannelDims { antennas: 6, users: 2, bins: 1 });
        let samples = vec![TrainingSample {
            channel: h,
            init: crate::optimizer::init_beamformer(s, 1),
        }];
        let t = grid_tune_fixed(&a, &samples, &p, 3, &[0.3, 0.1], &[0.9, 0.5], &proj).unwrap();
        assert_eq!((t.mu, t.beta), (0.1, 0.5));
    }

    #[test]
    fn singleton_line_search_equals_fixed_run() {
        let (s, a, p, samples, proj) = setup(1);
        let smp = &samples[0];
        let ls = line_search_pga(&a, &smp.channel, &p, 12, &[0.05], &[0.6], &proj, &smp.init).unwrap();
        let fixed = run_unfolded(&scalar_hyperparameters(s, 12, 0.05, 0.6), &a, &smp.channel, &p, &proj, StepMode::Hard, &smp.init).unwrap();
        assert_eq!(ls.trajectory, fixed);
    }

    #[test]
    fn committed_rate_is_candidate_argmax() {
        let (_, a, p, samples, proj) = setup(1);
        let smp = &samples[0];
        let ls = line_search_pga(&a, &smp.channel, &p, 6, &DEFAULT_MU_GRID, &DEFAULT_BETA_GRID, &proj, &smp.init).unwrap();
        for j in 0..6 {
            let best = ls.candidate_rates[j].iter().flatten().fold(f64::NEG_INFINITY, |m, &r| m.max(r));
            assert_eq!(ls.trajectory.rates[j + 1], best);
            let rerun = crate::objective::sum_rate(&ls.trajectory.iterates[j + 1], &a, &smp.channel, &p).unwrap();
            assert_eq!(rerun, best);
        }
    }

    #[test]
    fn zero_iterations_keep_initial_point() {
        let (_, a, p, samples, proj) = setup(1);
        let smp = &samples[0];
        let ls = line_search_pga(&a, &smp.channel, &p, 0, &[0.1], &[0.0], &proj, &smp.init).unwrap();
        assert_eq!(ls.trajectory.iterates, vec![smp.init.clone()]);
        assert!(ls.chosen.is_empty());
    }
}
