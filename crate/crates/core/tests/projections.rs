mod common;

use std::f64::consts::TAU;

use common::*;
use modbf::constraints::{project_quantized, surrogate_magnitude, surrogate_phase, ProjectionKind, ProjectionSpec, SurrogateSpec};
use modbf::seeding::rng_from;
use modbf::{BlockStructure, C64};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn hard_projections_are_idempotent_over_1000_trials() {
    let s = BlockStructure::new(3, 4, 2).unwrap();
    let mut rng = rng_from(11);
    for trial in 0..1000u64 {
        let scale = [0.3, 1.0, 5.0][trial as usize % 3];
        let w = random_matrix(s.total_rows(), s.total_cols(), scale, rng.random());
        for kind in kinds() {
            let proj = ProjectionSpec::new(kind, s).unwrap();
            let once = proj.project(&w);
            assert_eq!(proj.project(&once), once, "{kind:?} trial {trial}");
        }
    }
}

#[test]
fn hard_projections_land_in_their_sets() {
    let s = BlockStructure::new(2, 5, 3).unwrap();
    for seed in 0..200 {
        let w = random_matrix(s.total_rows(), s.total_cols(), 1.2, seed);
        for kind in kinds() {
            let proj = ProjectionSpec::new(kind, s).unwrap();
            let out = proj.project(&w);
            assert!(proj.is_feasible(&out), "{kind:?} seed {seed}");
            assert!(off_block_is_zero(&out, &s));
        }
    }
}

#[test]
fn quantized_phases_are_integral_multiples() {
    let s = BlockStructure::new(1, 6, 6).unwrap();
    let w = random_matrix(6, 6, 2.0, 5);
    for levels in [2, 5, 16, 64] {
        for z in project_quantized(&w, &s, levels).as_slice() {
            let steps = z.arg().rem_euclid(TAU) * levels as f64 / TAU;
            let frac = (steps - steps.round()).abs();
            assert!(frac < 1e-12 || (levels as f64 - steps).abs() < 1e-12, "Q={levels}: {steps}");
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn surrogates_preserve_block_mask() {
    let s = BlockStructure::new(3, 2, 2).unwrap();
    let w = random_matrix(6, 6, 1.0, 8);
    let spec = SurrogateSpec::default();
    assert!(off_block_is_zero(&surrogate_magnitude(&w, &s, &spec), &s));
    assert!(off_block_is_zero(&surrogate_phase(&w, &s, 8, &spec), &s));
}

#[test]
fn surrogates_converge_to_hard_projections() {
    let sharpness = [10.0, 40.0, 160.0];
    let mag: Vec<f64> = sharpness.iter().map(|&s| magnitude_gap(s)).collect();
    assert!(mag.windows(2).all(|w| w[1] < w[0]), "magnitude gaps {mag:?}");
    assert!(mag[2] < 1e-3, "magnitude gaps {mag:?}");
    for levels in [4, 16] {
        let ph: Vec<f64> = sharpness.iter().map(|&s| phase_gap(s, levels)).collect();
        assert!(ph.windows(2).all(|w| w[1] < w[0]), "Q={levels} phase gaps {ph:?}");
        assert!(ph[2] < 1e-3, "Q={levels} phase gaps {ph:?}");
    }
}

proptest! {
    #[test]
    fn projection_properties(
        seed in any::<u64>(),
        panels in 1usize..4,
        rows in 1usize..5,
        cols in 1usize..4,
        scale in 0.01f64..10.0,
        levels in 2u32..40,
        // above 1 a second pass would zero the unit-modulus survivors
        zeta in 0.0f64..=1.0,
    ) {
        let s = BlockStructure::new(panels, rows, cols).unwrap();
        let w = random_matrix(s.total_rows(), s.total_cols(), scale, seed);
        for kind in [
            ProjectionKind::UnitModulus,
            ProjectionKind::Sparse { zeta },
            ProjectionKind::Quantized { levels },
        ] {
            let proj = ProjectionSpec::new(kind, s).unwrap();
            let once = proj.project(&w);
            prop_assert!(proj.is_feasible(&once));
            prop_assert!(off_block_is_zero(&once, &s));
            prop_assert_eq!(proj.project(&once), once.clone());
        }
    }

    #[test]
    fn surrogate_magnitudes_stay_in_unit_interval(seed in any::<u64>(), s_m in 1.0f64..200.0, zeta_m in 0.0f64..1.0) {
        let s = BlockStructure::new(2, 3, 2).unwrap();
        let w = random_matrix(6, 4, 3.0, seed);
        let spec = SurrogateSpec::new(s_m, zeta_m, 40.0).unwrap();
        for z in surrogate_magnitude(&w, &s, &spec).as_slice() {
            prop_assert!(z.norm() <= 1.0 + 1e-12);
        }
        for z in surrogate_phase(&w, &s, 8, &spec).as_slice() {
            prop_assert!(*z == C64::new(0.0, 0.0) || (z.norm() - 1.0).abs() < 1e-12);
        }
    }
}
