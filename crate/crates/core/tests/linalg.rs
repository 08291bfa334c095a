mod common;

use common::{from_dense, random_matrix, to_dense};
use modbf::linalg::{blkdiag_compose, hermitian_eigenvalues, kronecker, Cholesky};
use modbf::{BlockStructure, ComplexMatrix, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// `X^H X + n I`, comfortably positive definite.
fn hpd(n: usize, seed: u64) -> ComplexMatrix {
    let x = random_matrix(n + 2, n, 1.0, seed);
    let mut m = x.adjoint_matmul(&x).unwrap();
    for i in 0..n {
        m[(i, i)] += C64::new(n as f64 * 0.1, 0.0);
    }
    m
}

fn close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b) <= tol
}

proptest! {
    #[test]
    fn products_match_nalgebra(seed in any::<u64>(), r in 1usize..7, k in 1usize..7, c in 1usize..7) {
        let a = random_matrix(r, k, 2.0, seed);
        let b = random_matrix(k, c, 2.0, seed ^ 1);
        let reference = from_dense(&(to_dense(&a) * to_dense(&b)));
        prop_assert!(close(&a.matmul(&b).unwrap(), &reference, 1e-12));

        let a2 = random_matrix(k, r, 2.0, seed ^ 2);
        prop_assert!(close(&a2.adjoint_matmul(&b).unwrap(), &a2.adjoint().matmul(&b).unwrap(), 1e-13));
        let b2 = random_matrix(c, k, 2.0, seed ^ 3);
        prop_assert!(close(&a.matmul_adjoint(&b2).unwrap(), &a.matmul(&b2.adjoint()).unwrap(), 1e-13));
    }

    #[test]
    fn mismatched_products_are_rejected(r in 1usize..5, k in 1usize..5) {
        let a = ComplexMatrix::zeros(r, k);
        let b = ComplexMatrix::zeros(k + 1, 2);
        prop_assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn cholesky_reconstructs_and_solves(seed in any::<u64>(), n in 1usize..8, c in 1usize..4) {
        let m = hpd(n, seed);
        let ch = Cholesky::new(&m).unwrap();
        let l = ch.factor();
        prop_assert!(close(&l.matmul_adjoint(l).unwrap(), &m, 1e-10));

        let b = random_matrix(n, c, 1.0, seed ^ 7);
        let x = ch.solve(&b).unwrap();
        prop_assert!(close(&m.matmul(&x).unwrap(), &b, 1e-9));
        prop_assert!(close(&ch.inverse().matmul(&m).unwrap(), &ComplexMatrix::identity(n), 1e-9));

        let det = to_dense(&m).determinant();
        prop_assert!((ch.ln_det() - det.re.ln()).abs() <= 1e-9 * det.re.ln().abs().max(1.0));
    }

    #[test]
    fn eigenvalues_match_nalgebra(seed in any::<u64>(), n in 1usize..8) {
        let m = hpd(n, seed);
        let ours = hermitian_eigenvalues(&m).unwrap();
        let mut theirs: Vec<f64> = to_dense(&m).symmetric_eigenvalues().iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        let scale = theirs[n - 1];
        prop_assert!(ours.windows(2).all(|w| w[0] <= w[1]));
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-10 * scale, "{:?} vs {:?}", ours, theirs);
        }
        let trace: f64 = ours.iter().sum();
        prop_assert!((trace - m.trace().re).abs() <= 1e-10 * scale * n as f64);
    }

    #[test]
    fn block_composition_round_trips(seed in any::<u64>(), panels in 1usize..4, r in 1usize..4, c in 1usize..4) {
        let s = BlockStructure::new(panels, r, c).unwrap();
        let w = random_matrix(s.total_rows(), s.total_cols(), 1.0, seed).masked(&s);
        let blocks = w.extract_blocks(&s).unwrap();
        prop_assert_eq!(blocks.len(), panels);
        prop_assert_eq!(blkdiag_compose(&blocks, &s).unwrap(), w);
    }

    #[test]
    fn kronecker_mixed_product(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        // (A ⊗ B)(C ⊗ D) = AC ⊗ BD
        let (a, c) = (random_matrix(n, n, 1.0, seed), random_matrix(n, n, 1.0, seed ^ 1));
        let (b, d) = (random_matrix(m, m, 1.0, seed ^ 2), random_matrix(m, m, 1.0, seed ^ 3));
        let left = kronecker(&a, &b).matmul(&kronecker(&c, &d)).unwrap();
        let right = kronecker(&a.matmul(&c).unwrap(), &b.matmul(&d).unwrap());
        prop_assert!(close(&left, &right, 1e-12));
    }
}

#[test]
fn singular_matrix_fails_cholesky() {
    let v = random_matrix(4, 1, 1.0, 3);
    let rank_one = v.matmul_adjoint(&v).unwrap();
    assert!(Cholesky::new(&rank_one).is_err());
    let dense = DMatrix::<C64>::identity(3, 3);
    assert_eq!(from_dense(&dense), ComplexMatrix::identity(3));
}
