//! Pivot-counting rank against singular values from nalgebra.

use attnlite::matrix::RANK_TOL;
use attnlite::oracles::verify_rank_bounds;
use attnlite::{AttentionConfig, Matrix, Rng, VariantKind};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn svd_rank(m: &Matrix, tol: f64) -> usize {
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let sv = a.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * top).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pivot_rank_matches_svd(rows in 1usize..12, cols in 1usize..12, inner in 1usize..12, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let m = Matrix::normal(rows, inner, &mut rng).matmul(&Matrix::normal(inner, cols, &mut rng)).unwrap();
        let expected = inner.min(rows).min(cols);
        prop_assert_eq!(svd_rank(&m, RANK_TOL), expected);
        prop_assert_eq!(m.numerical_rank(RANK_TOL), expected);
    }
}

#[test]
fn rank_bound_products_agree_with_svd() {
    let mut rng = Rng::new(21);
    for _ in 0..20 {
        let (ell, d_m, d_v) = (16, 16, 4);
        let v = Matrix::normal(ell, d_m, &mut rng);
        let wv = Matrix::normal(d_m, d_v, &mut rng);
        let wo = Matrix::normal(d_v, d_m, &mut rng);
        let p = v.matmul(&wv).unwrap().matmul(&wo).unwrap();
        assert_eq!(p.numerical_rank(RANK_TOL), svd_rank(&p, RANK_TOL));
        assert_eq!(svd_rank(&p, RANK_TOL), d_v);
    }
}

#[test]
fn hundred_trials_respect_bounds() {
    for (d_m, h, ell) in [(8, 2, 8), (16, 4, 12), (32, 8, 32)] {
        let cfg = AttentionConfig::new(VariantKind::Standard, d_m, h, Some(ell)).unwrap();
        let r = verify_rank_bounds(&cfg, 100, &mut Rng::new(3)).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.max_value_rank, d_m / h);
        assert_eq!(r.max_score_rank, d_m / h);
    }
}

#[test]
fn zero_and_identity() {
    assert_eq!(Matrix::zeros(3, 4).numerical_rank(RANK_TOL), 0);
    assert_eq!(Matrix::identity(5).numerical_rank(RANK_TOL), 5);
    assert_eq!(svd_rank(&Matrix::identity(5), RANK_TOL), 5);
}
