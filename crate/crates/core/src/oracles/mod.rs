//! Constructive embeddings between variants and numerical checks of the
//! rank bounds that motivate them.
//!
//! Slicing the `i`-th block of `d_v` columns is right-multiplication by a 0/1
//! selector, so Optimized attention is Standard attention with `W^V` fixed to
//! the selectors, Efficient is Optimized with `W^K` fixed the same way, and
//! Efficient is Super with `W^A = I`.

mod gradcheck;
mod suite;

use serde::Serialize;

pub use gradcheck::{check_attention_gradients, relative_error, GradCheckReport, GRAD_REL_FLOOR};
pub use suite::{causality_gap, run_verification, CheckResult, VerifyReport};

use crate::attention::{AttentionConfig, AttentionTensors, AttentionWeights, VariantKind};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, RANK_TOL};
use crate::rng::Rng;

/// `d_m x width` matrix with a 1 at `(block * width + j, j)`.
/// `x.matmul(&selector(..))` equals `x.slice_cols(block * width, width)`.
pub fn selector(d_m: usize, width: usize, block: usize) -> Result<Matrix> {
    if width == 0 || (block + 1) * width > d_m {
        return Err(Error::Bounds {
            op: "selector",
            detail: format!("block {block} of width {width} in {d_m} columns"),
        });
    }
    Ok(Matrix::from_fn(d_m, width, |r, c| {
        if r == block * width + c {
            1.0
        } else {
            0.0
        }
    }))
}

/// All `h` selectors side by side. This is the `d_m x d_m` identity.
pub fn selector_concat(d_m: usize, h: usize) -> Result<Matrix> {
    if h == 0 || !d_m.is_multiple_of(h) {
        return Err(Error::Config(format!("h={h} does not divide d_m={d_m}")));
    }
    let blocks: Vec<Matrix> = (0..h).map(|i| selector(d_m, d_m / h, i)).collect::<Result<_>>()?;
    Matrix::concat_cols(&blocks.iter().collect::<Vec<_>>())
}

fn expect_variant(cfg: &AttentionConfig, v: VariantKind, w: &AttentionWeights) -> Result<()> {
    if cfg.variant() != v {
        return Err(Error::Contract(format!("expected a {v} config, got {}", cfg.variant())));
    }
    w.check(cfg)
}

fn zero_bias(cfg: &AttentionConfig) -> Option<Matrix> {
    cfg.has_bias().then(|| Matrix::zeros(1, cfg.d_m()))
}

/// Standard weights computing the same function as the Optimized `w_opt`.
pub fn embed_optimized_in_standard(w_opt: &AttentionWeights, cfg: &AttentionConfig) -> Result<AttentionWeights> {
    expect_variant(cfg, VariantKind::Optimized, w_opt)?;
    Ok(AttentionTensors {
        wv: Some(selector_concat(cfg.d_m(), cfg.heads())?),
        bv: zero_bias(cfg),
        ..w_opt.clone()
    })
}

/// Optimized weights computing the same function as the Efficient `w_eff`.
pub fn embed_efficient_in_optimized(w_eff: &AttentionWeights, cfg: &AttentionConfig) -> Result<AttentionWeights> {
    expect_variant(cfg, VariantKind::Efficient, w_eff)?;
    Ok(AttentionTensors {
        wk: Some(selector_concat(cfg.d_m(), cfg.heads())?),
        bk: zero_bias(cfg),
        ..w_eff.clone()
    })
}

/// Super weights (`W^A = I`, zero alignment bias) computing the same
/// function as the Efficient `w_eff` on length-`ell` inputs.
pub fn embed_efficient_in_super(w_eff: &AttentionWeights, cfg: &AttentionConfig) -> Result<AttentionWeights> {
    expect_variant(cfg, VariantKind::Efficient, w_eff)?;
    let ell = cfg
        .ell()
        .ok_or_else(|| Error::Contract("embedding into super needs ell".into()))?;
    Ok(AttentionTensors {
        wa: Some(Matrix::identity(ell)),
        ba: cfg.has_bias().then(|| Matrix::zeros(ell, 1)),
        ..w_eff.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankViolation {
    pub trial: usize,
    pub seed: u64,
    pub quantity: &'static str,
    pub rank: usize,
    pub bound: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub trials: usize,
    pub d_v: usize,
    pub d_k: usize,
    pub max_value_rank: usize,
    pub max_score_rank: usize,
    pub violations: Vec<RankViolation>,
}

impl RankReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Draws random `V, W^V_i, W^O_i` and `Q, K, W^Q_i, W^K_i` per trial and
/// checks `rank(V W^V_i W^O_i) <= d_v` and `rank(Q W^Q_i W^K_i^T K^T) <= d_k`.
///
/// Sequences are `cfg.ell()` long (default `d_m`). Each trial draws from its
/// own seed, taken from `rng`, which is reported with any violation.
pub fn verify_rank_bounds(cfg: &AttentionConfig, trials: usize, rng: &mut Rng) -> Result<RankReport> {
    let (d_m, d_k, d_v) = (cfg.d_m(), cfg.d_k(), cfg.d_v());
    let ell = cfg.ell().unwrap_or(d_m);
    let mut report = RankReport {
        trials,
        d_v,
        d_k,
        max_value_rank: 0,
        max_score_rank: 0,
        violations: Vec::new(),
    };
    for trial in 0..trials {
        let seed = rng.next_u64();
        let mut r = Rng::new(seed);
        let v = Matrix::normal(ell, d_m, &mut r);
        let wv = Matrix::normal(d_m, d_v, &mut r);
        let wo = Matrix::normal(d_v, d_m, &mut r);
        let value_rank = v.matmul(&wv)?.matmul(&wo)?.numerical_rank(RANK_TOL);

        let q = Matrix::normal(ell, d_m, &mut r);
        let k = Matrix::normal(ell, d_m, &mut r);
        let wq = Matrix::normal(d_m, d_k, &mut r);
        let wk = Matrix::normal(d_m, d_k, &mut r);
        let scores = q.matmul(&wq)?.matmul(&wk.transpose())?.matmul(&k.transpose())?;
        let score_rank = scores.numerical_rank(RANK_TOL);

        report.max_value_rank = report.max_value_rank.max(value_rank);
        report.max_score_rank = report.max_score_rank.max(score_rank);
        if value_rank > d_v {
            report.violations.push(RankViolation { trial, seed, quantity: "value", rank: value_rank, bound: d_v });
        }
        if score_rank > d_k {
            report.violations.push(RankViolation { trial, seed, quantity: "score", rank: score_rank, bound: d_k });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{forward, init_weights};
    use crate::cost::param_count;

    fn cfg(v: VariantKind, d_m: usize, h: usize, ell: Option<usize>) -> AttentionConfig {
        AttentionConfig::new(v, d_m, h, ell).unwrap()
    }

    #[test]
    fn selector_shape_and_slicing_is_exact() {
        let s = selector(8, 4, 1).unwrap();
        assert_eq!(s.sum(), 4.0);
        for c in 0..4 {
            let col: Vec<f64> = (0..8).map(|r| s.get(r, c)).collect();
            assert_eq!(col.iter().filter(|&&x| x == 1.0).count(), 1);
        }
        let x = Matrix::normal(5, 8, &mut Rng::new(0));
        assert_eq!(x.matmul(&s).unwrap(), x.slice_cols(4, 4).unwrap());
        assert!(selector(8, 4, 2).is_err());
        assert_eq!(selector_concat(6, 3).unwrap(), Matrix::identity(6));
    }

    #[test]
    fn one_head_embeddings_use_identity() {
        let c = cfg(VariantKind::Optimized, 5, 1, None);
        let w = init_weights(&c, &mut Rng::new(1));
        assert_eq!(embed_optimized_in_standard(&w, &c).unwrap().wv.unwrap(), Matrix::identity(5));
        let c = cfg(VariantKind::Efficient, 5, 1, None);
        let w = init_weights(&c, &mut Rng::new(1));
        assert_eq!(embed_efficient_in_optimized(&w, &c).unwrap().wk.unwrap(), Matrix::identity(5));
    }

    #[test]
    fn embeddings_preserve_outputs() {
        let opt = cfg(VariantKind::Optimized, 8, 2, Some(6));
        let eff = opt.with_variant(VariantKind::Efficient).unwrap();
        let std_c = opt.with_variant(VariantKind::Standard).unwrap();
        let sup = opt.with_variant(VariantKind::Super).unwrap();
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let xq = Matrix::normal(6, 8, &mut rng);
            let xk = Matrix::normal(6, 8, &mut rng);
            let xv = Matrix::normal(6, 8, &mut rng);

            let w_opt = init_weights(&opt, &mut rng);
            let w_std = embed_optimized_in_standard(&w_opt, &opt).unwrap();
            let a = forward(&xq, &xk, &xv, &w_opt, &opt).unwrap();
            let b = forward(&xq, &xk, &xv, &w_std, &std_c).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-10);

            let w_eff = init_weights(&eff, &mut rng);
            let w_opt2 = embed_efficient_in_optimized(&w_eff, &eff).unwrap();
            let w_std2 = embed_optimized_in_standard(&w_opt2, &opt).unwrap();
            let e = forward(&xq, &xk, &xv, &w_eff, &eff).unwrap();
            assert!(e.max_abs_diff(&forward(&xq, &xk, &xv, &w_opt2, &opt).unwrap()) <= 1e-10);
            assert!(e.max_abs_diff(&forward(&xq, &xk, &xv, &w_std2, &std_c).unwrap()) <= 1e-10);

            let w_sup = embed_efficient_in_super(&w_eff, &eff).unwrap();
            assert!(e.max_abs_diff(&forward(&xq, &xk, &xv, &w_sup, &sup).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn embedding_param_differences() {
        let opt = cfg(VariantKind::Optimized, 8, 2, Some(6));
        let w_opt = init_weights(&opt, &mut Rng::new(2));
        let w_std = embed_optimized_in_standard(&w_opt, &opt).unwrap();
        assert_eq!(w_std.param_count() - w_opt.param_count(), 8 * 8 + 8);

        let eff = opt.with_variant(VariantKind::Efficient).unwrap();
        let w_eff = init_weights(&eff, &mut Rng::new(3));
        let w_sup = embed_efficient_in_super(&w_eff, &eff).unwrap();
        assert_eq!(w_sup.param_count() - w_eff.param_count(), 36 + 6);
        let sup = opt.with_variant(VariantKind::Super).unwrap();
        assert_eq!(param_count(&sup).unwrap(), w_sup.param_count() as u64);
    }

    #[test]
    fn causal_super_embedding_satisfies_constraint() {
        let eff = cfg(VariantKind::Efficient, 8, 2, Some(6)).causal(true);
        let w = embed_efficient_in_super(&init_weights(&eff, &mut Rng::new(4)), &eff).unwrap();
        w.check(&eff.with_variant(VariantKind::Super).unwrap()).unwrap();
    }

    #[test]
    fn embedding_rejects_wrong_source() {
        let c = cfg(VariantKind::Standard, 8, 2, None);
        let w = init_weights(&c, &mut Rng::new(5));
        assert!(embed_optimized_in_standard(&w, &c).is_err());
        let eff = cfg(VariantKind::Efficient, 8, 2, None);
        let w = init_weights(&eff, &mut Rng::new(5));
        assert!(embed_efficient_in_super(&w, &eff).is_err());
    }

    #[test]
    fn rank_bounds_examples() {
        let r = verify_rank_bounds(&cfg(VariantKind::Standard, 8, 2, Some(8)), 20, &mut Rng::new(6)).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_value_rank, 4);
        assert_eq!(r.max_score_rank, 4);

        let r = verify_rank_bounds(&cfg(VariantKind::Standard, 8, 1, Some(8)), 5, &mut Rng::new(7)).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_value_rank, 8);

        let r = verify_rank_bounds(&cfg(VariantKind::Standard, 8, 2, Some(2)), 5, &mut Rng::new(8)).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_value_rank, 2);
    }
}
