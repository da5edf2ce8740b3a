//! Parameter counts and FLOP accounting per attention variant.
//!
//! Two FLOP models live here. [`flops_closed_form`] is the reference closed form
//! `C_attn * ell * d_m + 15 * h * ell^2` for a forward plus backward pass,
//! kept as stated. Its first term is linear in `d_m`, while a real projection
//! costs `O(ell * d_m^2)`. [`flops_exact_forward`] counts what
//! [`attend`](crate::attention::attend) actually executes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::attention::{AttentionConfig, VariantKind};
use crate::error::{Error, Result};

/// Variant constant of the closed-form FLOP model.
pub fn c_attn(variant: VariantKind) -> u64 {
    match variant {
        VariantKind::Standard => 15,
        VariantKind::Optimized | VariantKind::Super => 12,
        VariantKind::Efficient => 9,
    }
}

/// Closed-form parameter count of one attention layer.
///
/// With bias: standard `4(d^2+d)`, optimized `3(d^2+d)`, efficient `2(d^2+d)`,
/// super `2(d^2+d) + ell^2 + ell`. Without bias the linear terms drop.
pub fn param_count(cfg: &AttentionConfig) -> Result<u64> {
    let d = cfg.d_m() as u64;
    let proj = d * d + if cfg.has_bias() { d } else { 0 };
    Ok(match cfg.variant() {
        VariantKind::Standard => 4 * proj,
        VariantKind::Optimized => 3 * proj,
        VariantKind::Efficient => 2 * proj,
        VariantKind::Super => {
            let ell = cfg
                .ell()
                .ok_or_else(|| Error::Contract("super parameter count needs ell".into()))? as u64;
            2 * proj + ell * ell + if cfg.has_bias() { ell } else { 0 }
        }
    })
}

fn require_ell(cfg: &AttentionConfig, what: &str) -> Result<u64> {
    cfg.ell()
        .map(|l| l as u64)
        .ok_or_else(|| Error::Contract(format!("{what} needs ell")))
}

/// The closed-form forward+backward FLOP model, evaluated as written.
pub fn flops_closed_form(cfg: &AttentionConfig) -> Result<u64> {
    let ell = require_ell(cfg, "flops_closed_form")?;
    Ok(closed_form(cfg.variant(), ell, cfg.d_m() as u64, cfg.heads() as u64))
}

fn closed_form(variant: VariantKind, ell: u64, d_m: u64, h: u64) -> u64 {
    c_attn(variant) * ell * d_m + 15 * h * ell * ell
}

/// Term-by-term forward cost, counting `2mkn` per `m x k` by `k x n` product
/// and `5 * rows * cols` per row softmax. Bias adds and score scaling are
/// not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ForwardCost {
    /// `2 ell d_m d_k` per head for each of queries, keys, values that is projected.
    pub projections: u64,
    /// `2 ell^2 d_k` per head.
    pub scores: u64,
    /// `5 ell^2` per head.
    pub softmax: u64,
    /// `2 ell^2 d_v` per head.
    pub score_value: u64,
    /// `2 ell^2 d_v` per head, super only.
    pub alignment: u64,
    /// `2 ell d_m^2`.
    pub output: u64,
}

impl ForwardCost {
    pub fn total(&self) -> u64 {
        self.projections + self.scores + self.softmax + self.score_value + self.alignment + self.output
    }
}

pub fn forward_cost(cfg: &AttentionConfig) -> Result<ForwardCost> {
    let ell = require_ell(cfg, "flops_exact_forward")?;
    let (d, h) = (cfg.d_m() as u64, cfg.heads() as u64);
    let (dk, dv) = (cfg.d_k() as u64, cfg.d_v() as u64);
    let v = cfg.variant();
    let projected = 1 + u64::from(v.projects_keys()) + u64::from(v.projects_values());
    Ok(ForwardCost {
        projections: projected * h * 2 * ell * d * dk,
        scores: h * 2 * ell * ell * dk,
        softmax: h * 5 * ell * ell,
        score_value: h * 2 * ell * ell * dv,
        alignment: if v.has_alignment() { h * 2 * ell * ell * dv } else { 0 },
        output: 2 * ell * d * d,
    })
}

pub fn flops_exact_forward(cfg: &AttentionConfig) -> Result<u64> {
    Ok(forward_cost(cfg)?.total())
}

/// Forward+backward estimate as three forwards. An approximation: the
/// backward of a product is two products, softmax backward is not 10 FLOPs
/// per entry exactly.
pub fn flops_exact_train(cfg: &AttentionConfig) -> Result<u64> {
    Ok(3 * flops_exact_forward(cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub variant: VariantKind,
    pub d_m: usize,
    pub h: usize,
    pub ell: Option<usize>,
    pub bias: bool,
    pub params: u64,
    pub flops_closed_form: Option<u64>,
    pub flops_exact_forward: Option<u64>,
    pub c_attn: u64,
}

pub fn cost_report(cfg: &AttentionConfig) -> Result<CostReport> {
    let with_ell = cfg.ell().is_some();
    Ok(CostReport {
        variant: cfg.variant(),
        d_m: cfg.d_m(),
        h: cfg.heads(),
        ell: cfg.ell(),
        bias: cfg.has_bias(),
        params: param_count(cfg)?,
        flops_closed_form: if with_ell { Some(flops_closed_form(cfg)?) } else { None },
        flops_exact_forward: if with_ell { Some(flops_exact_forward(cfg)?) } else { None },
        c_attn: c_attn(cfg.variant()),
    })
}

/// `d(flops_closed_form)/d(d_m) = C_attn * ell`, confirmed by a two-point difference.
pub fn slope_check(variant: VariantKind, ell: usize) -> Result<u64> {
    if ell == 0 {
        return Err(Error::Contract("slope_check needs ell > 0".into()));
    }
    let ell = ell as u64;
    let closed = c_attn(variant) * ell;
    let (lo, hi) = (64, 1088);
    let diff = closed_form(variant, ell, hi, 1) - closed_form(variant, ell, lo, 1);
    if diff != closed * (hi - lo) {
        return Err(Error::Contract(format!(
            "flops_closed_form is not linear in d_m: slope {} vs {closed}",
            diff / (hi - lo)
        )));
    }
    Ok(closed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCell {
    pub ell: usize,
    pub d_m: usize,
    pub h: usize,
    pub flops_a: u64,
    pub flops_b: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioGrid {
    pub variant_a: VariantKind,
    pub variant_b: VariantKind,
    pub cells: Vec<RatioCell>,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

impl RatioGrid {
    /// Columns `ell,d_m,h,flops_a,flops_b,ratio`, one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ell,d_m,h,flops_a,flops_b,ratio\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{},{:.6}", c.ell, c.d_m, c.h, c.flops_a, c.flops_b, c.ratio);
        }
        out
    }
}

/// `flops_closed_form(a) / flops_closed_form(b)` over every `(ell, d_m)` pair.
///
/// The grid uses the closed form directly, so `d_m` need not be a
/// multiple of `h`.
pub fn flops_ratio_grid(
    a: VariantKind,
    b: VariantKind,
    ells: &[usize],
    dms: &[usize],
    h: usize,
) -> Result<RatioGrid> {
    if ells.is_empty() || dms.is_empty() || h == 0 {
        return Err(Error::Contract("ratio grid needs non-empty ranges and h > 0".into()));
    }
    let mut cells = Vec::with_capacity(ells.len() * dms.len());
    for &ell in ells {
        for &d_m in dms {
            if ell == 0 || d_m == 0 {
                return Err(Error::Contract("grid dimensions must be positive".into()));
            }
            let fa = closed_form(a, ell as u64, d_m as u64, h as u64);
            let fb = closed_form(b, ell as u64, d_m as u64, h as u64);
            cells.push(RatioCell {
                ell,
                d_m,
                h,
                flops_a: fa,
                flops_b: fb,
                ratio: fa as f64 / fb as f64,
            });
        }
    }
    let max_ratio = cells.iter().map(|c| c.ratio).fold(f64::MIN, f64::max);
    let mean_ratio = cells.iter().map(|c| c.ratio).sum::<f64>() / cells.len() as f64;
    Ok(RatioGrid {
        variant_a: a,
        variant_b: b,
        cells,
        max_ratio,
        mean_ratio,
    })
}

/// Powers of two from `lo` to `hi` inclusive.
pub fn pow2_range(lo: usize, hi: usize) -> Vec<usize> {
    std::iter::successors(Some(lo.max(1)), |&x| x.checked_mul(2))
        .take_while(|&x| x <= hi)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::attend;
    use crate::matrix::Matrix;
    use crate::ops::{Counting, Eager};
    use crate::rng::Rng;
    use crate::attention::init_weights;

    fn cfg(v: VariantKind, d_m: usize, h: usize, ell: Option<usize>) -> AttentionConfig {
        AttentionConfig::new(v, d_m, h, ell).unwrap()
    }

    #[test]
    fn parameter_goldens() {
        use VariantKind::*;
        assert_eq!(param_count(&cfg(Standard, 32, 4, None)).unwrap(), 4_224);
        assert_eq!(param_count(&cfg(Optimized, 32, 4, None)).unwrap(), 3_168);
        assert_eq!(param_count(&cfg(Efficient, 32, 4, None)).unwrap(), 2_112);
        assert_eq!(param_count(&cfg(Super, 32, 4, Some(32))).unwrap(), 3_168);
        assert_eq!(param_count(&cfg(Efficient, 1024, 4, None)).unwrap(), 2_099_200);
        assert_eq!(param_count(&cfg(Super, 128, 4, Some(64))).unwrap(), 37_184);
        assert_eq!(param_count(&cfg(Standard, 1024, 4, None)).unwrap(), 4_198_400);
    }

    #[test]
    fn closed_forms_agree_with_materialised_weights() {
        for v in VariantKind::ALL {
            for bias in [true, false] {
                let c = cfg(v, 12, 3, Some(5)).bias(bias);
                let w = init_weights(&c, &mut Rng::new(0));
                assert_eq!(param_count(&c).unwrap(), w.param_count() as u64, "{v} bias={bias}");
            }
        }
    }

    #[test]
    fn remark_differences() {
        let d = 48u64;
        let p = |v| param_count(&cfg(v, 48, 4, Some(16))).unwrap();
        assert_eq!(p(VariantKind::Standard) - p(VariantKind::Optimized), d * d + d);
        assert_eq!(p(VariantKind::Standard) - p(VariantKind::Efficient), 2 * (d * d + d));
        assert_eq!(p(VariantKind::Super) - p(VariantKind::Efficient), 16 * 16 + 16);
    }

    #[test]
    fn closed_form_flops_hand_values() {
        assert_eq!(flops_closed_form(&cfg(VariantKind::Standard, 128, 1, Some(64))).unwrap(), 184_320);
        assert_eq!(flops_closed_form(&cfg(VariantKind::Efficient, 128, 1, Some(64))).unwrap(), 135_168);
        assert_eq!(
            flops_closed_form(&cfg(VariantKind::Optimized, 128, 2, Some(64))).unwrap(),
            flops_closed_form(&cfg(VariantKind::Super, 128, 2, Some(64))).unwrap()
        );
        assert!(flops_closed_form(&cfg(VariantKind::Standard, 128, 1, None)).is_err());
    }

    #[test]
    fn slopes() {
        assert_eq!(slope_check(VariantKind::Efficient, 64).unwrap(), 576);
        assert_eq!(slope_check(VariantKind::Optimized, 64).unwrap(), 768);
        assert_eq!(slope_check(VariantKind::Standard, 64).unwrap(), 960);
        assert!(slope_check(VariantKind::Standard, 0).is_err());
    }

    #[test]
    fn exact_forward_unit_sequence() {
        let c = cfg(VariantKind::Efficient, 4, 1, Some(1));
        let fc = forward_cost(&c).unwrap();
        assert_eq!(fc.scores, 2 * 4);
        assert_eq!(fc.softmax, 5);
    }

    #[test]
    fn exact_forward_differences() {
        let (ell, d) = (10u64, 16u64);
        let f = |v| flops_exact_forward(&cfg(v, 16, 4, Some(10))).unwrap();
        assert_eq!(f(VariantKind::Standard) - f(VariantKind::Efficient), 2 * (2 * ell * d * d));
        // h value projections of ell x d_m by d_m x d_v each
        assert_eq!(f(VariantKind::Standard) - f(VariantKind::Optimized), 4 * 2 * ell * d * (d / 4));
    }

    #[test]
    fn exact_forward_matches_instrumented_execution() {
        let mut rng = Rng::new(77);
        for _ in 0..5 {
            let h = 1 + rng.index(4);
            let d_m = h * (1 + rng.index(6));
            let ell = 1 + rng.index(9);
            for v in VariantKind::ALL {
                let c = cfg(v, d_m, h, Some(ell)).causal(rng.bernoulli(0.5));
                let w = init_weights(&c, &mut rng);
                let x = Matrix::normal(ell, d_m, &mut rng);
                let mut counter = Counting::new(Eager);
                attend(&mut counter, &x, &x, &x, &w, &c).unwrap();
                assert_eq!(counter.flops, flops_exact_forward(&c).unwrap(), "{v} d_m={d_m} h={h} ell={ell}");
            }
        }
    }

    #[test]
    fn ratio_grid_properties() {
        let r = pow2_range(16, 4096);
        assert_eq!(r.len(), 9);
        let same = flops_ratio_grid(VariantKind::Super, VariantKind::Super, &r, &r, 2).unwrap();
        assert!(same.cells.iter().all(|c| c.ratio == 1.0));

        let g = flops_ratio_grid(VariantKind::Standard, VariantKind::Efficient, &r, &r, 1).unwrap();
        assert!(g.max_ratio < 15.0 / 9.0);
        assert!(g.max_ratio > 1.6);
        let csv = g.to_csv();
        assert!(csv.starts_with("ell,d_m,h,flops_a,flops_b,ratio\n"));
        assert_eq!(csv.lines().count(), 1 + 81);

        // more heads pushes the ratio towards one, monotonically
        let mut last = f64::INFINITY;
        for h in [1, 2, 4, 8, 64, 1024, 1 << 20] {
            let cell = &flops_ratio_grid(VariantKind::Standard, VariantKind::Efficient, &[64], &[512], h)
                .unwrap()
                .cells[0];
            assert!(cell.ratio < last && cell.ratio > 1.0);
            last = cell.ratio;
        }
        assert!(last < 1.001);
        assert!(flops_ratio_grid(VariantKind::Standard, VariantKind::Efficient, &[], &r, 1).is_err());
    }

    #[test]
    fn report_fields() {
        let rep = cost_report(&cfg(VariantKind::Super, 128, 4, Some(64))).unwrap();
        assert_eq!(rep.params, 37_184);
        assert_eq!(rep.c_attn, 12);
        let no_ell = cost_report(&cfg(VariantKind::Standard, 1024, 4, None)).unwrap();
        assert_eq!(no_ell.flops_closed_form, None);
    }
}
