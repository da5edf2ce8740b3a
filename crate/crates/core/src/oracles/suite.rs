use serde::Serialize;

use super::{
    check_attention_gradients, embed_efficient_in_optimized, embed_efficient_in_super, embed_optimized_in_standard,
    selector, verify_rank_bounds,
};
use crate::attention::{
    forward, forward_self, init_weights, project_causal, AttentionConfig, AttentionWeights, VariantKind,
};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng::{Rng, ALGORITHM};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Output of [`run_verification`]. Contains no timings, so equal seeds give
/// equal reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub rng: &'static str,
    pub trials: usize,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Largest change in output rows `0..t` of causal self-attention when rows
/// `t..` of the input are redrawn, over every split point `t`.
pub fn causality_gap(cfg: &AttentionConfig, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let n = cfg.ell().unwrap_or(cfg.d_m());
    let mut w = init_weights(cfg, &mut rng);
    for (_, m) in w.named_mut() {
        *m = m.add(&Matrix::normal(m.rows(), m.cols(), &mut rng).scale(0.3))?;
    }
    if cfg.constrains_alignment() {
        w = project_causal(&w)?;
    }
    let x = Matrix::normal(n, cfg.d_m(), &mut rng);
    let base = forward_self(&x, &w, cfg)?;
    let mut gap = 0.0f64;
    for t in 1..n {
        let mut y = x.clone();
        for r in t..n {
            for c in 0..cfg.d_m() {
                y.set(r, c, rng.normal() * 3.0);
            }
        }
        let out = forward_self(&y, &w, cfg)?;
        gap = gap.max(out.slice_rows(0, t)?.max_abs_diff(&base.slice_rows(0, t)?));
    }
    Ok(gap)
}

fn threshold_check(name: String, metric: f64, threshold: f64, detail: String) -> CheckResult {
    CheckResult { name, passed: metric <= threshold, metric, threshold, detail }
}

fn selector_checks(rng: &mut Rng) -> Result<CheckResult> {
    let mut mismatches = 0usize;
    for (d_m, h) in [(8, 2), (32, 4), (12, 3)] {
        let width = d_m / h;
        let x = Matrix::normal(7, d_m, rng);
        for block in 0..h {
            if x.matmul(&selector(d_m, width, block)?)? != x.slice_cols(block * width, width)? {
                mismatches += 1;
            }
        }
    }
    Ok(threshold_check("selector_is_slicing".into(), mismatches as f64, 0.0, "bitwise".into()))
}

fn embedding_checks(rng: &mut Rng, seeds: usize) -> Result<Vec<CheckResult>> {
    let shapes = [(6, 8, 2), (16, 32, 4)];
    let mut worst = [0.0f64; 4];
    for &(ell, d_m, h) in &shapes {
        let opt = AttentionConfig::new(VariantKind::Optimized, d_m, h, Some(ell))?;
        let eff = opt.with_variant(VariantKind::Efficient)?;
        let std_c = opt.with_variant(VariantKind::Standard)?;
        let sup = opt.with_variant(VariantKind::Super)?;
        for _ in 0..seeds {
            let mut r = Rng::new(rng.next_u64());
            let xs: Vec<Matrix> = (0..3).map(|_| Matrix::normal(ell, d_m, &mut r)).collect();
            let run = |w: &AttentionWeights, c: &AttentionConfig| forward(&xs[0], &xs[1], &xs[2], w, c);

            let w_opt = init_weights(&opt, &mut r);
            let d = run(&w_opt, &opt)?.max_abs_diff(&run(&embed_optimized_in_standard(&w_opt, &opt)?, &std_c)?);
            worst[0] = worst[0].max(d);

            let w_eff = init_weights(&eff, &mut r);
            let e = run(&w_eff, &eff)?;
            let w_eo = embed_efficient_in_optimized(&w_eff, &eff)?;
            worst[1] = worst[1].max(e.max_abs_diff(&run(&w_eo, &opt)?));
            worst[2] = worst[2].max(e.max_abs_diff(&run(&embed_efficient_in_super(&w_eff, &eff)?, &sup)?));
            let w_es = embed_optimized_in_standard(&w_eo, &opt)?;
            worst[3] = worst[3].max(e.max_abs_diff(&run(&w_es, &std_c)?));
        }
    }
    let detail = format!("{seeds} seeds x (ell,d_m,h) in {shapes:?}");
    Ok([
        ("embedding/optimized_in_standard", 1e-10),
        ("embedding/efficient_in_optimized", 1e-10),
        ("embedding/efficient_in_super", 1e-12),
        ("embedding/efficient_in_standard", 1e-10),
    ]
    .iter()
    .zip(worst)
    .map(|(&(name, tol), w)| threshold_check(name.into(), w, tol, detail.clone()))
    .collect())
}

fn gradient_checks(rng: &mut Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let cases = VariantKind::ALL.iter().map(|&v| (v, false)).chain([(VariantKind::Super, true)]);
    for (v, causal) in cases {
        let cfg = AttentionConfig::new(v, 8, 2, Some(5))?.causal(causal);
        let mut worst = 0.0f64;
        let mut entries = 0;
        let mut at = String::new();
        for _ in 0..3 {
            let r = check_attention_gradients(&cfg, rng.next_u64())?;
            entries += r.entries;
            if r.max_rel_error >= worst {
                worst = r.max_rel_error;
                at = format!("seed {} {}", r.seed, r.worst);
            }
        }
        let name = if causal { format!("gradients/{v}-causal") } else { format!("gradients/{v}") };
        out.push(CheckResult {
            name,
            passed: worst < 1e-6,
            metric: worst,
            threshold: 1e-6,
            detail: format!("{entries} entries, worst at {at}"),
        });
    }
    Ok(out)
}

fn rank_checks(rng: &mut Rng, trials: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (d_m, h, ell) in [(8, 2, 8), (32, 4, 32)] {
        let cfg = AttentionConfig::new(VariantKind::Standard, d_m, h, Some(ell))?;
        let r = verify_rank_bounds(&cfg, trials, rng)?;
        let detail = match r.violations.first() {
            None => format!("max value rank {} <= {}, max score rank {} <= {}", r.max_value_rank, r.d_v, r.max_score_rank, r.d_k),
            Some(v) => format!("{} rank {} > {} at seed {}", v.quantity, v.rank, v.bound, v.seed),
        };
        out.push(threshold_check(format!("rank_bounds/d_m={d_m},h={h}"), r.violations.len() as f64, 0.0, detail));
    }
    Ok(out)
}

fn causality_checks(rng: &mut Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for v in VariantKind::ALL {
        let cfg = AttentionConfig::new(v, 8, 2, Some(8))?.causal(true);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            worst = worst.max(causality_gap(&cfg, rng.next_u64())?);
        }
        out.push(threshold_check(format!("causality/{v}"), worst, 1e-12, "10 seeds, every split point".into()));
    }
    Ok(out)
}

/// Runs the selector, embedding, gradient, rank-bound and causality checks.
/// `trials` is the number of random draws per rank-bound configuration.
pub fn run_verification(seed: u64, trials: usize) -> Result<VerifyReport> {
    let mut rng = Rng::new(seed);
    let mut checks = vec![selector_checks(&mut Rng::new(rng.next_u64()))?];
    checks.extend(embedding_checks(&mut Rng::new(rng.next_u64()), 20)?);
    checks.extend(gradient_checks(&mut Rng::new(rng.next_u64()))?);
    checks.extend(rank_checks(&mut Rng::new(rng.next_u64()), trials)?);
    checks.extend(causality_checks(&mut Rng::new(rng.next_u64()))?);
    Ok(VerifyReport {
        seed,
        rng: ALGORITHM,
        trials,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
