use serde::Serialize;

use crate::attention::{attend, init_weights, AttentionConfig, AttentionWeights};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::ops::{Eager, Ops};
use crate::rng::Rng;
use crate::tape::Tape;

pub const GRAD_EPS: f64 = 1e-5;

/// Denominator floor for the relative error, so that entries whose true
/// gradient is zero are compared absolutely.
pub const GRAD_REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub variant: String,
    pub seed: u64,
    pub entries: usize,
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst entry.
    pub worst: String,
}

struct Point {
    inputs: [Matrix; 3],
    weights: AttentionWeights,
}

fn loss(p: &Point, cfg: &AttentionConfig) -> Result<f64> {
    let out = attend(&mut Eager, &p.inputs[0], &p.inputs[1], &p.inputs[2], &p.weights, cfg)?;
    Ok(out.sum())
}

/// Compares reverse-mode gradients of `sum(attend(x_q, x_k, x_v))` with
/// central differences for every entry of every weight and of the three
/// inputs. Weights, including biases, are drawn at random so no slot sits at
/// a special point.
pub fn check_attention_gradients(cfg: &AttentionConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let n = cfg.ell().unwrap_or(cfg.d_m());
    let inputs = [0, 1, 2].map(|_| Matrix::normal(n, cfg.d_m(), &mut rng));
    let mut weights = init_weights(cfg, &mut rng);
    for (_, m) in weights.named_mut() {
        let noise = Matrix::normal(m.rows(), m.cols(), &mut rng).scale(0.3);
        *m = m.add(&noise)?;
    }
    let point = Point { inputs, weights };

    let mut tape = Tape::new();
    let xs = point.inputs.clone().map(|m| tape.leaf(m));
    let wv = point.weights.map(|m| tape.leaf(m.clone()));
    let out = attend(&mut tape, &xs[0], &xs[1], &xs[2], &wv, cfg)?;
    let total = tape.sum(&out)?;
    let grads = tape.backward(total)?;

    let mut analytic: Vec<(String, Matrix)> = ["x_q", "x_k", "x_v"]
        .iter()
        .zip(&xs)
        .map(|(n, v)| (n.to_string(), grads.wrt(*v).clone()))
        .collect();
    analytic.extend(wv.named().into_iter().map(|(n, v)| (n.to_string(), grads.wrt(*v).clone())));

    let mut report = GradCheckReport {
        variant: cfg.variant().to_string(),
        seed,
        entries: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for (slot, (name, grad)) in analytic.iter().enumerate() {
        for idx in 0..grad.data().len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = Point {
                    inputs: point.inputs.clone(),
                    weights: point.weights.clone(),
                };
                let target = if slot < 3 {
                    &mut p.inputs[slot]
                } else {
                    p.weights.named_mut().swap_remove(slot - 3).1
                };
                target.data_mut()[idx] += delta;
                loss(&p, cfg)
            };
            let numeric = (eval(GRAD_EPS)? - eval(-GRAD_EPS)?) / (2.0 * GRAD_EPS);
            let err = relative_error(grad.data()[idx], numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = format!("{name}[{idx}]");
            }
        }
    }
    Ok(report)
}
