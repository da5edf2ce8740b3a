//! Single-threaded forward latency of each attention variant.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::attention::{forward_self, init_weights, AttentionConfig, VariantKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{Rng, ALGORITHM};

pub const MIN_ITERS: usize = 30;
pub const MIN_WARMUP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub variant: VariantKind,
    pub d_m: usize,
    pub h: usize,
    pub ell: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    /// Median over the Standard median for the same shape. Filled in by
    /// [`bench_suite`]; always 1.0 for Standard.
    pub relative_to_standard: Option<f64>,
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Times `forward_self` on a fixed random `ell x d_m` input. Inputs and
/// weights are built before the clock starts; a checksum of every output is
/// passed to `black_box`.
pub fn bench_forward(cfg: &AttentionConfig, iters: usize, warmup: usize, rng: &mut Rng) -> Result<BenchResult> {
    if iters < MIN_ITERS || warmup < MIN_WARMUP {
        return Err(Error::Config(format!(
            "bench needs iters >= {MIN_ITERS} and warmup >= {MIN_WARMUP}, got {iters} and {warmup}"
        )));
    }
    let ell = cfg
        .ell()
        .ok_or_else(|| Error::Contract("bench needs ell".into()))?;
    let x = Matrix::normal(ell, cfg.d_m(), rng);
    let w = init_weights(cfg, rng);
    let mut checksum = 0.0;
    for _ in 0..warmup {
        checksum += forward_self(black_box(&x), black_box(&w), cfg)?.get(0, 0);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let y = forward_self(black_box(&x), black_box(&w), cfg)?;
        checksum += y.get(0, 0);
        samples.push(start.elapsed().as_nanos() as u64);
    }
    black_box(checksum);
    samples.sort_unstable();
    Ok(BenchResult {
        variant: cfg.variant(),
        d_m: cfg.d_m(),
        h: cfg.heads(),
        ell,
        warmup_iters: warmup,
        measured_iters: iters,
        median_ns: percentile(&samples, 0.5),
        p10_ns: percentile(&samples, 0.1),
        p90_ns: percentile(&samples, 0.9),
        relative_to_standard: (cfg.variant() == VariantKind::Standard).then_some(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSuite {
    pub seed: u64,
    pub cpu: String,
    pub threads: usize,
    pub results: Vec<BenchResult>,
}

pub fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

/// Benchmarks all four variants at every shape in `shapes`, serially.
/// Each variant gets the same input and the same shared weights.
pub fn bench_suite(shapes: &[AttentionConfig], iters: usize, warmup: usize, seed: u64) -> Result<BenchSuite> {
    let mut results = Vec::new();
    for shape in shapes {
        let mut rows = Vec::new();
        for v in VariantKind::ALL {
            let cfg = shape.with_variant(v)?;
            rows.push(bench_forward(&cfg, iters, warmup, &mut Rng::new(seed))?);
        }
        let base = rows[0].median_ns as f64;
        for r in &mut rows {
            r.relative_to_standard = Some(if r.variant == VariantKind::Standard {
                1.0
            } else {
                r.median_ns as f64 / base
            });
        }
        results.extend(rows);
    }
    Ok(BenchSuite {
        seed,
        cpu: cpu_model(),
        threads: 1,
        results,
    })
}

impl BenchSuite {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# cpu={}\n# threads={}\n# available_parallelism={}\n# seed={}\n# rng={ALGORITHM}\n",
            self.cpu,
            self.threads,
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            self.seed
        );
        if let Some(r) = self.results.first() {
            out.push_str(&format!("# warmup={} iters={}\n", r.warmup_iters, r.measured_iters));
        }
        out.push_str("variant,d_m,h,ell,median_ns,p10_ns,p90_ns,rel_std\n");
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6}\n",
                r.variant,
                r.d_m,
                r.h,
                r.ell,
                r.median_ns,
                r.p10_ns,
                r.p90_ns,
                r.relative_to_standard.unwrap_or(f64::NAN)
            ));
        }
        out
    }
}
