//! Standard multi-head attention and the Optimized, Efficient and Super
//! variants.
//!
//! | variant   | queries  | keys        | values           | output |
//! |-----------|----------|-------------|------------------|--------|
//! | standard  | `X W^Q_i`| `X W^K_i`   | `X W^V_i`        | `W^O`  |
//! | optimized | `X W^Q_i`| `X W^K_i`   | column slice     | `W^O`  |
//! | efficient | `X W^Q_i`| column slice| column slice     | `W^O`  |
//! | super     | `X W^Q_i`| column slice| `W^A` times slice| `W^O`  |
//!
//! Every variant is written once against [`Ops`], so the same code runs
//! eagerly, on a [`Tape`](crate::tape::Tape), or under a FLOP counter.

pub(crate) mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops::{Eager, Ops};
use crate::rng::Rng;

pub use checkpoint::{load_attention, save_attention, AttentionCheckpoint};

/// Amplitude of the uniform noise added to the identity when initialising `W^A`.
pub const ALIGNMENT_INIT_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Standard,
    Optimized,
    Efficient,
    Super,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Standard,
        VariantKind::Optimized,
        VariantKind::Efficient,
        VariantKind::Super,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Standard => "standard",
            VariantKind::Optimized => "optimized",
            VariantKind::Efficient => "efficient",
            VariantKind::Super => "super",
        }
    }

    pub fn projects_keys(self) -> bool {
        matches!(self, VariantKind::Standard | VariantKind::Optimized)
    }

    pub fn projects_values(self) -> bool {
        self == VariantKind::Standard
    }

    pub fn has_alignment(self) -> bool {
        self == VariantKind::Super
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(VariantKind::Standard),
            "optimized" => Ok(VariantKind::Optimized),
            "efficient" => Ok(VariantKind::Efficient),
            "super" => Ok(VariantKind::Super),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Hyperparameters of one attention layer. Construct with
/// [`AttentionConfig::new`]; head widths are always `d_m / h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttentionConfig {
    variant: VariantKind,
    d_m: usize,
    h: usize,
    d_k: usize,
    d_v: usize,
    ell: Option<usize>,
    causal: bool,
    bias: bool,
}

impl AttentionConfig {
    /// Validated config with bias on and causal off.
    pub fn new(variant: VariantKind, d_m: usize, h: usize, ell: Option<usize>) -> Result<Self> {
        if d_m == 0 || h == 0 {
            return Err(Error::Config("d_m and h must be positive".into()));
        }
        if !d_m.is_multiple_of(h) {
            return Err(Error::Config(format!("h={h} does not divide d_m={d_m}")));
        }
        if ell == Some(0) {
            return Err(Error::Config("ell must be positive".into()));
        }
        if variant == VariantKind::Super && ell.is_none() {
            return Err(Error::Config("super attention needs a fixed context length ell".into()));
        }
        Ok(Self {
            variant,
            d_m,
            h,
            d_k: d_m / h,
            d_v: d_m / h,
            ell,
            causal: false,
            bias: true,
        })
    }

    pub fn causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    /// Same dimensions under another variant.
    pub fn with_variant(&self, variant: VariantKind) -> Result<Self> {
        Ok(Self::new(variant, self.d_m, self.h, self.ell)?
            .causal(self.causal)
            .bias(self.bias))
    }

    pub fn with_ell(&self, ell: usize) -> Result<Self> {
        Ok(Self::new(self.variant, self.d_m, self.h, Some(ell))?
            .causal(self.causal)
            .bias(self.bias))
    }

    pub fn variant(&self) -> VariantKind {
        self.variant
    }
    pub fn d_m(&self) -> usize {
        self.d_m
    }
    pub fn heads(&self) -> usize {
        self.h
    }
    pub fn d_k(&self) -> usize {
        self.d_k
    }
    pub fn d_v(&self) -> usize {
        self.d_v
    }
    pub fn ell(&self) -> Option<usize> {
        self.ell
    }
    pub fn is_causal(&self) -> bool {
        self.causal
    }
    pub fn has_bias(&self) -> bool {
        self.bias
    }

    /// Whether the lower-triangular constraint on `W^A` applies.
    pub fn constrains_alignment(&self) -> bool {
        self.causal && self.variant == VariantKind::Super
    }
}

/// Learnable tensors of one attention layer. Projections are `d_m x d_m`
/// (per-head blocks side by side), row biases are `1 x d_m`, `W^A` is
/// `ell x ell` and its bias is an `ell x 1` column.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors<T> {
    pub wq: T,
    pub wk: Option<T>,
    pub wv: Option<T>,
    pub wo: T,
    pub wa: Option<T>,
    pub bq: Option<T>,
    pub bk: Option<T>,
    pub bv: Option<T>,
    pub bo: Option<T>,
    pub ba: Option<T>,
}

pub type AttentionWeights = AttentionTensors<Matrix>;

impl<T> AttentionTensors<T> {
    /// Present tensors in the fixed order wq, wk, wv, wo, wa, bq, bk, bv, bo, ba.
    pub fn named(&self) -> Vec<(&'static str, &T)> {
        let slots: [(&'static str, Option<&T>); 10] = [
            ("wq", Some(&self.wq)),
            ("wk", self.wk.as_ref()),
            ("wv", self.wv.as_ref()),
            ("wo", Some(&self.wo)),
            ("wa", self.wa.as_ref()),
            ("bq", self.bq.as_ref()),
            ("bk", self.bk.as_ref()),
            ("bv", self.bv.as_ref()),
            ("bo", self.bo.as_ref()),
            ("ba", self.ba.as_ref()),
        ];
        slots.into_iter().filter_map(|(n, t)| t.map(|t| (n, t))).collect()
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut T)> {
        let slots: [(&'static str, Option<&mut T>); 10] = [
            ("wq", Some(&mut self.wq)),
            ("wk", self.wk.as_mut()),
            ("wv", self.wv.as_mut()),
            ("wo", Some(&mut self.wo)),
            ("wa", self.wa.as_mut()),
            ("bq", self.bq.as_mut()),
            ("bk", self.bk.as_mut()),
            ("bv", self.bv.as_mut()),
            ("bo", self.bo.as_mut()),
            ("ba", self.ba.as_mut()),
        ];
        slots.into_iter().filter_map(|(n, t)| t.map(|t| (n, t))).collect()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> AttentionTensors<U> {
        AttentionTensors {
            wq: f(&self.wq),
            wk: self.wk.as_ref().map(&mut f),
            wv: self.wv.as_ref().map(&mut f),
            wo: f(&self.wo),
            wa: self.wa.as_ref().map(&mut f),
            bq: self.bq.as_ref().map(&mut f),
            bk: self.bk.as_ref().map(&mut f),
            bv: self.bv.as_ref().map(&mut f),
            bo: self.bo.as_ref().map(&mut f),
            ba: self.ba.as_ref().map(&mut f),
        }
    }
}

impl AttentionWeights {
    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data().len()).sum()
    }
}

/// Expected `(rows, cols)` of every tensor slot for `cfg`, `None` when absent.
fn expected_shapes(cfg: &AttentionConfig) -> [(&'static str, Option<(usize, usize)>); 10] {
    let v = cfg.variant;
    let d = cfg.d_m;
    let ell = cfg.ell.unwrap_or(0);
    let sq = Some((d, d));
    let row = if cfg.bias { Some((1, d)) } else { None };
    let when = |cond: bool, s: Option<(usize, usize)>| if cond { s } else { None };
    [
        ("wq", sq),
        ("wk", when(v.projects_keys(), sq)),
        ("wv", when(v.projects_values(), sq)),
        ("wo", sq),
        ("wa", when(v.has_alignment(), Some((ell, ell)))),
        ("bq", row),
        ("bk", when(v.projects_keys(), row)),
        ("bv", when(v.projects_values(), row)),
        ("bo", row),
        ("ba", when(v.has_alignment() && cfg.bias, Some((ell, 1)))),
    ]
}

fn check_tensors<T>(
    w: &AttentionTensors<T>,
    cfg: &AttentionConfig,
    shape: impl Fn(&T) -> (usize, usize),
) -> Result<()> {
    let slots: [Option<&T>; 10] = [
        Some(&w.wq),
        w.wk.as_ref(),
        w.wv.as_ref(),
        Some(&w.wo),
        w.wa.as_ref(),
        w.bq.as_ref(),
        w.bk.as_ref(),
        w.bv.as_ref(),
        w.bo.as_ref(),
        w.ba.as_ref(),
    ];
    for ((name, want), got) in expected_shapes(cfg).into_iter().zip(slots) {
        match (want, got) {
            (None, None) => {}
            (Some(want), Some(t)) if shape(t) == want => {}
            (Some(want), Some(t)) => {
                return Err(Error::Contract(format!(
                    "{name} has shape {:?}, {} needs {want:?}",
                    shape(t),
                    cfg.variant
                )))
            }
            (Some(_), None) => {
                return Err(Error::Contract(format!("{} weights are missing {name}", cfg.variant)))
            }
            (None, Some(_)) => {
                return Err(Error::Contract(format!(
                    "{} weights must not carry {name}",
                    cfg.variant
                )))
            }
        }
    }
    Ok(())
}

impl AttentionWeights {
    /// Verifies the presence pattern, shapes, and the causal `W^A` constraint.
    pub fn check(&self, cfg: &AttentionConfig) -> Result<()> {
        check_tensors(self, cfg, Matrix::shape)?;
        if cfg.constrains_alignment() {
            let wa = self.wa.as_ref().expect("checked above");
            if wa.lower_triangular() != *wa {
                return Err(Error::Contract("causal W^A has nonzero entries above the diagonal".into()));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform projections, zero biases and `W^A = I + U(±noise)`
/// (projected lower-triangular when causal).
///
/// One 64-bit draw from `rng` keys the layer; each tensor slot then has its
/// own stream, so weights shared by two variants come out identical.
pub fn init_weights(cfg: &AttentionConfig, rng: &mut Rng) -> AttentionWeights {
    init_weights_with_noise(cfg, rng, ALIGNMENT_INIT_NOISE)
}

pub fn init_weights_with_noise(cfg: &AttentionConfig, rng: &mut Rng, alignment_noise: f64) -> AttentionWeights {
    let key = rng.next_u64();
    let d = cfg.d_m;
    let bound = (6.0 / (d + d) as f64).sqrt();
    let proj = |stream: u64| Matrix::uniform(d, d, bound, &mut Rng::with_stream(key, stream));
    let v = cfg.variant;
    let zeros_row = || cfg.bias.then(|| Matrix::zeros(1, d));
    let wa = v.has_alignment().then(|| {
        let ell = cfg.ell.expect("validated");
        let mut noise = Rng::with_stream(key, 4);
        let wa = Matrix::from_fn(ell, ell, |r, c| {
            let base = if r == c { 1.0 } else { 0.0 };
            base + noise.uniform(alignment_noise)
        });
        if cfg.causal {
            wa.lower_triangular()
        } else {
            wa
        }
    });
    AttentionTensors {
        wq: proj(0),
        wk: v.projects_keys().then(|| proj(1)),
        wv: v.projects_values().then(|| proj(2)),
        wo: proj(3),
        wa,
        bq: zeros_row(),
        bk: if v.projects_keys() { zeros_row() } else { None },
        bv: if v.projects_values() { zeros_row() } else { None },
        bo: zeros_row(),
        ba: (v.has_alignment() && cfg.bias).then(|| Matrix::zeros(cfg.ell.expect("validated"), 1)),
    }
}

fn project<O: Ops>(ops: &mut O, x: &O::Value, w: &O::Value, b: Option<&O::Value>) -> Result<O::Value> {
    let y = ops.matmul(x, w)?;
    match b {
        Some(b) => ops.add_row_bias(&y, b),
        None => Ok(y),
    }
}

/// Multi-head attention for any variant on any backend.
///
/// `x_q` is `n_q x d_m`; `x_k` and `x_v` are `n_kv x d_m`. Super attention
/// additionally requires `n_kv == ell`. Output is `n_q x d_m`.
pub fn attend<O: Ops>(
    ops: &mut O,
    x_q: &O::Value,
    x_k: &O::Value,
    x_v: &O::Value,
    w: &AttentionTensors<O::Value>,
    cfg: &AttentionConfig,
) -> Result<O::Value> {
    attend_blocks(ops, x_q, x_k, x_v, w, cfg, 1)
}

/// [`attend`] over `blocks` independent sequences stacked along the rows.
///
/// Row counts of the inputs must be multiples of `blocks`; block `b` of the
/// output attends only to block `b` of the keys and values. Projections run
/// once over the whole stack.
pub fn attend_blocks<O: Ops>(
    ops: &mut O,
    x_q: &O::Value,
    x_k: &O::Value,
    x_v: &O::Value,
    w: &AttentionTensors<O::Value>,
    cfg: &AttentionConfig,
    blocks: usize,
) -> Result<O::Value> {
    check_tensors(w, cfg, |t| ops.shape(t))?;
    let d = cfg.d_m;
    let (q_shape, k_shape, v_shape) = (ops.shape(x_q), ops.shape(x_k), ops.shape(x_v));
    for s in [q_shape, k_shape, v_shape] {
        if s.1 != d {
            return Err(Error::Dimension {
                op: "attend",
                left: s,
                right: (s.0, d),
            });
        }
    }
    if k_shape.0 != v_shape.0 {
        return Err(Error::Dimension {
            op: "attend",
            left: k_shape,
            right: v_shape,
        });
    }
    if blocks == 0 || q_shape.0 % blocks != 0 || k_shape.0 % blocks != 0 {
        return Err(Error::Contract(format!(
            "{} query rows and {} key rows do not split into {blocks} blocks",
            q_shape.0, k_shape.0
        )));
    }
    let (n_q, n_kv) = (q_shape.0 / blocks, k_shape.0 / blocks);
    if cfg.variant == VariantKind::Super {
        let ell = cfg.ell.expect("validated");
        if n_kv != ell {
            return Err(Error::FixedContext {
                expected: ell,
                actual: n_kv,
            });
        }
    }

    let queries = project(ops, x_q, &w.wq, w.bq.as_ref())?;
    let keys = match &w.wk {
        Some(wk) => project(ops, x_k, wk, w.bk.as_ref())?,
        None => x_k.clone(),
    };
    let values = match &w.wv {
        Some(wv) => project(ops, x_v, wv, w.bv.as_ref())?,
        None => x_v.clone(),
    };

    let scale = 1.0 / (cfg.d_k as f64).sqrt();
    let mut outputs = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let (q_b, k_b, mut v_b) = if blocks == 1 {
            (queries.clone(), keys.clone(), values.clone())
        } else {
            (
                ops.slice_rows(&queries, b * n_q, n_q)?,
                ops.slice_rows(&keys, b * n_kv, n_kv)?,
                ops.slice_rows(&values, b * n_kv, n_kv)?,
            )
        };
        if let Some(wa) = &w.wa {
            // Slicing commutes with left multiplication, so W^A is applied once
            // to all heads' values rather than per slice.
            v_b = ops.matmul(wa, &v_b)?;
            if let Some(ba) = &w.ba {
                v_b = ops.add_col_bias(&v_b, ba)?;
            }
        }
        let mut heads = Vec::with_capacity(cfg.h);
        for i in 0..cfg.h {
            let q_i = ops.slice_cols(&q_b, i * cfg.d_k, cfg.d_k)?;
            let k_i = ops.slice_cols(&k_b, i * cfg.d_k, cfg.d_k)?;
            let v_i = ops.slice_cols(&v_b, i * cfg.d_v, cfg.d_v)?;
            let k_t = ops.transpose(&k_i)?;
            let raw = ops.matmul(&q_i, &k_t)?;
            let mut scores = ops.scale(&raw, scale)?;
            if cfg.causal {
                scores = ops.causal_mask(&scores)?;
            }
            let s_i = ops.softmax_rows(&scores)?;
            heads.push(ops.matmul(&s_i, &v_i)?);
        }
        outputs.push(if heads.len() == 1 {
            heads.pop().expect("one head")
        } else {
            ops.concat_cols(&heads)?
        });
    }
    let concat = if outputs.len() == 1 {
        outputs.pop().expect("one block")
    } else {
        ops.concat_rows(&outputs)?
    };
    project(ops, &concat, &w.wo, w.bo.as_ref())
}

fn forward_as(
    expect: VariantKind,
    x_q: &Matrix,
    x_k: &Matrix,
    x_v: &Matrix,
    w: &AttentionWeights,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    if cfg.variant != expect {
        return Err(Error::Contract(format!(
            "forward_{expect} called with a {} config",
            cfg.variant
        )));
    }
    attend(&mut Eager, x_q, x_k, x_v, w, cfg)
}

pub fn forward_standard(x_q: &Matrix, x_k: &Matrix, x_v: &Matrix, w: &AttentionWeights, cfg: &AttentionConfig) -> Result<Matrix> {
    forward_as(VariantKind::Standard, x_q, x_k, x_v, w, cfg)
}

pub fn forward_optimized(x_q: &Matrix, x_k: &Matrix, x_v: &Matrix, w: &AttentionWeights, cfg: &AttentionConfig) -> Result<Matrix> {
    forward_as(VariantKind::Optimized, x_q, x_k, x_v, w, cfg)
}

pub fn forward_efficient(x_q: &Matrix, x_k: &Matrix, x_v: &Matrix, w: &AttentionWeights, cfg: &AttentionConfig) -> Result<Matrix> {
    forward_as(VariantKind::Efficient, x_q, x_k, x_v, w, cfg)
}

pub fn forward_super(x_q: &Matrix, x_k: &Matrix, x_v: &Matrix, w: &AttentionWeights, cfg: &AttentionConfig) -> Result<Matrix> {
    forward_as(VariantKind::Super, x_q, x_k, x_v, w, cfg)
}

/// Eager forward dispatched on `cfg.variant`.
pub fn forward(x_q: &Matrix, x_k: &Matrix, x_v: &Matrix, w: &AttentionWeights, cfg: &AttentionConfig) -> Result<Matrix> {
    attend(&mut Eager, x_q, x_k, x_v, w, cfg)
}

/// Self-attention shorthand.
pub fn forward_self(x: &Matrix, w: &AttentionWeights, cfg: &AttentionConfig) -> Result<Matrix> {
    forward(x, x, x, w, cfg)
}

/// Copy of `w` with the strict upper triangle of `W^A` zeroed.
pub fn project_causal(w: &AttentionWeights) -> Result<AttentionWeights> {
    let mut out = w.clone();
    project_causal_in_place(&mut out)?;
    Ok(out)
}

pub fn project_causal_in_place(w: &mut AttentionWeights) -> Result<()> {
    let wa = w
        .wa
        .as_mut()
        .ok_or_else(|| Error::Contract("project_causal needs super attention weights".into()))?;
    *wa = wa.lower_triangular();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacked_blocks_equal_separate_calls() {
        for v in VariantKind::ALL {
            let cfg = AttentionConfig::new(v, 8, 2, Some(4)).unwrap().causal(v != VariantKind::Standard);
            let mut rng = Rng::new(40);
            let w = init_weights(&cfg, &mut rng);
            let x = Matrix::normal(12, 8, &mut rng);
            let stacked = attend_blocks(&mut Eager, &x, &x, &x, &w, &cfg, 3).unwrap();
            for b in 0..3 {
                let xb = x.slice_rows(4 * b, 4).unwrap();
                let single = forward_self(&xb, &w, &cfg).unwrap();
                assert_eq!(stacked.slice_rows(4 * b, 4).unwrap(), single, "{v}");
            }
            assert!(attend_blocks(&mut Eager, &x, &x, &x, &w, &cfg, 5).is_err());
        }
    }


    fn cfg(v: VariantKind, d_m: usize, h: usize, ell: Option<usize>) -> AttentionConfig {
        AttentionConfig::new(v, d_m, h, ell).unwrap()
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in VariantKind::ALL {
            assert_eq!(v.as_str().parse::<VariantKind>().unwrap(), v);
        }
        assert!("flash".parse::<VariantKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::new(VariantKind::Standard, 30, 4, None).is_err());
        assert!(AttentionConfig::new(VariantKind::Super, 32, 4, None).is_err());
        assert!(AttentionConfig::new(VariantKind::Standard, 0, 1, None).is_err());
        let c = cfg(VariantKind::Standard, 32, 4, None);
        assert_eq!((c.d_k(), c.d_v()), (8, 8));
    }

    #[test]
    fn presence_pattern_matches_variant() {
        let mut rng = Rng::new(0);
        let expected: [(VariantKind, &[&str]); 4] = [
            (VariantKind::Standard, &["wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"]),
            (VariantKind::Optimized, &["wq", "wk", "wo", "bq", "bk", "bo"]),
            (VariantKind::Efficient, &["wq", "wo", "bq", "bo"]),
            (VariantKind::Super, &["wq", "wo", "wa", "bq", "bo", "ba"]),
        ];
        for (v, names) in expected {
            let c = cfg(v, 8, 2, Some(4));
            let w = init_weights(&c, &mut rng);
            let got: Vec<&str> = w.named().into_iter().map(|(n, _)| n).collect();
            assert_eq!(got, names);
            w.check(&c).unwrap();
        }
    }

    #[test]
    fn super_identity_init_without_noise() {
        let c = cfg(VariantKind::Super, 8, 2, Some(4));
        let w = init_weights_with_noise(&c, &mut Rng::new(1), 0.0);
        assert_eq!(w.wa.unwrap(), Matrix::identity(4));
    }

    #[test]
    fn glorot_bound_holds() {
        let c = cfg(VariantKind::Standard, 32, 4, None);
        let bound = (6.0f64 / 64.0).sqrt();
        for seed in 0..5 {
            let w = init_weights(&c, &mut Rng::new(seed));
            for (name, m) in [("wq", &w.wq), ("wo", &w.wo), ("wk", w.wk.as_ref().unwrap()), ("wv", w.wv.as_ref().unwrap())] {
                assert_eq!(m.shape(), (32, 32), "{name}");
                assert!(m.data().iter().all(|x| x.abs() <= bound), "{name}");
            }
            assert!(w.bq.unwrap().data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn causal_super_init_is_lower_triangular() {
        let c = cfg(VariantKind::Super, 8, 2, Some(8)).causal(true);
        let w = init_weights(&c, &mut Rng::new(2));
        let wa = w.wa.as_ref().unwrap();
        for r in 0..8 {
            for col in r + 1..8 {
                assert_eq!(wa.get(r, col), 0.0);
            }
        }
        w.check(&c).unwrap();
    }

    #[test]
    fn shared_tensors_identical_across_variants() {
        let std_w = init_weights(&cfg(VariantKind::Standard, 8, 2, Some(4)), &mut Rng::new(3));
        let eff_w = init_weights(&cfg(VariantKind::Efficient, 8, 2, Some(4)), &mut Rng::new(3));
        assert_eq!(std_w.wq, eff_w.wq);
        assert_eq!(std_w.wo, eff_w.wo);
    }

    #[test]
    fn single_token_identity() {
        let c = cfg(VariantKind::Standard, 4, 1, None);
        let mut w = init_weights(&c, &mut Rng::new(0));
        for (_, m) in w.named_mut() {
            if m.rows() == m.cols() {
                *m = Matrix::identity(4);
            }
        }
        let x = Matrix::from_rows(&[&[0.3, -1.0, 2.0, 0.5]]).unwrap();
        assert_eq!(forward_standard(&x, &x, &x, &w, &c).unwrap(), x);
    }

    #[test]
    fn causal_two_tokens_row_zero_is_bitwise_stable() {
        for v in VariantKind::ALL {
            let c = cfg(v, 4, 2, Some(2)).causal(true);
            let w = init_weights(&c, &mut Rng::new(4));
            let mut rng = Rng::new(5);
            let x = Matrix::normal(2, 4, &mut rng);
            let mut y = x.clone();
            for col in 0..4 {
                y.set(1, col, 10.0 * rng.normal());
            }
            let a = forward_self(&x, &w, &c).unwrap();
            let b = forward_self(&y, &w, &c).unwrap();
            assert_eq!(a.row(0), b.row(0), "{v}");
        }
    }

    #[test]
    fn one_head_optimized_equals_standard_with_identity_values() {
        let c = cfg(VariantKind::Standard, 6, 1, None);
        let mut w = init_weights(&c, &mut Rng::new(6));
        w.wv = Some(Matrix::identity(6));
        let opt_c = c.with_variant(VariantKind::Optimized).unwrap();
        let opt_w = AttentionTensors { wv: None, bv: None, ..w.clone() };
        let x = Matrix::normal(5, 6, &mut Rng::new(7));
        let a = forward_standard(&x, &x, &x, &w, &c).unwrap();
        let b = forward_optimized(&x, &x, &x, &opt_w, &opt_c).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn one_head_identity_standard_equals_efficient() {
        let c = cfg(VariantKind::Standard, 6, 1, None);
        let mut w = init_weights(&c, &mut Rng::new(8));
        w.wq = Matrix::identity(6);
        w.wk = Some(Matrix::identity(6));
        w.wv = Some(Matrix::identity(6));
        let eff_c = c.with_variant(VariantKind::Efficient).unwrap();
        let eff_w = AttentionTensors { wk: None, wv: None, bk: None, bv: None, ..w.clone() };
        let x = Matrix::normal(5, 6, &mut Rng::new(9));
        let a = forward_standard(&x, &x, &x, &w, &c).unwrap();
        let b = forward_efficient(&x, &x, &x, &eff_w, &eff_c).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn super_with_identity_kernel_equals_efficient() {
        let c = cfg(VariantKind::Super, 8, 2, Some(6));
        let w = init_weights_with_noise(&c, &mut Rng::new(10), 0.0);
        let eff_c = c.with_variant(VariantKind::Efficient).unwrap();
        let eff_w = AttentionTensors { wa: None, ba: None, ..w.clone() };
        let x = Matrix::normal(6, 8, &mut Rng::new(11));
        let a = forward_super(&x, &x, &x, &w, &c).unwrap();
        let b = forward_efficient(&x, &x, &x, &eff_w, &eff_c).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
        assert_eq!(forward(&x, &x, &x, &w, &c).unwrap(), a);
    }

    #[test]
    fn super_rejects_wrong_length() {
        let c = cfg(VariantKind::Super, 8, 2, Some(6));
        let w = init_weights(&c, &mut Rng::new(12));
        let x = Matrix::normal(5, 8, &mut Rng::new(13));
        assert!(matches!(
            forward_self(&x, &w, &c),
            Err(Error::FixedContext { expected: 6, actual: 5 })
        ));
    }

    #[test]
    fn mismatched_weights_are_contract_errors() {
        let std_c = cfg(VariantKind::Standard, 8, 2, None);
        let eff_c = std_c.with_variant(VariantKind::Efficient).unwrap();
        let w = init_weights(&std_c, &mut Rng::new(14));
        let x = Matrix::normal(3, 8, &mut Rng::new(15));
        assert!(matches!(forward_self(&x, &w, &eff_c), Err(Error::Contract(_))));
        assert!(matches!(forward_efficient(&x, &x, &x, &w, &std_c), Err(Error::Contract(_))));
    }

    #[test]
    fn column_mismatch_is_dimension_error() {
        let c = cfg(VariantKind::Efficient, 8, 2, None);
        let w = init_weights(&c, &mut Rng::new(16));
        let x = Matrix::normal(3, 8, &mut Rng::new(17));
        let bad = Matrix::normal(3, 6, &mut Rng::new(18));
        assert!(matches!(forward(&x, &bad, &x, &w, &c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_attention_shapes() {
        let c = cfg(VariantKind::Optimized, 8, 2, None);
        let w = init_weights(&c, &mut Rng::new(19));
        let q = Matrix::normal(3, 8, &mut Rng::new(20));
        let kv = Matrix::normal(7, 8, &mut Rng::new(21));
        assert_eq!(forward(&q, &kv, &kv, &w, &c).unwrap().shape(), (3, 8));
    }

    #[test]
    fn variants_differ_on_random_input() {
        let x = Matrix::normal(4, 8, &mut Rng::new(22));
        let outs: Vec<Matrix> = VariantKind::ALL
            .iter()
            .map(|&v| {
                let c = cfg(v, 8, 2, Some(4));
                forward_self(&x, &init_weights(&c, &mut Rng::new(23)), &c).unwrap()
            })
            .collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(outs[i].max_abs_diff(&outs[j]) > 1e-6, "{i} vs {j}");
            }
        }
    }

    #[test]
    fn project_causal_examples() {
        let c = cfg(VariantKind::Super, 4, 1, Some(3));
        let mut w = init_weights(&c, &mut Rng::new(24));
        w.wa = Some(Matrix::filled(3, 3, 1.0));
        let p = project_causal(&w).unwrap();
        let want = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0], &[1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(p.wa.as_ref().unwrap(), &want);
        assert_eq!(project_causal(&p).unwrap(), p);
        assert_eq!(p.wq, w.wq);

        let std_c = cfg(VariantKind::Standard, 4, 1, None);
        let std_w = init_weights(&std_c, &mut Rng::new(25));
        assert!(matches!(project_causal(&std_w), Err(Error::Contract(_))));
    }

    #[test]
    fn determinism() {
        let c = cfg(VariantKind::Super, 8, 2, Some(5));
        let a = init_weights(&c, &mut Rng::new(26));
        let b = init_weights(&c, &mut Rng::new(26));
        assert_eq!(a, b);
        let x = Matrix::normal(5, 8, &mut Rng::new(27));
        let ya = forward_self(&x, &a, &c).unwrap();
        let yb = forward_self(&x, &b, &c).unwrap();
        assert_eq!(ya.data(), yb.data());
    }
}
