use crate::attention::{attend_blocks, init_weights_with_noise, AttentionTensors};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::ops::Ops;
use crate::rng::Rng;

use super::TransformerConfig;

/// One pre-norm block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_g: T,
    pub ln1_b: T,
    pub attn: AttentionTensors<T>,
    pub ln2_g: T,
    pub ln2_b: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tok_emb: T,
    pub pos_emb: T,
    pub blocks: Vec<Block<T>>,
    pub lnf_g: T,
    pub lnf_b: T,
    pub head_w: T,
    pub head_b: T,
}

pub type ModelWeights = Params<Matrix>;

impl<T> Params<T> {
    /// Every tensor with a stable dotted name, embeddings first.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("block{l}.{n}");
            out.push((p("ln1_g"), &b.ln1_g));
            out.push((p("ln1_b"), &b.ln1_b));
            out.extend(b.attn.named().into_iter().map(|(n, t)| (p(&format!("attn.{n}")), t)));
            for (n, t) in [("ln2_g", &b.ln2_g), ("ln2_b", &b.ln2_b), ("w1", &b.w1), ("b1", &b.b1), ("w2", &b.w2), ("b2", &b.b2)] {
                out.push((p(n), t));
            }
        }
        for (n, t) in [("lnf_g", &self.lnf_g), ("lnf_b", &self.lnf_b), ("head_w", &self.head_w), ("head_b", &self.head_b)] {
            out.push((n.to_string(), t));
        }
        out
    }

    /// Same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.push(&mut b.ln1_g);
            out.push(&mut b.ln1_b);
            out.extend(b.attn.named_mut().into_iter().map(|(_, t)| t));
            out.extend([&mut b.ln2_g, &mut b.ln2_b, &mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2]);
        }
        out.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        Params {
            tok_emb: f(&self.tok_emb),
            pos_emb: f(&self.pos_emb),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1_g: f(&b.ln1_g),
                    ln1_b: f(&b.ln1_b),
                    attn: b.attn.map(&mut f),
                    ln2_g: f(&b.ln2_g),
                    ln2_b: f(&b.ln2_b),
                    w1: f(&b.w1),
                    b1: f(&b.b1),
                    w2: f(&b.w2),
                    b2: f(&b.b2),
                })
                .collect(),
            lnf_g: f(&self.lnf_g),
            lnf_b: f(&self.lnf_b),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }
}

impl ModelWeights {
    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn attention_param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.attn.param_count()).sum()
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::uniform(rows, cols, (6.0 / (rows + cols) as f64).sqrt(), rng)
}

/// Parameter streams are keyed by `(seed, slot)`, so the non-attention
/// tensors are identical for every variant and the attention tensors share
/// their per-slot streams as in [`init_weights_with_noise`].
pub fn init_model(cfg: &TransformerConfig) -> Result<ModelWeights> {
    let attn_cfg = cfg.attention()?;
    let (d, seed) = (cfg.d_m, cfg.seed);
    let stream = |s: u64| Rng::with_stream(seed, s);
    let ones = || Matrix::filled(1, d, 1.0);
    let zeros = || Matrix::zeros(1, d);
    let hidden = cfg.hidden();
    let blocks = (0..cfg.n_layers as u64)
        .map(|l| Block {
            ln1_g: ones(),
            ln1_b: zeros(),
            attn: init_weights_with_noise(&attn_cfg, &mut stream(100 + 10 * l), cfg.alignment_init_noise),
            ln2_g: ones(),
            ln2_b: zeros(),
            w1: glorot(d, hidden, &mut stream(101 + 10 * l)),
            b1: Matrix::zeros(1, hidden),
            w2: glorot(hidden, d, &mut stream(102 + 10 * l)),
            b2: zeros(),
        })
        .collect();
    let n_out = cfg.task.n_classes(cfg.vocab_size);
    Ok(Params {
        tok_emb: Matrix::normal(cfg.vocab_size, d, &mut stream(1)),
        pos_emb: Matrix::normal(cfg.ell, d, &mut stream(2)).scale(0.1),
        blocks,
        lnf_g: ones(),
        lnf_b: zeros(),
        head_w: glorot(d, n_out, &mut stream(3)),
        head_b: Matrix::zeros(1, n_out),
    })
}

fn norm<O: Ops>(ops: &mut O, x: &O::Value, g: &O::Value, b: &O::Value) -> Result<O::Value> {
    let n = ops.layer_norm_rows(x)?;
    let n = ops.mul_row(&n, g)?;
    ops.add_row_bias(&n, b)
}

/// Logits for `batch` sequences whose tokens are concatenated in `tokens`.
/// Classification tasks give `batch x classes` (mean pooled); char-lm gives
/// one row per position.
pub fn logits<O: Ops>(
    ops: &mut O,
    p: &Params<O::Value>,
    cfg: &TransformerConfig,
    tokens: &[usize],
    batch: usize,
) -> Result<O::Value> {
    let attn_cfg = cfg.attention()?;
    let ell = cfg.ell;
    let positions: Vec<usize> = (0..tokens.len()).map(|i| i % ell).collect();
    let tok = ops.gather_rows(&p.tok_emb, tokens)?;
    let pos = ops.gather_rows(&p.pos_emb, &positions)?;
    let mut x = ops.add(&tok, &pos)?;
    for b in &p.blocks {
        let h = norm(ops, &x, &b.ln1_g, &b.ln1_b)?;
        let a = attend_blocks(ops, &h, &h, &h, &b.attn, &attn_cfg, batch)?;
        x = ops.add(&x, &a)?;
        let h = norm(ops, &x, &b.ln2_g, &b.ln2_b)?;
        let h = ops.matmul(&h, &b.w1)?;
        let h = ops.add_row_bias(&h, &b.b1)?;
        let h = ops.gelu(&h)?;
        let h = ops.matmul(&h, &b.w2)?;
        let h = ops.add_row_bias(&h, &b.b2)?;
        x = ops.add(&x, &h)?;
    }
    let x = norm(ops, &x, &p.lnf_g, &p.lnf_b)?;
    let x = if cfg.task.is_sequence_labelling() {
        x
    } else {
        ops.mean_row_blocks(&x, ell)?
    };
    let y = ops.matmul(&x, &p.head_w)?;
    ops.add_row_bias(&y, &p.head_b)
}
