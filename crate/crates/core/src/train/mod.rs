//! Small transformer harness that trains every attention variant inside the
//! same skeleton.
//!
//! Token and learned position embeddings feed `n_layers` pre-norm blocks
//! (attention, then a GELU MLP, each with a residual connection), a final
//! layer norm, mean pooling over positions and a linear head. Char-lm skips
//! the pooling and predicts at every position.

mod adam;
mod compare;
mod data;
mod model;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use compare::{compare_variants, Comparison, ComparisonRow};
pub use data::{copy_label, majority_label, make_task, Dataset, Sample, Task};
pub use model::{init_model, logits, Block, ModelWeights, Params};

use crate::attention::checkpoint::header_for;
use crate::attention::{project_causal_in_place, AttentionConfig, VariantKind, ALIGNMENT_INIT_NOISE};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops::{Eager, Ops};
use crate::rng::Rng;
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
}

fn default_true() -> bool {
    true
}
fn default_layers() -> usize {
    1
}
fn default_noise() -> f64 {
    ALIGNMENT_INIT_NOISE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub variant: VariantKind,
    pub d_m: usize,
    pub heads: usize,
    /// Sequence length of every sample; also the fixed context of Super.
    pub ell: usize,
    #[serde(default)]
    pub causal: bool,
    #[serde(default = "default_true")]
    pub bias: bool,
    pub vocab_size: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    /// Defaults to `4 * d_m`.
    #[serde(default)]
    pub mlp_hidden: Option<usize>,
    #[serde(default)]
    pub pooling: Pooling,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub alignment_init_noise: f64,
}

impl TransformerConfig {
    pub fn attention(&self) -> Result<AttentionConfig> {
        Ok(AttentionConfig::new(self.variant, self.d_m, self.heads, Some(self.ell))?
            .causal(self.causal)
            .bias(self.bias))
    }

    pub fn hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or(4 * self.d_m)
    }

    pub fn validate(&self) -> Result<()> {
        self.attention()?;
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if self.hidden() == 0 {
            return Err(Error::Config("mlp_hidden must be positive".into()));
        }
        if self.task == Task::CharLm && !self.causal {
            return Err(Error::Config("char-lm needs causal attention".into()));
        }
        if !(self.alignment_init_noise >= 0.0 && self.alignment_init_noise.is_finite()) {
            return Err(Error::Config("alignment_init_noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn default_samples() -> usize {
    10_000
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_patience() -> usize {
    3
}
fn default_min_delta() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Epochs without a `min_delta` improvement of the validation loss
    /// before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    /// Stop as soon as validation accuracy reaches this value.
    #[serde(default)]
    pub target_val_accuracy: Option<f64>,
    /// Keep `W^A` and its bias at their initial values.
    #[serde(default)]
    pub freeze_alignment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            patience: default_patience(),
            min_delta: default_min_delta(),
            target_val_accuracy: None,
            freeze_alignment: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Model and run settings as read from an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: TransformerConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub epoch_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Plateau,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: TransformerConfig,
    pub run: RunConfig,
    pub metrics: Vec<EpochMetrics>,
    pub stop: StopReason,
    pub steps: usize,
    pub weights: ModelWeights,
}

impl TrainRun {
    pub fn last(&self) -> &EpochMetrics {
        self.metrics.last().expect("at least one epoch")
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        self.metrics.iter().map(|m| m.epoch_seconds).sum::<f64>() / self.metrics.len() as f64
    }

    /// Per-epoch CSV. Wall time is omitted when `with_time` is false, which
    /// makes the table a pure function of the seed.
    pub fn metrics_csv(&self, with_time: bool) -> String {
        let mut out = String::from("epoch,loss,accuracy,val_loss,val_accuracy");
        out.push_str(if with_time { ",epoch_seconds\n" } else { "\n" });
        for m in &self.metrics {
            out.push_str(&format!("{},{},{},{},{}", m.epoch, m.loss, m.accuracy, m.val_loss, m.val_accuracy));
            if with_time {
                out.push_str(&format!(",{:.6}", m.epoch_seconds));
            }
            out.push('\n');
        }
        out
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        save_model(&self.model, &self.weights)
    }
}

/// Stream ids under the model seed. Parameters use ids from 1 upwards.
const DATA_STREAM: u64 = 1_000_000;
const SHUFFLE_STREAM: u64 = 1_000_001;

pub fn dataset_for(cfg: &TransformerConfig, run: &RunConfig) -> Result<Dataset> {
    make_task(cfg.task, run.n_samples, cfg.ell, cfg.vocab_size, &mut Rng::with_stream(cfg.seed, DATA_STREAM))
}

fn batch_of(samples: &[&Sample]) -> (Vec<usize>, Vec<usize>) {
    let tokens = samples.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    let targets = samples.iter().flat_map(|s| s.targets.iter().copied()).collect();
    (tokens, targets)
}

fn correct(logits: &Matrix, targets: &[usize]) -> usize {
    logits.argmax_rows().iter().zip(targets).filter(|(a, b)| a == b).count()
}

/// Mean loss and accuracy over `samples`, without gradients.
pub fn evaluate(cfg: &TransformerConfig, w: &ModelWeights, samples: &[Sample]) -> Result<(f64, f64)> {
    let (mut loss, mut hits, mut count) = (0.0, 0usize, 0usize);
    for chunk in samples.chunks(256) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (tokens, targets) = batch_of(&refs);
        let out = logits(&mut Eager, w, cfg, &tokens, chunk.len())?;
        loss += out.cross_entropy(&targets)? * targets.len() as f64;
        hits += correct(&out, &targets);
        count += targets.len();
    }
    Ok((loss / count as f64, hits as f64 / count as f64))
}

fn is_alignment(name: &str) -> bool {
    name.ends_with(".attn.wa") || name.ends_with(".attn.ba")
}

/// Builds the dataset and initial weights from the seed, then trains.
pub fn train(cfg: &TransformerConfig, run: &RunConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let data = dataset_for(cfg, run)?;
    train_on(cfg, run, &data, init_model(cfg)?)
}

/// Mini-batch Adam on cross-entropy, starting from `weights`.
pub fn train_on(cfg: &TransformerConfig, run: &RunConfig, data: &Dataset, mut weights: ModelWeights) -> Result<TrainRun> {
    cfg.validate()?;
    run.validate()?;
    let attn_cfg = cfg.attention()?;
    if data.seq_len != cfg.ell || data.vocab_size != cfg.vocab_size || data.task != cfg.task {
        return Err(Error::Contract("dataset does not match the model config".into()));
    }
    let names: Vec<String> = weights.named().into_iter().map(|(n, _)| n).collect();
    let mut adam = Adam::new(&weights.named().into_iter().map(|(_, m)| m.shape()).collect::<Vec<_>>());
    let mut shuffle = Rng::with_stream(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut metrics = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    let mut steps = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=run.epochs {
        let started = Instant::now();
        shuffle.shuffle(&mut order);
        let (mut loss_sum, mut hits, mut count) = (0.0, 0usize, 0usize);
        for idx in order.chunks(run.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let (tokens, targets) = batch_of(&batch);
            let mut tape = Tape::new();
            let vars = weights.map(|m| tape.leaf(m.clone()));
            let out = logits(&mut tape, &vars, cfg, &tokens, batch.len())?;
            let loss = tape.cross_entropy(&out, &targets)?;
            let loss_value = tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Err(Error::Divergence { seed: cfg.seed, step: steps });
            }
            let grads = tape.backward(loss)?;
            loss_sum += loss_value * targets.len() as f64;
            hits += correct(tape.value(out), &targets);
            count += targets.len();

            let mut g: Vec<Matrix> = vars.named().into_iter().map(|(_, v)| grads.wrt(*v).clone()).collect();
            let mut frozen = vec![false; g.len()];
            for (i, name) in names.iter().enumerate() {
                if is_alignment(name) {
                    frozen[i] = run.freeze_alignment;
                    if attn_cfg.constrains_alignment() && name.ends_with(".wa") {
                        g[i] = g[i].lower_triangular();
                    }
                }
            }
            adam.step(&mut weights.tensors_mut(), &g, &frozen, run.learning_rate);
            if attn_cfg.constrains_alignment() {
                for b in &mut weights.blocks {
                    project_causal_in_place(&mut b.attn)?;
                }
            }
            steps += 1;
        }
        let (val_loss, val_accuracy) = evaluate(cfg, &weights, &data.val)?;
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / count as f64,
            accuracy: hits as f64 / count as f64,
            val_loss,
            val_accuracy,
            epoch_seconds: started.elapsed().as_secs_f64(),
        });
        if run.target_val_accuracy.is_some_and(|t| val_accuracy >= t) {
            stop = StopReason::TargetReached;
            break;
        }
        if val_loss < best_val - run.min_delta {
            best_val = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= run.patience {
                stop = StopReason::Plateau;
                break;
            }
        }
    }
    Ok(TrainRun { model: cfg.clone(), run: run.clone(), metrics, stop, steps, weights })
}

/// Attention header keys plus task, vocab_size, n_layers and mlp_hidden;
/// tensors are named as in [`Params::named`].
pub fn save_model(cfg: &TransformerConfig, w: &ModelWeights) -> Result<Checkpoint> {
    let mut header = header_for(&cfg.attention()?, cfg.seed);
    header.extend([
        ("task".to_string(), cfg.task.to_string()),
        ("vocab_size".to_string(), cfg.vocab_size.to_string()),
        ("n_layers".to_string(), cfg.n_layers.to_string()),
        ("mlp_hidden".to_string(), cfg.hidden().to_string()),
    ]);
    Ok(Checkpoint {
        header,
        tensors: w.named().into_iter().map(|(n, m)| (n, m.clone())).collect(),
    })
}

pub fn load_model(ck: &Checkpoint) -> Result<(TransformerConfig, ModelWeights)> {
    let ell = match ck.require("ell")? {
        "none" => return Err(Error::Checkpoint("model checkpoints need ell".into())),
        _ => ck.parse("ell")?,
    };
    let cfg = TransformerConfig {
        variant: ck.require("variant")?.parse()?,
        d_m: ck.parse("d_m")?,
        heads: ck.parse("h")?,
        ell,
        causal: ck.parse("causal")?,
        bias: ck.parse("bias")?,
        vocab_size: ck.parse("vocab_size")?,
        n_layers: ck.parse("n_layers")?,
        mlp_hidden: Some(ck.parse("mlp_hidden")?),
        pooling: Pooling::Mean,
        task: ck.require("task")?.parse()?,
        seed: ck.parse("seed")?,
        alignment_init_noise: ALIGNMENT_INIT_NOISE,
    };
    cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut w = init_model(&cfg)?;
    let names: Vec<String> = w.named().into_iter().map(|(n, _)| n).collect();
    if names.len() != ck.tensors.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {}", names.len(), ck.tensors.len())));
    }
    for (name, slot) in names.iter().zip(w.tensors_mut()) {
        let t = ck
            .tensor(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!("{name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t.clone();
    }
    for b in &w.blocks {
        b.attn.check(&cfg.attention()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok((cfg, w))
}
