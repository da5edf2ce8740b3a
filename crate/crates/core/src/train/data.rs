use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Label is the most frequent token; ties go to the smaller id.
    Majority,
    /// Label is 1 iff the first token occurs again later in the sequence.
    CopyDetect,
    /// Next-token prediction on sequences from a random Markov chain.
    CharLm,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Majority => "majority",
            Task::CopyDetect => "copy-detect",
            Task::CharLm => "char-lm",
        }
    }

    /// Whether targets are per position rather than per sequence.
    pub fn is_sequence_labelling(self) -> bool {
        self == Task::CharLm
    }

    pub fn n_classes(self, vocab_size: usize) -> usize {
        match self {
            Task::CopyDetect => 2,
            Task::Majority | Task::CharLm => vocab_size,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Task::Majority),
            "copy-detect" => Ok(Task::CopyDetect),
            "char-lm" => Ok(Task::CharLm),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<usize>,
    /// One entry for classification tasks, `tokens.len()` for char-lm.
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.task.n_classes(self.vocab_size)
    }
}

/// Most frequent token, smallest id on ties.
pub fn majority_label(tokens: &[usize], vocab_size: usize) -> usize {
    let mut counts = vec![0usize; vocab_size];
    for &t in tokens {
        counts[t] += 1;
    }
    let mut best = 0;
    for (t, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = t;
        }
    }
    best
}

pub fn copy_label(tokens: &[usize]) -> usize {
    usize::from(tokens[1..].contains(&tokens[0]))
}

fn majority_sample(seq_len: usize, vocab_size: usize, rng: &mut Rng) -> Sample {
    let tokens: Vec<usize> = (0..seq_len).map(|_| rng.index(vocab_size)).collect();
    let label = majority_label(&tokens, vocab_size);
    Sample { tokens, targets: vec![label] }
}

/// Draws the label first, then a sequence that has it, so the classes are
/// balanced by construction.
fn copy_sample(seq_len: usize, vocab_size: usize, rng: &mut Rng) -> Sample {
    let first = rng.index(vocab_size);
    let positive = rng.bernoulli(0.5);
    let mut tokens = vec![first];
    for _ in 1..seq_len {
        let t = if positive {
            rng.index(vocab_size)
        } else {
            let t = rng.index(vocab_size - 1);
            if t >= first {
                t + 1
            } else {
                t
            }
        };
        tokens.push(t);
    }
    if positive && !tokens[1..].contains(&first) {
        let at = 1 + rng.index(seq_len - 1);
        tokens[at] = first;
    }
    let label = copy_label(&tokens);
    Sample { tokens, targets: vec![label] }
}

/// Row-stochastic transition table in which every token has three likely
/// successors.
fn markov_chain(vocab_size: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..vocab_size)
        .map(|_| {
            let mut row: Vec<f64> = (0..vocab_size).map(|_| 0.05 * rng.unit()).collect();
            for _ in 0..3 {
                row[rng.index(vocab_size)] += 1.0;
            }
            let total: f64 = row.iter().sum();
            row.iter().map(|p| p / total).collect()
        })
        .collect()
}

fn draw(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.unit();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn lm_sample(seq_len: usize, chain: &[Vec<f64>], rng: &mut Rng) -> Sample {
    let mut seq = vec![rng.index(chain.len())];
    for _ in 0..seq_len {
        let next = draw(&chain[*seq.last().expect("non-empty")], rng);
        seq.push(next);
    }
    Sample { tokens: seq[..seq_len].to_vec(), targets: seq[1..].to_vec() }
}

/// Generates `n_samples` i.i.d. samples; the first 90% are the training split.
pub fn make_task(task: Task, n_samples: usize, seq_len: usize, vocab_size: usize, rng: &mut Rng) -> Result<Dataset> {
    if vocab_size < 2 {
        return Err(Error::Config(format!("vocab_size must be at least 2, got {vocab_size}")));
    }
    let min_len = if task == Task::CopyDetect { 2 } else { 1 };
    if seq_len < min_len {
        return Err(Error::Config(format!("{task} needs sequences of length >= {min_len}")));
    }
    if n_samples < 2 {
        return Err(Error::Config("need at least 2 samples for a train/val split".into()));
    }
    let chain = (task == Task::CharLm).then(|| markov_chain(vocab_size, rng));
    let mut samples: Vec<Sample> = (0..n_samples)
        .map(|_| match task {
            Task::Majority => majority_sample(seq_len, vocab_size, rng),
            Task::CopyDetect => copy_sample(seq_len, vocab_size, rng),
            Task::CharLm => lm_sample(seq_len, chain.as_ref().expect("built above"), rng),
        })
        .collect();
    let n_train = (n_samples * 9 / 10).max(1);
    let val = samples.split_off(n_train);
    Ok(Dataset { task, seq_len, vocab_size, train: samples, val })
}
