use serde::Serialize;

use super::{dataset_for, init_model, train_on, RunConfig, TrainRun, TransformerConfig};
use crate::attention::VariantKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub variant: VariantKind,
    /// Attention parameters summed over layers.
    pub params: usize,
    pub total_params: usize,
    pub epochs: usize,
    /// Mean wall time per epoch in seconds.
    pub epoch_time: f64,
    pub acc: f64,
    pub loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<TrainRun>,
}

/// Header name, accessor, and whether larger values rank higher.
type Column = (&'static str, fn(&ComparisonRow) -> f64, bool);

/// 1 + number of rows strictly better than `x`.
fn rank(values: &[f64], x: f64, higher_is_better: bool) -> usize {
    1 + values
        .iter()
        .filter(|&&y| if higher_is_better { y > x } else { y < x })
        .count()
}

impl Comparison {
    /// Final-epoch metrics plus a competition rank (1 = best) per column.
    pub fn to_csv(&self) -> String {
        let cols: [Column; 6] = [
            ("params", |r| r.params as f64, false),
            ("epoch_time", |r| r.epoch_time, false),
            ("acc", |r| r.acc, true),
            ("loss", |r| r.loss, false),
            ("val_acc", |r| r.val_acc, true),
            ("val_loss", |r| r.val_loss, false),
        ];
        let mut out = String::from("variant,params,epoch_time,acc,loss,val_acc,val_loss,total_params,epochs");
        for (name, _, _) in &cols {
            out.push_str(&format!(",rank_{name}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.variant, r.params, r.epoch_time, r.acc, r.loss, r.val_acc, r.val_loss, r.total_params, r.epochs
            ));
            for (_, get, higher) in &cols {
                let all: Vec<f64> = self.rows.iter().map(get).collect();
                out.push_str(&format!(",{}", rank(&all, get(r), *higher)));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains all four variants from `template` (its `variant` is ignored) on
/// the same data and seeds, one thread per variant.
pub fn compare_variants(template: &TransformerConfig, run: &RunConfig) -> Result<Comparison> {
    let configs: Vec<TransformerConfig> = VariantKind::ALL
        .iter()
        .map(|&variant| TransformerConfig { variant, ..template.clone() })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let data = dataset_for(template, run)?;
    let results: Vec<Result<TrainRun>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| {
                let data = &data;
                s.spawn(move || train_on(c, run, data, init_model(c)?))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("training thread panicked".into()))))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = runs
        .iter()
        .map(|r| {
            let last = r.last();
            ComparisonRow {
                variant: r.model.variant,
                params: r.weights.attention_param_count(),
                total_params: r.weights.param_count(),
                epochs: r.metrics.len(),
                epoch_time: r.mean_epoch_seconds(),
                acc: last.accuracy,
                loss: last.loss,
                val_acc: last.val_accuracy,
                val_loss: last.val_loss,
            }
        })
        .collect();
    Ok(Comparison { rows, runs })
}
