//! Confusion matrices, classification metrics and report rendering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledPayload;
use crate::model::{predict, Checkpoint, CheckpointError, Model, ModelError};
use crate::tokenizer::encode_batch;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: u32, k: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![vec![0; k]; k] }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        assert!(counts.iter().all(|r| r.len() == counts.len()), "confusion matrix must be square");
        Self { counts }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    fn column(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    fn row(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }
}

pub fn confusion(truth: &[u32], predicted: &[u32], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label as usize >= k {
                return Err(EvalError::LabelOutOfRange { label, k });
            }
        }
        cm.counts[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Binary,
    Multiclass,
}

impl Mode {
    pub fn num_labels(self) -> usize {
        match self {
            Mode::Binary => 2,
            Mode::Multiclass => 3,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Mode::Binary),
            "multiclass" => Ok(Mode::Multiclass),
            other => Err(format!("unknown mode {other:?} (expected binary or multiclass)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Binary => "binary",
            Mode::Multiclass => "multiclass",
        })
    }
}

/// One-vs-rest metrics for a single class. The `*_undefined` flags mark a
/// zero denominator; the value is then reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub samples: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Aggregate,
    pub weighted_avg: Aggregate,
    pub micro_avg: Aggregate,
    /// Binary runs only: the metrics of label 1 (malicious).
    pub positive: Option<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint_id: Option<String>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision == 0.0 || recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix, mode: Mode) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = cm.k();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let (precision, precision_undefined) = ratio(tp, cm.column(c));
            let (recall, recall_undefined) = ratio(tp, cm.row(c));
            ClassMetrics {
                label: c as u32,
                precision,
                recall,
                f1: f1(precision, recall),
                support: cm.row(c),
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();

    let kf = k as f64;
    let macro_avg = Aggregate {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
    };
    let weight = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64;
    let weighted_avg = Aggregate {
        precision: weight(|m| m.precision),
        recall: weight(|m| m.recall),
        f1: weight(|m| m.f1),
    };
    // every sample is one prediction, so pooled precision and recall are both trace/total
    let accuracy = cm.trace() as f64 / total as f64;
    let micro_avg = Aggregate { precision: accuracy, recall: accuracy, f1: accuracy };
    let positive = match mode {
        Mode::Binary => per_class.get(1).cloned(),
        Mode::Multiclass => None,
    };
    Ok(MetricsReport {
        mode,
        samples: total,
        accuracy,
        per_class,
        macro_avg,
        weighted_avg,
        micro_avg,
        positive,
        confusion: cm.clone(),
        dataset_id: None,
        checkpoint_id: None,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl MetricsReport {
    /// The headline (precision, recall, F1): positive class for binary
    /// runs, weighted average for multiclass.
    pub fn headline(&self) -> Aggregate {
        match (&self.positive, self.mode) {
            (Some(p), Mode::Binary) => Aggregate { precision: p.precision, recall: p.recall, f1: p.f1 },
            _ => self.weighted_avg,
        }
    }

    /// One `Method | Accuracy | Precision | Recall | F1-Score` row in percent.
    pub fn table_row(&self, method: &str) -> String {
        let h = self.headline();
        format!(
            "{method:<24} {:>9} {:>10} {:>8} {:>9}",
            pct(self.accuracy),
            pct(h.precision),
            pct(h.recall),
            pct(h.f1)
        )
    }

    pub fn table_header() -> String {
        format!("{:<24} {:>9} {:>10} {:>8} {:>9}", "Method", "Accuracy", "Precision", "Recall", "F1-Score")
    }

    /// Aligned text: the headline row, every aggregate, per-class rows and
    /// the confusion matrix.
    pub fn render_text(&self, method: &str) -> String {
        let mut out = String::new();
        out.push_str(&Self::table_header());
        out.push('\n');
        out.push_str(&self.table_row(method));
        out.push_str("\n\n");
        out.push_str(&format!("{:<12} {:>10} {:>8} {:>9} {:>8}\n", "", "Precision", "Recall", "F1-Score", "Support"));
        for m in &self.per_class {
            let flag = if m.precision_undefined || m.recall_undefined { " *" } else { "" };
            out.push_str(&format!(
                "{:<12} {:>10} {:>8} {:>9} {:>8}{flag}\n",
                format!("class {}", m.label),
                pct(m.precision),
                pct(m.recall),
                pct(m.f1),
                m.support
            ));
        }
        for (name, a) in [("macro", self.macro_avg), ("weighted", self.weighted_avg), ("micro", self.micro_avg)] {
            out.push_str(&format!(
                "{:<12} {:>10} {:>8} {:>9} {:>8}\n",
                name,
                pct(a.precision),
                pct(a.recall),
                pct(a.f1),
                self.samples
            ));
        }
        if self.per_class.iter().any(|m| m.precision_undefined || m.recall_undefined) {
            out.push_str("* zero denominator, reported as 0\n");
        }
        out.push_str("\nconfusion (rows true, columns predicted)\n");
        for row in &self.confusion.counts {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>8}")).collect();
            out.push_str(&cells.join(""));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Batched inference over labeled payloads, batches run in parallel.
/// Returns the predicted labels and the mean cross-entropy loss.
pub fn infer(model: &Model, data: &[LabeledPayload], batch_size: usize) -> Result<(Vec<u32>, f64), EvalError> {
    let k = model.config.num_labels;
    if let Some(bad) = data.iter().find(|d| d.label as usize >= k) {
        return Err(EvalError::LabelOutOfRange { label: bad.label, k });
    }
    let per_batch: Vec<(Vec<u32>, f64)> = data
        .par_chunks(batch_size.max(1))
        .map(|chunk| -> Result<(Vec<u32>, f64), EvalError> {
            let payloads: Vec<&[u8]> = chunk.iter().map(|d| d.payload.as_slice()).collect();
            let batch = encode_batch(&payloads, model.config.max_position_embeddings);
            let logits = model.logits(&batch)?;
            let loss: f64 = logits
                .data()
                .chunks(k)
                .zip(chunk)
                .map(|(row, d)| crate::tensor::nll(row, d.label as usize) as f64)
                .sum();
            Ok((predict(&logits), loss))
        })
        .collect::<Result<_, _>>()?;
    let mut preds = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for (p, l) in per_batch {
        preds.extend(p);
        loss += l;
    }
    Ok((preds, if data.is_empty() { 0.0 } else { loss / data.len() as f64 }))
}

/// Scores a model on a labeled split.
pub fn evaluate(model: &Model, data: &[LabeledPayload], mode: Mode, batch_size: usize) -> Result<MetricsReport, EvalError> {
    if model.config.num_labels != mode.num_labels() {
        return Err(CheckpointError::VersionMismatch {
            field: "num_labels".into(),
            expected: mode.num_labels().to_string(),
            found: model.config.num_labels.to_string(),
        }
        .into());
    }
    if data.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let (preds, _) = infer(model, data, batch_size)?;
    let truth: Vec<u32> = data.iter().map(|d| d.label).collect();
    let cm = confusion(&truth, &preds, mode.num_labels())?;
    metrics(&cm, mode)
}

pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    data: &[LabeledPayload],
    mode: Mode,
    batch_size: usize,
) -> Result<MetricsReport, EvalError> {
    checkpoint.require_num_labels(mode.num_labels())?;
    evaluate(&checkpoint.model()?, data, mode, batch_size)
}
