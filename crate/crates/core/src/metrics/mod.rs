//! Evaluation metrics: confusion matrices, per-class precision/recall/F1,
//! macro one-vs-rest ROC AUC, false-positive rate against the benign
//! class, and the full inference-mode evaluation loop.

mod ablate;
mod traces;

pub use ablate::{ablate, AblationRow, AblationTable};
pub use traces::{collect_attention, export_attention, AttentionTrace};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::model::{HybridModel, Mode, WindowInput};
use crate::preprocess::stats::average_ranks;

// ── Confusion matrix ─────────────────────────────────────────────────────

/// C x C count matrix; rows are true classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], predicted: &[usize], classes: Vec<String>) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} true labels against {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let c = classes.len();
        let mut counts = vec![0u64; c * c];
        for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
            if t >= c || p >= c {
                return Err(Error::Data(format!(
                    "row {i}: label pair ({t}, {p}) outside the {c} known classes"
                )));
            }
            counts[t * c + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn count(&self, true_class: usize, predicted_class: usize) -> u64 {
        self.counts[true_class * self.classes.len() + predicted_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of windows whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.classes.len()).map(|p| self.count(c, p)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.classes.len()).map(|c| self.count(c, c)).sum();
        hits as f64 / total as f64
    }
}

// ── Precision / recall / F1 ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced any component to 0.
    pub undefined: bool,
}

/// Per-class precision, recall, and their harmonic mean. Zero denominators
/// (class never predicted, or absent from the truth) yield 0 and raise the
/// `undefined` flag rather than dividing by zero.
pub fn prf1(matrix: &ConfusionMatrix, c: usize) -> ClassMetrics {
    let n = matrix.class_count();
    let tp = matrix.count(c, c) as f64;
    let fp: f64 = (0..n).filter(|&t| t != c).map(|t| matrix.count(t, c) as f64).sum();
    let fn_: f64 = (0..n).filter(|&p| p != c).map(|p| matrix.count(c, p) as f64).sum();
    let mut undefined = false;
    let precision = if tp + fp == 0.0 {
        undefined = true;
        0.0
    } else {
        tp / (tp + fp)
    };
    let recall = if tp + fn_ == 0.0 {
        undefined = true;
        0.0
    } else {
        tp / (tp + fn_)
    };
    let f1 = if precision + recall == 0.0 {
        undefined = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        undefined,
    }
}

// ── ROC AUC ──────────────────────────────────────────────────────────────

/// One-vs-rest AUC for a single score column via the rank statistic
/// (positive-negative pairs, ties worth one half). Errors when either side
/// is empty.
pub fn roc_auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Data(format!(
            "{} scores against {} indicators",
            scores.len(),
            positive.len()
        )));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "AUC needs both sides, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| *r)
        .sum();
    let u = rank_sum - (n_pos as f64) * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUC over C probability columns. Classes lacking
/// positives or negatives are excluded from the mean and reported back.
pub fn macro_auc_ovr(
    probabilities: &[Vec<f64>],
    labels: &[usize],
    class_count: usize,
) -> Result<(Vec<Option<f64>>, f64, Vec<String>)> {
    let mut per_class = Vec::with_capacity(class_count);
    let mut warnings = Vec::new();
    let mut sum = 0.0;
    let mut defined = 0usize;
    for c in 0..class_count {
        let scores: Vec<f64> = probabilities.iter().map(|row| row[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match roc_auc_binary(&scores, &positive) {
            Ok(auc) => {
                per_class.push(Some(auc));
                sum += auc;
                defined += 1;
            }
            Err(_) => {
                per_class.push(None);
                warnings.push(format!(
                    "class {c} has no positive/negative split, excluded from macro AUC"
                ));
            }
        }
    }
    let macro_auc = if defined == 0 {
        warnings.push("no class had a defined AUC".to_string());
        0.0
    } else {
        sum / defined as f64
    };
    Ok((per_class, macro_auc, warnings))
}

// ── Reports ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub support: Vec<u64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: f64,
    /// Share of benign windows classified as any attack; 0 when no benign
    /// class is configured or present.
    pub false_positive_rate: f64,
    pub normal_class: Option<usize>,
    pub warnings: Vec<String>,
}

/// Builds the full report from a confusion matrix plus per-window class
/// probabilities. Macro precision/recall/F1 average over classes present
/// in the truth; absent classes are excluded with a warning, mirroring the
/// AUC exclusion rule.
pub fn report_from_counts(
    matrix: &ConfusionMatrix,
    probabilities: &[Vec<f64>],
    labels: &[usize],
    normal_class: Option<usize>,
) -> Result<MetricsReport> {
    let c = matrix.class_count();
    let per_class: Vec<ClassMetrics> = (0..c).map(|i| prf1(matrix, i)).collect();
    let support: Vec<u64> = (0..c).map(|i| matrix.support(i)).collect();
    let mut warnings = Vec::new();
    let mut sums = (0.0, 0.0, 0.0);
    let mut present = 0usize;
    for i in 0..c {
        if support[i] == 0 {
            warnings.push(format!(
                "class '{}' absent from the evaluation set, excluded from macro averages",
                matrix.classes[i]
            ));
            continue;
        }
        sums.0 += per_class[i].precision;
        sums.1 += per_class[i].recall;
        sums.2 += per_class[i].f1;
        present += 1;
    }
    let denom = present.max(1) as f64;
    let (per_class_auc, macro_auc, auc_warnings) = macro_auc_ovr(probabilities, labels, c)?;
    warnings.extend(auc_warnings);

    let false_positive_rate = match normal_class {
        Some(n) if n < c => {
            let normal_total = support[n];
            if normal_total == 0 {
                warnings.push("no benign windows present, false-positive rate reported as 0".into());
                0.0
            } else {
                let escaped: u64 = (0..c).filter(|&p| p != n).map(|p| matrix.count(n, p)).sum();
                escaped as f64 / normal_total as f64
            }
        }
        Some(n) => {
            return Err(Error::Config(format!(
                "benign class index {n} outside the {c} known classes"
            )))
        }
        None => {
            warnings.push("no benign class configured, false-positive rate reported as 0".into());
            0.0
        }
    };

    Ok(MetricsReport {
        classes: matrix.classes.clone(),
        accuracy: matrix.accuracy(),
        per_class,
        support,
        macro_precision: sums.0 / denom,
        macro_recall: sums.1 / denom,
        macro_f1: sums.2 / denom,
        per_class_auc,
        macro_auc,
        false_positive_rate,
        normal_class,
        warnings,
    })
}

impl MetricsReport {
    /// Per-class table plus a machine-readable key=value block.
    pub fn to_text(&self, matrix: &ConfusionMatrix) -> String {
        let mut out = String::new();
        let name_width = self
            .classes
            .iter()
            .map(|c| c.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>7}",
            "class", "precision", "recall", "f1", "auc", "support"
        );
        for (i, m) in self.per_class.iter().enumerate() {
            let auc = match self.per_class_auc[i] {
                Some(a) => format!("{a:.4}"),
                None => "-".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<name_width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}  {:>7}",
                self.classes[i], m.precision, m.recall, m.f1, auc, self.support[i]
            );
        }
        out.push('\n');
        let _ = writeln!(out, "confusion matrix (rows = true class):");
        for t in 0..self.classes.len() {
            let row: Vec<String> = (0..self.classes.len())
                .map(|p| matrix.count(t, p).to_string())
                .collect();
            let _ = writeln!(out, "{:<name_width$}  {}", self.classes[t], row.join(" "));
        }
        out.push('\n');
        let _ = writeln!(out, "accuracy={}", self.accuracy);
        let _ = writeln!(out, "macro_precision={}", self.macro_precision);
        let _ = writeln!(out, "macro_recall={}", self.macro_recall);
        let _ = writeln!(out, "macro_f1={}", self.macro_f1);
        let _ = writeln!(out, "macro_auc={}", self.macro_auc);
        let _ = writeln!(out, "false_positive_rate={}", self.false_positive_rate);
        let _ = writeln!(out, "windows={}", matrix.total());
        for w in &self.warnings {
            let _ = writeln!(out, "# warning: {w}");
        }
        out
    }
}

// ── Evaluation loop ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub predicted: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

/// Lowest index wins ties, so argmax over a uniform row is class 0.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode forward over every window followed by report assembly.
/// Batchnorm running statistics are read, never updated.
pub fn evaluate(
    model: &mut HybridModel,
    windows: &[WindowInput],
    labels: &[usize],
    classes: &[String],
    normal_class: Option<usize>,
) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".to_string()));
    }
    if windows.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} windows against {} labels",
            windows.len(),
            labels.len()
        )));
    }
    if classes.len() < model.config.classes {
        return Err(Error::Config(format!(
            "{} class names for a {}-way classifier",
            classes.len(),
            model.config.classes
        )));
    }
    let mut probabilities = Vec::with_capacity(windows.len());
    let mut predicted = Vec::with_capacity(windows.len());
    // Inference consumes no randomness; the generator is a fixed stub.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for window in windows {
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape)?;
        let out = model.forward_window(&mut tape, &binding, window, Mode::Infer, &mut rng)?;
        let row = tape.values(out.probs).to_vec();
        predicted.push(argmax(&row));
        probabilities.push(row);
    }
    let confusion = ConfusionMatrix::new(labels, &predicted, classes.to_vec())?;
    let report = report_from_counts(&confusion, &probabilities, labels, normal_class)?;
    Ok(Evaluation {
        report,
        confusion,
        predicted,
        probabilities,
    })
}
