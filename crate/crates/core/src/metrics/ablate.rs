//! Ablation harness: trains one model per architecture variant under an
//! identical seed and configuration, evaluates each on the same test
//! split, and assembles a comparison table.

use std::fmt::Write as _;

use crate::error::Result;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{HybridModel, ModelConfig, Variant, WindowInput};
use crate::train::{fit, TrainConfig, TrainReport};

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricsReport,
    pub training: TrainReport,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One line per variant: accuracy, macro precision/recall/F1, AUC.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}  {:>6}",
            "variant", "accuracy", "precision", "recall", "f1", "auc", "epochs"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<14}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>6}",
                row.variant.as_str(),
                row.report.accuracy,
                row.report.macro_precision,
                row.report.macro_recall,
                row.report.macro_f1,
                row.report.macro_auc,
                row.training.history.len()
            );
        }
        out
    }
}

/// Trains and evaluates every requested variant with the same seed and
/// hyperparameters; rows come back in request order. `base` supplies the
/// architecture; only its `variant` field is swapped per row.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    base: &ModelConfig,
    train_config: &TrainConfig,
    variants: &[Variant],
    train_windows: &[WindowInput],
    train_labels: &[usize],
    test_windows: &[WindowInput],
    test_labels: &[usize],
    classes: &[String],
    normal_class: Option<usize>,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let config = ModelConfig {
            variant,
            ..base.clone()
        };
        let mut model = HybridModel::new(config)?;
        let training = fit(&mut model, train_windows, train_labels, classes, train_config)?;
        let evaluation = evaluate(&mut model, test_windows, test_labels, classes, normal_class)?;
        rows.push(AblationRow {
            variant,
            report: evaluation.report,
            training,
        });
    }
    Ok(AblationTable { rows })
}
