//! Attention-trace export: per-window, per-head weight matrices plus a
//! per-step salience summary, written as a line-oriented text file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::model::{HybridModel, Mode, WindowInput};

/// One window's attention record.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub window: usize,
    pub t: usize,
    pub true_class: String,
    pub predicted_class: String,
    /// One row-major T x T matrix per head.
    pub heads: Vec<Vec<f64>>,
    /// Per-step weight received, averaged over heads (column sums); sums
    /// to T because every row is a distribution.
    pub salience: Vec<f64>,
}

/// Runs inference over the windows and collects attention weights. Every
/// weight row must sum to 1 within 1e-9 or the export is aborted.
pub fn collect_attention(
    model: &mut HybridModel,
    windows: &[WindowInput],
    labels: &[usize],
    classes: &[String],
) -> Result<Vec<AttentionTrace>> {
    if !model.config.variant.uses_attention() {
        return Err(Error::Config(format!(
            "the {} variant has no attention stage to trace",
            model.config.variant
        )));
    }
    if windows.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} windows against {} labels",
            windows.len(),
            labels.len()
        )));
    }
    let t_len = model.config.seq_len;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut traces = Vec::with_capacity(windows.len());
    for (w, window) in windows.iter().enumerate() {
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape)?;
        let out = model.forward_window(&mut tape, &binding, window, Mode::Infer, &mut rng)?;
        let predicted = argmax(tape.values(out.probs));
        let mut heads = Vec::with_capacity(out.attention.len());
        let mut salience = vec![0.0; t_len];
        for &id in &out.attention {
            let values = tape.values(id).to_vec();
            for (r, row) in values.chunks(t_len).enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Numeric(format!(
                        "window {w}: attention row {r} sums to {sum}"
                    )));
                }
                for (j, &v) in row.iter().enumerate() {
                    salience[j] += v;
                }
            }
            heads.push(values);
        }
        let head_count = heads.len() as f64;
        salience.iter_mut().for_each(|s| *s /= head_count);
        let class_name = |c: usize| {
            classes
                .get(c)
                .cloned()
                .unwrap_or_else(|| format!("class{c}"))
        };
        traces.push(AttentionTrace {
            window: w,
            t: t_len,
            true_class: class_name(labels[w]),
            predicted_class: class_name(predicted),
            heads,
            salience,
        });
    }
    Ok(traces)
}

fn render(traces: &[AttentionTrace], heads: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# attention traces: one block per window");
    let _ = writeln!(out, "# each head lists T rows of T weights; rows sum to 1");
    for trace in traces {
        let _ = writeln!(
            out,
            "window {} t={} heads={} true={} pred={}",
            trace.window, trace.t, heads, trace.true_class, trace.predicted_class
        );
        for (h, matrix) in trace.heads.iter().enumerate() {
            let _ = writeln!(out, "# head {h}");
            for row in matrix.chunks(trace.t) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                let _ = writeln!(out, "{}", cells.join(" "));
            }
        }
        let cells: Vec<String> = trace.salience.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "# salience");
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

/// Collects and writes traces for every window.
pub fn export_attention(
    model: &mut HybridModel,
    windows: &[WindowInput],
    labels: &[usize],
    classes: &[String],
    path: &Path,
) -> Result<Vec<AttentionTrace>> {
    let traces = collect_attention(model, windows, labels, classes)?;
    fs::write(path, render(&traces, model.config.heads))?;
    Ok(traces)
}
