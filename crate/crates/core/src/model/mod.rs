//! The hybrid classifier: graph convolution over each window's traffic
//! graph, a bidirectional LSTM over the window's event sequence, multi-head
//! self-attention over time steps, and a pooled softmax classifier.
//!
//! Ablation variants of the same network share this module: each variant
//! drops or isolates one stage while keeping parameter initialization,
//! training, and evaluation identical.

mod forward;
mod params;

pub use forward::{ForwardOutput, TapeBinding};
pub use params::{ParamEntry, ParamKind, Params};

use crate::error::{Error, Result};

/// Forward-pass mode. Training enables dropout and batch statistics;
/// inference is deterministic and uses running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// Architecture variants for the ablation study. `LstmOnly` deliberately
/// shares the `NoGnn` wiring (projected event features into the LSTM with
/// attention retained); the ablation table reports both rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoAttention,
    NoGnn,
    NoLstm,
    GnnOnly,
    LstmOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoAttention,
        Variant::NoGnn,
        Variant::NoLstm,
        Variant::GnnOnly,
        Variant::LstmOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAttention => "no_attention",
            Variant::NoGnn => "no_gnn",
            Variant::NoLstm => "no_lstm",
            Variant::GnnOnly => "gnn_only",
            Variant::LstmOnly => "lstm_only",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model variant '{s}' (expected one of full, no_attention, \
                     no_gnn, no_lstm, gnn_only, lstm_only)"
                ))
            })
    }

    pub(crate) fn uses_gcn(self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::NoAttention | Variant::NoLstm | Variant::GnnOnly
        )
    }

    pub(crate) fn uses_lstm(self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::NoAttention | Variant::NoGnn | Variant::LstmOnly
        )
    }

    pub(crate) fn uses_attention(self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::NoGnn | Variant::NoLstm | Variant::LstmOnly
        )
    }

    /// Variants that need an input projection: tabular features into the
    /// LSTM width, or graph step embeddings into the attention width.
    pub(crate) fn uses_projection(self) -> bool {
        matches!(self, Variant::NoGnn | Variant::LstmOnly | Variant::NoLstm)
    }

    pub(crate) fn uses_tabular(self) -> bool {
        matches!(self, Variant::NoGnn | Variant::LstmOnly)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters. The defaults are the reference configuration; tests
/// and the desk-scale pipeline shrink the dimensions, never the wiring.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width of a node-feature row.
    pub node_dim: usize,
    /// Output width of each graph convolution layer.
    pub gcn_dims: Vec<usize>,
    pub gcn_dropout: f64,
    pub lstm_layers: usize,
    /// Hidden size per direction; a step representation is twice this.
    pub lstm_hidden: usize,
    /// Dropout between stacked LSTM layers.
    pub lstm_dropout: f64,
    pub heads: usize,
    pub head_dim: usize,
    pub classes: usize,
    /// Events per window.
    pub seq_len: usize,
    /// Weight-decay coefficient on weight matrices.
    pub l2: f64,
    /// Parameter-initialization seed.
    pub seed: u64,
    pub variant: Variant,
    /// Width of a per-event tabular feature row (tabular variants only).
    pub tabular_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            node_dim: crate::graph::NODE_FEATURE_DIM,
            gcn_dims: vec![128, 64, 32],
            gcn_dropout: 0.3,
            lstm_layers: 2,
            lstm_hidden: 64,
            lstm_dropout: 0.2,
            heads: 4,
            head_dim: 32,
            classes: 5,
            seq_len: 50,
            l2: 1e-5,
            seed: 42,
            variant: Variant::Full,
            tabular_dim: 35,
        }
    }
}

impl ModelConfig {
    /// Output width of the graph convolution stack; also the step-embedding
    /// width fed to the sequence stages.
    pub fn gcn_out(&self) -> usize {
        *self.gcn_dims.last().expect("validated nonempty")
    }

    /// Width of the representation entering attention.
    pub fn attention_in(&self) -> usize {
        match self.variant {
            Variant::NoLstm => self.heads * self.head_dim,
            _ => 2 * self.lstm_hidden,
        }
    }

    /// Width of the pooled vector entering the classifier.
    pub fn classifier_in(&self) -> usize {
        match self.variant {
            Variant::GnnOnly => self.gcn_out(),
            Variant::NoAttention => 2 * self.lstm_hidden,
            _ => self.heads * self.head_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.gcn_dims.is_empty() || self.gcn_dims.iter().any(|&d| d == 0) {
            return fail("gcn dims must be nonempty and positive".into());
        }
        if self.node_dim == 0 {
            return fail("node feature width must be positive".into());
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return fail("lstm layers and hidden size must be positive".into());
        }
        if self.heads == 0 || self.head_dim == 0 {
            return fail("attention heads and head width must be positive".into());
        }
        if self.classes < 2 {
            return fail(format!("need at least two classes, got {}", self.classes));
        }
        if self.seq_len == 0 {
            return fail("sequence length must be positive".into());
        }
        for (name, rate) in [("gcn", self.gcn_dropout), ("lstm", self.lstm_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} dropout must lie in [0, 1), got {rate}"));
            }
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail(format!("l2 coefficient must be finite and >= 0, got {}", self.l2));
        }
        if self.variant.uses_tabular() && self.tabular_dim == 0 {
            return fail("tabular feature width must be positive for this variant".into());
        }
        // Attention over LSTM states concatenates heads back to the step
        // width, so the head layout must tile it exactly.
        let attends_lstm = self.variant.uses_lstm() && self.variant.uses_attention();
        if attends_lstm && self.heads * self.head_dim != 2 * self.lstm_hidden {
            return fail(format!(
                "heads x head_dim must equal twice the lstm hidden size: {} x {} != 2 x {}",
                self.heads, self.head_dim, self.lstm_hidden
            ));
        }
        Ok(())
    }
}

/// One window, ready for the model: the normalized graph, its node
/// statistics, the per-step endpoint indices, and the per-step tabular
/// rows for graph-free variants.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInput {
    pub n_nodes: usize,
    /// Row-major n x n normalized adjacency.
    pub adjacency: Vec<f64>,
    /// Row-major n x node_dim raw node statistics.
    pub node_x: Vec<f64>,
    /// (src, dst) node index per event, oldest first; length = seq_len.
    pub steps: Vec<(usize, usize)>,
    /// Row-major seq_len x tabular_dim event features.
    pub tabular: Vec<f64>,
}

/// Configuration plus parameters plus batchnorm running state.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub config: ModelConfig,
    pub params: Params,
}

impl HybridModel {
    /// Builds a freshly initialized model; initialization is deterministic
    /// in `config.seed`.
    pub fn new(config: ModelConfig) -> Result<HybridModel> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(HybridModel { config, params })
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.entries.iter().map(|e| e.values.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn head_layout_mismatch_is_rejected() {
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_layout_unconstrained_without_lstm_attention_path() {
        let cfg = ModelConfig {
            variant: Variant::NoLstm,
            heads: 3,
            head_dim: 8,
            ..ModelConfig::default()
        };
        cfg.validate().unwrap();
        let cfg = ModelConfig {
            variant: Variant::GnnOnly,
            heads: 3,
            ..ModelConfig::default()
        };
        cfg.validate().unwrap();
    }

    #[test]
    fn degenerate_dims_are_rejected() {
        for cfg in [
            ModelConfig {
                gcn_dims: vec![],
                ..ModelConfig::default()
            },
            ModelConfig {
                gcn_dims: vec![8, 0],
                ..ModelConfig::default()
            },
            ModelConfig {
                classes: 1,
                ..ModelConfig::default()
            },
            ModelConfig {
                gcn_dropout: 1.0,
                ..ModelConfig::default()
            },
            ModelConfig {
                seq_len: 0,
                ..ModelConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
        }
        assert!(Variant::parse("bidirectional").is_err());
    }

    #[test]
    fn classifier_width_tracks_variant() {
        let base = ModelConfig::default();
        assert_eq!(base.classifier_in(), 128);
        let gnn_only = ModelConfig {
            variant: Variant::GnnOnly,
            ..base.clone()
        };
        assert_eq!(gnn_only.classifier_in(), 32);
        let no_attention = ModelConfig {
            variant: Variant::NoAttention,
            ..base
        };
        assert_eq!(no_attention.classifier_in(), 128);
    }
}
