//! Parameter storage, initialization, and the binary checkpoint format.
//!
//! Parameters live outside any tape as named row-major matrices in one
//! canonical order (a pure function of the config):
//!
//! 1. `gcn.{l}.weight`, `gcn.{l}.bn.gamma`, `gcn.{l}.bn.beta` per layer;
//! 2. `proj.weight`, `proj.bias` for variants with an input projection;
//! 3. `lstm.{l}.{fw|bw}.{w_xi,w_hi,b_i,w_xf,w_hf,b_f,w_xo,w_ho,b_o,w_xc,w_hc,b_c}`;
//! 4. `attn.{h}.w_q`, `attn.{h}.w_k`, `attn.{h}.w_v` per head, then `attn.w_o`;
//! 5. `clf.weight`, `clf.bias`.
//!
//! Weight matrices draw Glorot-uniform values; biases start at zero except
//! the forget-gate bias `b_f`, which starts at 1 so early training does not
//! flush cell state. Initialization consumes one seeded generator in entry
//! order, making parameters a deterministic function of (config, seed).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Variant};
use crate::autograd::RunningStats;
use crate::error::{Error, Result};

/// Regularization class of a parameter: only `Weight` entries enter the
/// L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Batchnorm affine parameters.
    Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub kind: ParamKind,
}

/// All learnable state plus batchnorm running statistics (one per GCN
/// layer, indexed like `gcn_dims`).
#[derive(Debug, Clone)]
pub struct Params {
    pub entries: Vec<ParamEntry>,
    pub running: Vec<RunningStats>,
    index: HashMap<String, usize>,
}

/// Momentum of the batchnorm running statistics:
/// running <- momentum * running + (1 - momentum) * batch.
const BN_MOMENTUM: f64 = 0.9;

struct EntrySpec {
    name: String,
    rows: usize,
    cols: usize,
    kind: ParamKind,
}

/// The canonical entry list for a config. Checkpoint loading validates
/// against this, so shapes and order can never drift from the config.
fn entry_specs(config: &ModelConfig) -> Vec<EntrySpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, kind: ParamKind| {
        specs.push(EntrySpec {
            name,
            rows,
            cols,
            kind,
        });
    };
    let v = config.variant;
    if v.uses_gcn() {
        let mut input = config.node_dim;
        for (l, &dim) in config.gcn_dims.iter().enumerate() {
            push(format!("gcn.{l}.weight"), input, dim, ParamKind::Weight);
            push(format!("gcn.{l}.bn.gamma"), 1, dim, ParamKind::Norm);
            push(format!("gcn.{l}.bn.beta"), 1, dim, ParamKind::Norm);
            input = dim;
        }
    }
    if v.uses_projection() {
        let (rows, cols) = if v.uses_tabular() {
            (config.tabular_dim, config.gcn_out())
        } else {
            // Graph step embeddings widened to the attention width.
            (config.gcn_out(), config.heads * config.head_dim)
        };
        push("proj.weight".into(), rows, cols, ParamKind::Weight);
        push("proj.bias".into(), 1, cols, ParamKind::Bias);
    }
    if v.uses_lstm() {
        let h = config.lstm_hidden;
        for l in 0..config.lstm_layers {
            let input = if l == 0 { config.gcn_out() } else { 2 * h };
            for dir in ["fw", "bw"] {
                for gate in ["i", "f", "o", "c"] {
                    push(
                        format!("lstm.{l}.{dir}.w_x{gate}"),
                        input,
                        h,
                        ParamKind::Weight,
                    );
                    push(format!("lstm.{l}.{dir}.w_h{gate}"), h, h, ParamKind::Weight);
                    push(format!("lstm.{l}.{dir}.b_{gate}"), 1, h, ParamKind::Bias);
                }
            }
        }
    }
    if v.uses_attention() {
        let width = config.attention_in();
        for head in 0..config.heads {
            for proj in ["w_q", "w_k", "w_v"] {
                push(
                    format!("attn.{head}.{proj}"),
                    width,
                    config.head_dim,
                    ParamKind::Weight,
                );
            }
        }
        let concat = config.heads * config.head_dim;
        push("attn.w_o".into(), concat, concat, ParamKind::Weight);
    }
    push(
        "clf.weight".into(),
        config.classifier_in(),
        config.classes,
        ParamKind::Weight,
    );
    push("clf.bias".into(), 1, config.classes, ParamKind::Bias);
    specs
}

impl Params {
    pub fn init(config: &ModelConfig) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let entries: Vec<ParamEntry> = entry_specs(config)
            .into_iter()
            .map(|spec| {
                let n = spec.rows * spec.cols;
                let values = match spec.kind {
                    ParamKind::Weight => {
                        let limit = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                    }
                    ParamKind::Bias if spec.name.ends_with(".b_f") => vec![1.0; n],
                    ParamKind::Bias => vec![0.0; n],
                    ParamKind::Norm if spec.name.ends_with(".gamma") => vec![1.0; n],
                    ParamKind::Norm => vec![0.0; n],
                };
                ParamEntry {
                    name: spec.name,
                    rows: spec.rows,
                    cols: spec.cols,
                    values,
                    kind: spec.kind,
                }
            })
            .collect();
        let running = if config.variant.uses_gcn() {
            config
                .gcn_dims
                .iter()
                .map(|&d| RunningStats::new(d, BN_MOMENTUM))
                .collect()
        } else {
            Vec::new()
        };
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        Params {
            entries,
            running,
            index,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &ParamEntry {
        &self.entries[self.index[name]]
    }
}

// ── Checkpoint format ───────────────────────────────────────────────────
//
// Little-endian binary: magic "FSNT", format version u32, the config, the
// running statistics, then every entry in canonical order as
// (name, rows, cols, kind, values). Strings are u64 length + UTF-8.

const MAGIC: &[u8; 4] = b"FSNT";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint ends unexpectedly".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("length {v} overflows")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.usize()?;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint holds a non-UTF-8 string".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.usize()?;
        (0..len).map(|_| self.f64()).collect()
    }
}

fn kind_tag(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Weight => 0,
        ParamKind::Bias => 1,
        ParamKind::Norm => 2,
    }
}

fn variant_tag(v: Variant) -> u8 {
    Variant::ALL.iter().position(|x| *x == v).unwrap() as u8
}

impl super::HybridModel {
    /// Writes the versioned checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let c = &self.config;
        w.buf.push(variant_tag(c.variant));
        w.u64(c.node_dim as u64);
        w.u64(c.gcn_dims.len() as u64);
        for &d in &c.gcn_dims {
            w.u64(d as u64);
        }
        w.f64(c.gcn_dropout);
        w.u64(c.lstm_layers as u64);
        w.u64(c.lstm_hidden as u64);
        w.f64(c.lstm_dropout);
        w.u64(c.heads as u64);
        w.u64(c.head_dim as u64);
        w.u64(c.classes as u64);
        w.u64(c.seq_len as u64);
        w.f64(c.l2);
        w.u64(c.seed);
        w.u64(c.tabular_dim as u64);
        w.u64(self.params.running.len() as u64);
        for rs in &self.params.running {
            w.f64(rs.momentum);
            w.f64s(&rs.mean);
            w.f64s(&rs.var);
        }
        w.u64(self.params.entries.len() as u64);
        for e in &self.params.entries {
            w.str(&e.name);
            w.u64(e.rows as u64);
            w.u64(e.cols as u64);
            w.buf.push(kind_tag(e.kind));
            w.f64s(&e.values);
        }
        fs::write(path, w.buf)?;
        Ok(())
    }

    /// Loads and validates a checkpoint: the stored entries must match the
    /// stored config's canonical layout name for name and shape for shape.
    pub fn load(path: &Path) -> Result<super::HybridModel> {
        let buf = fs::read(path)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint format v{version} is not supported (expected v{VERSION})"
            )));
        }
        let variant_tag_v = r.take(1)?[0];
        let variant = *Variant::ALL
            .get(variant_tag_v as usize)
            .ok_or_else(|| Error::Format(format!("unknown variant tag {variant_tag_v}")))?;
        let node_dim = r.usize()?;
        let gcn_len = r.usize()?;
        let gcn_dims = (0..gcn_len)
            .map(|_| r.usize())
            .collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            node_dim,
            gcn_dims,
            gcn_dropout: r.f64()?,
            lstm_layers: r.usize()?,
            lstm_hidden: r.usize()?,
            lstm_dropout: r.f64()?,
            heads: r.usize()?,
            head_dim: r.usize()?,
            classes: r.usize()?,
            seq_len: r.usize()?,
            l2: r.f64()?,
            seed: r.u64()?,
            variant,
            tabular_dim: r.usize()?,
        };
        config.validate()?;
        let specs = entry_specs(&config);
        let running_len = r.usize()?;
        let expected_running = if variant.uses_gcn() {
            config.gcn_dims.len()
        } else {
            0
        };
        if running_len != expected_running {
            return Err(Error::Format(format!(
                "checkpoint has {running_len} running-stat blocks, config needs {expected_running}"
            )));
        }
        let mut running = Vec::with_capacity(running_len);
        for (l, &dim) in config.gcn_dims.iter().enumerate().take(running_len) {
            let momentum = r.f64()?;
            let mean = r.f64s()?;
            let var = r.f64s()?;
            if mean.len() != dim || var.len() != dim {
                return Err(Error::Format(format!(
                    "running stats of layer {l} have width {}, expected {dim}",
                    mean.len()
                )));
            }
            running.push(RunningStats {
                mean,
                var,
                momentum,
            });
        }
        let entry_len = r.usize()?;
        if entry_len != specs.len() {
            return Err(Error::Format(format!(
                "checkpoint has {entry_len} parameters, config needs {}",
                specs.len()
            )));
        }
        let mut entries = Vec::with_capacity(entry_len);
        for spec in specs {
            let name = r.str()?;
            let rows = r.usize()?;
            let cols = r.usize()?;
            let kind = r.take(1)?[0];
            let values = r.f64s()?;
            if name != spec.name || rows != spec.rows || cols != spec.cols {
                return Err(Error::Format(format!(
                    "checkpoint entry '{name}' ({rows}x{cols}) does not match \
                     expected '{}' ({}x{})",
                    spec.name, spec.rows, spec.cols
                )));
            }
            if kind != kind_tag(spec.kind) || values.len() != rows * cols {
                return Err(Error::Format(format!("checkpoint entry '{name}' is damaged")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "checkpoint entry '{name}' holds non-finite values"
                )));
            }
            entries.push(ParamEntry {
                name,
                rows,
                cols,
                values,
                kind: spec.kind,
            });
        }
        if r.pos != buf.len() {
            return Err(Error::Format("checkpoint has trailing bytes".into()));
        }
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        Ok(super::HybridModel {
            config,
            params: Params {
                entries,
                running,
                index,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::HybridModel;
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            node_dim: 6,
            gcn_dims: vec![8, 4],
            lstm_hidden: 3,
            heads: 1,
            head_dim: 6,
            classes: 3,
            seq_len: 5,
            tabular_dim: 7,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn layout_matches_config_shapes() {
        let m = HybridModel::new(small_config()).unwrap();
        let w0 = m.params.get("gcn.0.weight");
        assert_eq!((w0.rows, w0.cols), (6, 8));
        let w1 = m.params.get("gcn.1.weight");
        assert_eq!((w1.rows, w1.cols), (8, 4));
        // First LSTM layer reads the GCN output width, second reads 2H.
        let x0 = m.params.get("lstm.0.fw.w_xi");
        assert_eq!((x0.rows, x0.cols), (4, 3));
        let x1 = m.params.get("lstm.1.bw.w_xc");
        assert_eq!((x1.rows, x1.cols), (6, 3));
        let q = m.params.get("attn.0.w_q");
        assert_eq!((q.rows, q.cols), (6, 6));
        let clf = m.params.get("clf.weight");
        assert_eq!((clf.rows, clf.cols), (6, 3));
        assert_eq!(m.params.running.len(), 2);
    }

    #[test]
    fn initialization_is_deterministic_and_seed_sensitive() {
        let a = HybridModel::new(small_config()).unwrap();
        let b = HybridModel::new(small_config()).unwrap();
        let c = HybridModel::new(ModelConfig {
            seed: 43,
            ..small_config()
        })
        .unwrap();
        assert_eq!(a.params.entries, b.params.entries);
        assert_ne!(a.params.entries, c.params.entries);
    }

    #[test]
    fn forget_bias_starts_at_one_other_biases_at_zero() {
        let m = HybridModel::new(small_config()).unwrap();
        assert!(m.params.get("lstm.0.fw.b_f").values.iter().all(|&v| v == 1.0));
        assert!(m.params.get("lstm.0.fw.b_i").values.iter().all(|&v| v == 0.0));
        assert!(m.params.get("clf.bias").values.iter().all(|&v| v == 0.0));
        assert!(m.params.get("gcn.0.bn.gamma").values.iter().all(|&v| v == 1.0));
        assert!(m.params.get("gcn.0.bn.beta").values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_values_respect_limits() {
        let m = HybridModel::new(small_config()).unwrap();
        for e in &m.params.entries {
            if e.kind == ParamKind::Weight {
                let limit = (6.0 / (e.rows + e.cols) as f64).sqrt();
                assert!(e.values.iter().all(|v| v.abs() < limit), "{}", e.name);
                // A matrix of all-equal draws would mean the generator broke.
                assert!(e.values.windows(2).any(|w| w[0] != w[1]), "{}", e.name);
            }
        }
    }

    #[test]
    fn param_count_is_a_pure_function_of_config() {
        let a = HybridModel::new(small_config()).unwrap();
        let b = HybridModel::new(ModelConfig {
            seed: 999,
            ..small_config()
        })
        .unwrap();
        assert_eq!(a.param_count(), b.param_count());
        // Hand count for the small config, following the layout docs.
        let gcn = 6 * 8 + 8 + 8 + 8 * 4 + 4 + 4;
        let lstm_l0 = 2 * 4 * (4 * 3 + 3 * 3 + 3);
        let lstm_l1 = 2 * 4 * (6 * 3 + 3 * 3 + 3);
        let attn = 3 * 6 * 6 + 6 * 6;
        let clf = 6 * 3 + 3;
        assert_eq!(a.param_count(), gcn + lstm_l0 + lstm_l1 + attn + clf);
    }

    #[test]
    fn variant_layouts_swap_stages() {
        let no_gnn = HybridModel::new(ModelConfig {
            variant: Variant::NoGnn,
            ..small_config()
        })
        .unwrap();
        assert!(no_gnn.params.index_of("gcn.0.weight").is_none());
        let proj = no_gnn.params.get("proj.weight");
        assert_eq!((proj.rows, proj.cols), (7, 4));
        assert!(no_gnn.params.running.is_empty());

        let lstm_only = HybridModel::new(ModelConfig {
            variant: Variant::LstmOnly,
            ..small_config()
        })
        .unwrap();
        assert_eq!(
            no_gnn
                .params
                .entries
                .iter()
                .map(|e| (&e.name, e.rows, e.cols))
                .collect::<Vec<_>>(),
            lstm_only
                .params
                .entries
                .iter()
                .map(|e| (&e.name, e.rows, e.cols))
                .collect::<Vec<_>>(),
        );

        let no_lstm = HybridModel::new(ModelConfig {
            variant: Variant::NoLstm,
            ..small_config()
        })
        .unwrap();
        assert!(no_lstm.params.index_of("lstm.0.fw.w_xi").is_none());
        let proj = no_lstm.params.get("proj.weight");
        assert_eq!((proj.rows, proj.cols), (4, 6));

        let gnn_only = HybridModel::new(ModelConfig {
            variant: Variant::GnnOnly,
            ..small_config()
        })
        .unwrap();
        assert!(gnn_only.params.index_of("attn.w_o").is_none());
        let clf = gnn_only.params.get("clf.weight");
        assert_eq!((clf.rows, clf.cols), (4, 3));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut m = HybridModel::new(small_config()).unwrap();
        // Perturb the running stats so the round trip covers them too.
        m.params.running[0].mean[1] = 0.25;
        m.params.running[0].var[2] = 3.5;
        m.save(&path).unwrap();
        let loaded = HybridModel::load(&path).unwrap();
        assert_eq!(loaded.config, m.config);
        assert_eq!(loaded.params.entries, m.params.entries);
        assert_eq!(loaded.params.running[0].mean, m.params.running[0].mean);
        assert_eq!(loaded.params.running[0].var, m.params.running[0].var);
    }

    #[test]
    fn checkpoint_rejects_wrong_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(HybridModel::load(&path).is_err());

        let good = dir.path().join("model.ckpt");
        let m = HybridModel::new(small_config()).unwrap();
        m.save(&good).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes[4] = 9; // version field
        std::fs::write(&path, &bytes).unwrap();
        let err = HybridModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("v9"));
    }

    #[test]
    fn checkpoint_rejects_truncation_and_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = HybridModel::new(small_config()).unwrap();
        m.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(HybridModel::load(&cut).is_err());

        let long = dir.path().join("long.ckpt");
        let mut extended = bytes;
        extended.push(0);
        std::fs::write(&long, &extended).unwrap();
        assert!(HybridModel::load(&long).is_err());
    }
}
