//! Run configuration: one flat `key = value` namespace covering the data
//! generator, preparation pipeline, model, and trainer.
//!
//! Sources merge in a fixed precedence: built-in defaults, then a config
//! file, then command-line flags. `to_text` dumps the merged result in the
//! same grammar it parses, so a printed config is itself a loadable file.

use std::fmt::Write as _;
use std::path::Path;

use crate::datagen::{AttackKind, AttackSpec, ScenarioSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::pipeline::PipelineConfig;
use crate::train::TrainConfig;

/// Every tunable knob of a full run. Field groups keep their own defaults;
/// the shared `seed` fans out to all of them.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            scenario: ScenarioSpec::default(),
            pipeline: PipelineConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        };
        // One seed rules the run unless a file or flag overrides it.
        c.set_seed(42);
        c.model.seq_len = c.pipeline.window_len;
        c
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "key '{key}': expected true or false, got '{other}'"
        ))),
    }
}

/// Grammar for the `attacks` value: comma-separated
/// `kind:start:duration:intensity` entries, or `none`.
pub fn parse_attacks(value: &str) -> Result<Vec<AttackSpec>> {
    let value = value.trim();
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    let mut attacks = Vec::new();
    for entry in value.split(',') {
        let parts: Vec<&str> = entry.trim().split(':').collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "attack '{entry}': expected kind:start:duration:intensity"
            )));
        }
        attacks.push(AttackSpec {
            kind: AttackKind::parse(parts[0])?,
            start: parse_num("attacks.start", parts[1])?,
            duration: parse_num("attacks.duration", parts[2])?,
            intensity: parse_num("attacks.intensity", parts[3])?,
        });
    }
    Ok(attacks)
}

fn format_attacks(attacks: &[AttackSpec]) -> String {
    if attacks.is_empty() {
        return "none".into();
    }
    attacks
        .iter()
        .map(|a| format!("{}:{}:{}:{}", a.kind, a.start, a.duration, a.intensity))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment. Unknown keys and malformed
    /// values are configuration errors naming the offender.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            // scenario
            "duration" => self.scenario.duration = parse_num(key, value)?,
            "background_rate" => self.scenario.background_rate = parse_num(key, value)?,
            "entities" => self.scenario.entities = parse_num(key, value)?,
            "attacks" => self.scenario.attacks = parse_attacks(value)?,
            // pipeline
            "train_fraction" => self.pipeline.train_fraction = parse_num(key, value)?,
            "window" => {
                self.pipeline.window_len = parse_num(key, value)?;
                self.model.seq_len = self.pipeline.window_len;
            }
            "stride" => self.pipeline.stride = parse_num(key, value)?,
            "smote_k" => self.pipeline.smote_k = parse_num(key, value)?,
            "smote_ratio" => self.pipeline.smote_ratio = parse_num(key, value)?,
            "top_k" => self.pipeline.transform.top_k = parse_num(key, value)?,
            "collinear_threshold" => {
                self.pipeline.transform.collinear_threshold = parse_num(key, value)?
            }
            "mi_bins" => self.pipeline.transform.mi_bins = parse_num(key, value)?,
            "symmetrize" => self.pipeline.symmetrize = parse_bool(key, value)?,
            // model
            "variant" => self.model.variant = Variant::parse(value.trim())?,
            "gcn_dims" => {
                let dims: Result<Vec<usize>> =
                    value.split(',').map(|d| parse_num(key, d)).collect();
                self.model.gcn_dims = dims?;
            }
            "gcn_dropout" => self.model.gcn_dropout = parse_num(key, value)?,
            "lstm_layers" => self.model.lstm_layers = parse_num(key, value)?,
            "lstm_hidden" => self.model.lstm_hidden = parse_num(key, value)?,
            "lstm_dropout" => self.model.lstm_dropout = parse_num(key, value)?,
            "heads" => self.model.heads = parse_num(key, value)?,
            "head_dim" => self.model.head_dim = parse_num(key, value)?,
            "l2" => self.model.l2 = parse_num(key, value)?,
            // trainer
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "lr" => self.train.lr = parse_num(key, value)?,
            "max_epochs" => self.train.max_epochs = parse_num(key, value)?,
            "patience" => self.train.patience = parse_num(key, value)?,
            "val_fraction" => self.train.val_fraction = parse_num(key, value)?,
            "beta1" => self.train.beta1 = parse_num(key, value)?,
            "beta2" => self.train.beta2 = parse_num(key, value)?,
            "epsilon" => self.train.epsilon = parse_num(key, value)?,
            "min_improvement" => self.train.min_improvement = parse_num(key, value)?,
            "grad_clip" => {
                self.train.grad_clip = if value.trim() == "none" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            // shared
            "seed" => self.set_seed(parse_num(key, value)?),
            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.scenario.seed = seed;
        self.pipeline.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.pipeline.seed
    }

    /// Parses config-file text into `self`, later lines overriding earlier
    /// ones. Grammar: one `key = value` per line, `#` starts a comment,
    /// blank lines ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{line}'", ln + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Dumps the merged configuration in loadable form, grouped and in a
    /// fixed key order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# scenario");
        let _ = writeln!(s, "duration = {}", self.scenario.duration);
        let _ = writeln!(s, "background_rate = {}", self.scenario.background_rate);
        let _ = writeln!(s, "entities = {}", self.scenario.entities);
        let _ = writeln!(s, "attacks = {}", format_attacks(&self.scenario.attacks));
        let _ = writeln!(s, "# pipeline");
        let _ = writeln!(s, "train_fraction = {}", self.pipeline.train_fraction);
        let _ = writeln!(s, "window = {}", self.pipeline.window_len);
        let _ = writeln!(s, "stride = {}", self.pipeline.stride);
        let _ = writeln!(s, "smote_k = {}", self.pipeline.smote_k);
        let _ = writeln!(s, "smote_ratio = {}", self.pipeline.smote_ratio);
        let _ = writeln!(s, "top_k = {}", self.pipeline.transform.top_k);
        let _ = writeln!(
            s,
            "collinear_threshold = {}",
            self.pipeline.transform.collinear_threshold
        );
        let _ = writeln!(s, "mi_bins = {}", self.pipeline.transform.mi_bins);
        let _ = writeln!(s, "symmetrize = {}", self.pipeline.symmetrize);
        let _ = writeln!(s, "# model");
        let _ = writeln!(s, "variant = {}", self.model.variant.as_str());
        let dims: Vec<String> = self.model.gcn_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "gcn_dims = {}", dims.join(","));
        let _ = writeln!(s, "gcn_dropout = {}", self.model.gcn_dropout);
        let _ = writeln!(s, "lstm_layers = {}", self.model.lstm_layers);
        let _ = writeln!(s, "lstm_hidden = {}", self.model.lstm_hidden);
        let _ = writeln!(s, "lstm_dropout = {}", self.model.lstm_dropout);
        let _ = writeln!(s, "heads = {}", self.model.heads);
        let _ = writeln!(s, "head_dim = {}", self.model.head_dim);
        let _ = writeln!(s, "l2 = {}", self.model.l2);
        let _ = writeln!(s, "# trainer");
        let _ = writeln!(s, "batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "lr = {}", self.train.lr);
        let _ = writeln!(s, "max_epochs = {}", self.train.max_epochs);
        let _ = writeln!(s, "patience = {}", self.train.patience);
        let _ = writeln!(s, "val_fraction = {}", self.train.val_fraction);
        let _ = writeln!(s, "beta1 = {}", self.train.beta1);
        let _ = writeln!(s, "beta2 = {}", self.train.beta2);
        let _ = writeln!(s, "epsilon = {}", self.train.epsilon);
        let _ = writeln!(s, "min_improvement = {}", self.train.min_improvement);
        match self.train.grad_clip {
            Some(c) => {
                let _ = writeln!(s, "grad_clip = {c}");
            }
            None => {
                let _ = writeln!(s, "grad_clip = none");
            }
        }
        let _ = writeln!(s, "# shared");
        let _ = writeln!(s, "seed = {}", self.seed());
        s
    }
}
