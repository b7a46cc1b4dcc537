//! Tape-level forward passes for every architecture variant, plus the
//! batch loss.
//!
//! Parameters are bound onto a tape once per tape ([`HybridModel::bind`]);
//! every forward pass on that tape reuses the bound tensors so gradients
//! for repeated uses accumulate correctly. Node statistics are compressed
//! with log1p before the first convolution, since totals and durations are
//! heavy-tailed raw counts.

use rand::Rng;

use super::{HybridModel, Mode, Variant, WindowInput};
use crate::autograd::{Tape, TensorId};
use crate::error::{Error, Result};

/// Tape-resident copies of all parameter entries, aligned with
/// `params.entries`.
pub struct TapeBinding {
    pub ids: Vec<TensorId>,
}

/// Result of one window's forward pass.
pub struct ForwardOutput {
    /// 1 x classes probability row.
    pub probs: TensorId,
    /// Per-head T x T attention weights; empty for variants without
    /// attention.
    pub attention: Vec<TensorId>,
}

impl HybridModel {
    /// Creates tape tensors for every parameter, in entry order.
    pub fn bind(&self, tape: &mut Tape) -> Result<TapeBinding> {
        let mut ids = Vec::with_capacity(self.params.entries.len());
        for e in &self.params.entries {
            ids.push(tape.tensor(e.rows, e.cols, e.values.clone(), true)?);
        }
        Ok(TapeBinding { ids })
    }

    fn pid(&self, binding: &TapeBinding, name: &str) -> TensorId {
        let i = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not in this variant's layout"));
        binding.ids[i]
    }

    /// Graph convolution stack: per layer ReLU(Â H W), then batchnorm,
    /// then dropout in train mode. `x` is |V| x node_dim, already
    /// conditioned; returns |V| x gcn_out embeddings.
    pub fn gcn_forward<R: Rng>(
        &mut self,
        tape: &mut Tape,
        binding: &TapeBinding,
        adjacency: TensorId,
        x: TensorId,
        mode: Mode,
        rng: &mut R,
    ) -> Result<TensorId> {
        let width = tape.shape(x).1;
        if width != self.config.node_dim {
            return Err(Error::Data(format!(
                "node features are {width} wide, the first layer expects {}",
                self.config.node_dim
            )));
        }
        let layers: Vec<(TensorId, TensorId, TensorId)> = (0..self.config.gcn_dims.len())
            .map(|l| {
                (
                    self.pid(binding, &format!("gcn.{l}.weight")),
                    self.pid(binding, &format!("gcn.{l}.bn.gamma")),
                    self.pid(binding, &format!("gcn.{l}.bn.beta")),
                )
            })
            .collect();
        let dropout = self.config.gcn_dropout;
        let mut h = x;
        for (l, (w, gamma, beta)) in layers.into_iter().enumerate() {
            h = tape.matmul(adjacency, h)?;
            h = tape.matmul(h, w)?;
            h = tape.relu(h)?;
            h = tape.batchnorm(
                h,
                gamma,
                beta,
                &mut self.params.running[l],
                mode.is_train(),
            )?;
            h = tape.dropout(h, dropout, mode.is_train(), rng)?;
        }
        Ok(h)
    }

    /// One LSTM direction for one layer; returns the per-step hidden rows
    /// in time order regardless of scan direction.
    fn lstm_direction<const REVERSE: bool>(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        seq: TensorId,
        layer: usize,
    ) -> Result<Vec<TensorId>> {
        let dir = if REVERSE { "bw" } else { "fw" };
        let p = |g: &str| self.pid(binding, &format!("lstm.{layer}.{dir}.{g}"));
        let (w_xi, w_hi, b_i) = (p("w_xi"), p("w_hi"), p("b_i"));
        let (w_xf, w_hf, b_f) = (p("w_xf"), p("w_hf"), p("b_f"));
        let (w_xo, w_ho, b_o) = (p("w_xo"), p("w_ho"), p("b_o"));
        let (w_xc, w_hc, b_c) = (p("w_xc"), p("w_hc"), p("b_c"));
        // Input projections for all steps at once; the recurrence then only
        // multiplies 1 x H by H x H per step.
        let mut project = |w: TensorId, b: TensorId| -> Result<TensorId> {
            let m = tape.matmul(seq, w)?;
            tape.add_row(m, b)
        };
        let px_i = project(w_xi, b_i)?;
        let px_f = project(w_xf, b_f)?;
        let px_o = project(w_xo, b_o)?;
        let px_c = project(w_xc, b_c)?;

        let t_len = tape.shape(seq).0;
        let h0 = tape.zeros(1, self.config.lstm_hidden);
        let (mut h, mut c) = (h0, tape.zeros(1, self.config.lstm_hidden));
        let mut outputs = vec![h0; t_len];
        let order: Vec<usize> = if REVERSE {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let mut gate = |px: TensorId, w_h: TensorId| -> Result<TensorId> {
                let recur = tape.matmul(h, w_h)?;
                let row = tape.slice_row(px, t)?;
                tape.add(row, recur)
            };
            let pre_i = gate(px_i, w_hi)?;
            let pre_f = gate(px_f, w_hf)?;
            let pre_o = gate(px_o, w_ho)?;
            let pre_c = gate(px_c, w_hc)?;
            let i_t = tape.sigmoid(pre_i)?;
            let f_t = tape.sigmoid(pre_f)?;
            let o_t = tape.sigmoid(pre_o)?;
            let g_t = tape.tanh(pre_c)?;
            let keep = tape.mul(f_t, c)?;
            let write = tape.mul(i_t, g_t)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c)?;
            h = tape.mul(o_t, squashed)?;
            outputs[t] = h;
        }
        Ok(outputs)
    }

    /// Stacked bidirectional LSTM over a T x in sequence; returns T x 2H
    /// (forward and backward states concatenated per step), with dropout
    /// between layers in train mode.
    pub fn bilstm_forward<R: Rng>(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        seq: TensorId,
        mode: Mode,
        rng: &mut R,
    ) -> Result<TensorId> {
        let mut input = seq;
        for layer in 0..self.config.lstm_layers {
            let fw = self.lstm_direction::<false>(tape, binding, input, layer)?;
            let bw = self.lstm_direction::<true>(tape, binding, input, layer)?;
            let steps: Vec<TensorId> = fw
                .into_iter()
                .zip(bw)
                .map(|(f, b)| tape.concat_cols(&[f, b]))
                .collect::<Result<_>>()?;
            input = tape.stack_rows(&steps)?;
            if layer + 1 < self.config.lstm_layers {
                input = tape.dropout(input, self.config.lstm_dropout, mode.is_train(), rng)?;
            }
        }
        Ok(input)
    }

    /// Multi-head scaled dot-product self-attention over time steps.
    /// Returns the attended T x (heads * head_dim) representation and each
    /// head's T x T row-stochastic weights.
    pub fn attention_forward(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        h: TensorId,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        let width = tape.shape(h).1;
        if width != self.config.attention_in() {
            return Err(Error::Data(format!(
                "attention input is {width} wide, expected {}",
                self.config.attention_in()
            )));
        }
        let scale = 1.0 / (self.config.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for head in 0..self.config.heads {
            let q = tape.matmul(h, self.pid(binding, &format!("attn.{head}.w_q")))?;
            let k = tape.matmul(h, self.pid(binding, &format!("attn.{head}.w_k")))?;
            let v = tape.matmul(h, self.pid(binding, &format!("attn.{head}.w_v")))?;
            let kt = tape.transpose(k)?;
            let raw = tape.matmul(q, kt)?;
            let scores = tape.scale(raw, scale)?;
            let w = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(w, v)?);
            weights.push(w);
        }
        let concat = tape.concat_cols(&heads)?;
        let attended = tape.matmul(concat, self.pid(binding, "attn.w_o"))?;
        Ok((attended, weights))
    }

    /// Global average pooling over time followed by the softmax classifier.
    pub fn pool_and_classify(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        x: TensorId,
    ) -> Result<TensorId> {
        let pooled = tape.mean_rows(x)?;
        let scored = tape.matmul(pooled, self.pid(binding, "clf.weight"))?;
        let logits = tape.add_row(scored, self.pid(binding, "clf.bias"))?;
        tape.softmax_rows(logits)
    }

    /// Per-step sequence embedding for the active variant: mean of the
    /// GCN embeddings of each event's endpoints, or projected tabular rows.
    fn step_embeddings<R: Rng>(
        &mut self,
        tape: &mut Tape,
        binding: &TapeBinding,
        input: &WindowInput,
        mode: Mode,
        rng: &mut R,
    ) -> Result<TensorId> {
        if self.config.variant.uses_tabular() {
            let t_len = self.config.seq_len;
            let dim = self.config.tabular_dim;
            if input.tabular.len() != t_len * dim {
                return Err(Error::Data(format!(
                    "window carries {} tabular values, expected {t_len} x {dim}",
                    input.tabular.len()
                )));
            }
            let tab = tape.tensor(t_len, dim, input.tabular.clone(), false)?;
            let proj = tape.matmul(tab, self.pid(binding, "proj.weight"))?;
            return tape.add_row(proj, self.pid(binding, "proj.bias"));
        }
        let n = input.n_nodes;
        if input.adjacency.len() != n * n {
            return Err(Error::Data(format!(
                "window adjacency has {} entries, expected {n} x {n}",
                input.adjacency.len()
            )));
        }
        if input.node_x.len() != n * self.config.node_dim {
            return Err(Error::Data(format!(
                "window node features have {} values, expected {n} x {}",
                input.node_x.len(),
                self.config.node_dim
            )));
        }
        let adj = tape.tensor(n, n, input.adjacency.clone(), false)?;
        let x_values: Vec<f64> = input.node_x.iter().map(|v| v.ln_1p()).collect();
        let x = tape.tensor(n, self.config.node_dim, x_values, false)?;
        let nodes = self.gcn_forward(tape, binding, adj, x, mode, rng)?;
        let (src, dst): (Vec<usize>, Vec<usize>) = input.steps.iter().copied().unzip();
        for &i in src.iter().chain(&dst) {
            assert!(i < n, "window event references node {i} of {n}");
        }
        let hs = tape.gather_rows(nodes, &src)?;
        let hd = tape.gather_rows(nodes, &dst)?;
        let summed = tape.add(hs, hd)?;
        tape.scale(summed, 0.5)
    }

    /// Full forward pass over one window.
    pub fn forward_window<R: Rng>(
        &mut self,
        tape: &mut Tape,
        binding: &TapeBinding,
        input: &WindowInput,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        if input.steps.len() != self.config.seq_len {
            return Err(Error::Data(format!(
                "window has {} events, the model expects {}",
                input.steps.len(),
                self.config.seq_len
            )));
        }
        let emb = self.step_embeddings(tape, binding, input, mode, rng)?;
        let (pooled_input, attention) = match self.config.variant {
            Variant::Full | Variant::NoGnn | Variant::LstmOnly => {
                let states = self.bilstm_forward(tape, binding, emb, mode, rng)?;
                let (attended, weights) = self.attention_forward(tape, binding, states)?;
                (attended, weights)
            }
            Variant::NoAttention => {
                let states = self.bilstm_forward(tape, binding, emb, mode, rng)?;
                (states, Vec::new())
            }
            Variant::NoLstm => {
                let proj = tape.matmul(emb, self.pid(binding, "proj.weight"))?;
                let proj = tape.add_row(proj, self.pid(binding, "proj.bias"))?;
                let (attended, weights) = self.attention_forward(tape, binding, proj)?;
                (attended, weights)
            }
            Variant::GnnOnly => (emb, Vec::new()),
        };
        let probs = self.pool_and_classify(tape, binding, pooled_input)?;
        Ok(ForwardOutput { probs, attention })
    }

    /// Batch loss: mean negative log-likelihood of the true classes plus
    /// the L2 penalty over weight matrices (biases and batchnorm affine
    /// parameters are exempt).
    pub fn loss_batch(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        probs: &[TensorId],
        labels: &[usize],
    ) -> Result<TensorId> {
        if probs.is_empty() || probs.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} probability rows against {} labels",
                probs.len(),
                labels.len()
            )));
        }
        let stacked = tape.stack_rows(probs)?;
        let nll = tape.nll_loss(stacked, labels)?;
        if self.config.l2 == 0.0 {
            return Ok(nll);
        }
        let mut penalty: Option<TensorId> = None;
        for (entry, &id) in self.params.entries.iter().zip(&binding.ids) {
            if entry.kind == super::ParamKind::Weight {
                let s = tape.sum_squares(id)?;
                penalty = Some(match penalty {
                    Some(p) => tape.add(p, s)?,
                    None => s,
                });
            }
        }
        match penalty {
            Some(p) => {
                let scaled = tape.scale(p, self.config.l2)?;
                tape.add(nll, scaled)
            }
            None => Ok(nll),
        }
    }
}
