//! Reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! A [`Tape`] owns every tensor created during a forward pass and records one
//! op per derived tensor. [`Tape::backward`] walks the ops in reverse and
//! accumulates `d loss / d tensor` into every tensor that requires gradients.
//!
//! Design points:
//! - all tensors are row-major matrices; row vectors are `1 x c`, scalars `1 x 1`
//! - the graph is dynamic: ops recorded in execution order, one backward pass
//!   per recorded forward unless the tape is reset
//! - every op validates shapes up front and checks its output for NaN/Inf;
//!   overflow is an error, never a silent state
//! - no internal RNG: stochastic ops (dropout) take the caller's generator,
//!   so identical seeds give bit-identical values and gradients

use rand::Rng;

use crate::error::{Error, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// A dense row-major matrix tracked by the tape.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    /// `None` until `backward` runs; then the full gradient, zero where the
    /// tensor does not influence the loss.
    pub grad: Option<Vec<f64>>,
    /// True if this tensor or any ancestor requires gradients.
    needs_grad: bool,
}

/// Running batch-normalization statistics, owned by the model (not the tape).
///
/// `momentum` keeps that fraction of the old value on each update:
/// `running <- momentum * running + (1 - momentum) * batch`.
/// Variances are biased (1/N), matching the batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    /// Fresh statistics: mean 0, variance 1 per feature.
    pub fn new(features: usize, momentum: f64) -> Self {
        RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
            momentum,
        }
    }
}

/// Variance floor used by batch normalization in both modes.
pub const BATCHNORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// Matrix plus a `1 x c` row broadcast over every row.
    AddRow { a: usize, row: usize },
    Scale { a: usize, c: f64 },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    SoftmaxRows { a: usize },
    /// Mask holds 0.0 for dropped entries and 1/(1-rate) for kept ones.
    Dropout { a: usize, mask: Vec<f64> },
    /// Saved normalization: xhat = (x - mean) / sqrt(var + eps) and the
    /// per-feature 1/sqrt(var + eps). `train` selects the batch-stat backward.
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Transpose { a: usize },
    MeanRows { a: usize },
    SliceRow { a: usize, row: usize },
    GatherRows { a: usize, idx: Vec<usize> },
    StackRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    /// Scalar mean of -ln(probs[i, labels[i]]).
    NllLoss { probs: usize, labels: Vec<usize> },
    /// Scalar sum of squared entries.
    SumSquares { a: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale { .. } => "scale",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Relu { .. } => "relu",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::Dropout { .. } => "dropout",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Transpose { .. } => "transpose",
            Op::MeanRows { .. } => "mean_rows",
            Op::SliceRow { .. } => "slice_row",
            Op::GatherRows { .. } => "gather_rows",
            Op::StackRows { .. } => "stack_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::NllLoss { .. } => "nll_loss",
            Op::SumSquares { .. } => "sum_squares",
        }
    }
}

/// Records tensors and ops for one forward pass.
pub struct Tape {
    tensors: Vec<Tensor>,
    ops: Vec<Op>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            tensors: Vec::new(),
            ops: Vec::new(),
            backward_done: false,
        }
    }

    /// Drops every tensor and op; existing ids become invalid.
    pub fn reset(&mut self) {
        self.tensors.clear();
        self.ops.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    // ── Tensor access ────────────────────────────────────────────────────

    fn check_id(&self, id: TensorId) -> Result<usize> {
        if id.0 < self.tensors.len() {
            Ok(id.0)
        } else {
            Err(Error::Tape(format!(
                "tensor id {} out of range (tape holds {})",
                id.0,
                self.tensors.len()
            )))
        }
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let t = &self.tensors[id.0];
        (t.rows, t.cols)
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].values
    }

    /// Gradient of the loss w.r.t. this tensor; `None` before backward.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.0].grad.as_deref()
    }

    // ── Tensor creation ──────────────────────────────────────────────────

    /// Registers a new leaf tensor.
    pub fn tensor(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        requires_grad: bool,
    ) -> Result<TensorId> {
        if rows * cols != values.len() {
            return Err(Error::Tape(format!(
                "tensor: {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        self.push(
            Tensor {
                rows,
                cols,
                values,
                requires_grad,
                grad: None,
                needs_grad: requires_grad,
            },
            Op::Leaf,
        )
    }

    /// Leaf filled with zeros that never takes gradients.
    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorId {
        self.tensor(rows, cols, vec![0.0; rows * cols], false)
            .expect("zeros is always well-formed")
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> Result<TensorId> {
        if tensor.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.tensors.push(tensor);
        self.ops.push(op);
        Ok(TensorId(self.tensors.len() - 1))
    }

    fn derived(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op, inputs: &[usize]) -> Result<TensorId> {
        let needs = inputs.iter().any(|&i| self.tensors[i].needs_grad);
        self.push(
            Tensor {
                rows,
                cols,
                values,
                requires_grad: false,
                grad: None,
                needs_grad: needs,
            },
            op,
        )
    }

    // ── Forward ops ──────────────────────────────────────────────────────

    /// `a (m x k) @ b (k x n) -> m x n`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ai, bi) = (self.check_id(a)?, self.check_id(b)?);
        let (m, ka) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let (kb, n) = (self.tensors[bi].rows, self.tensors[bi].cols);
        if ka != kb {
            return Err(Error::Shape {
                op: "matmul",
                lhs: (m, ka),
                rhs: (kb, n),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(
            &self.tensors[ai].values,
            &self.tensors[bi].values,
            m,
            ka,
            n,
            &mut out,
        );
        self.derived(m, n, out, Op::MatMul { a: ai, b: bi }, &[ai, bi])
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: TensorId, b: TensorId) -> Result<(usize, usize)> {
        let (ai, bi) = (self.check_id(a)?, self.check_id(b)?);
        let (ra, ca) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let (rb, cb) = (self.tensors[bi].rows, self.tensors[bi].cols);
        if (ra, ca) != (rb, cb) {
            return Err(Error::Shape {
                op: op_name,
                lhs: (ra, ca),
                rhs: (rb, cb),
            });
        }
        Ok((ai, bi))
    }

    /// Elementwise `a + b`; shapes must match exactly.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ai, bi) = self.binary_same_shape("add", a, b)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let out = zip_map(&self.tensors[ai].values, &self.tensors[bi].values, |x, y| x + y);
        self.derived(r, c, out, Op::Add { a: ai, b: bi }, &[ai, bi])
    }

    /// Elementwise `a - b`.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ai, bi) = self.binary_same_shape("sub", a, b)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let out = zip_map(&self.tensors[ai].values, &self.tensors[bi].values, |x, y| x - y);
        self.derived(r, c, out, Op::Sub { a: ai, b: bi }, &[ai, bi])
    }

    /// Elementwise (Hadamard) `a * b`.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ai, bi) = self.binary_same_shape("mul", a, b)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let out = zip_map(&self.tensors[ai].values, &self.tensors[bi].values, |x, y| x * y);
        self.derived(r, c, out, Op::Mul { a: ai, b: bi }, &[ai, bi])
    }

    /// `a (r x c) + row (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (ai, ri) = (self.check_id(a)?, self.check_id(row)?);
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let (rr, rc) = (self.tensors[ri].rows, self.tensors[ri].cols);
        if rr != 1 || rc != c {
            return Err(Error::Shape {
                op: "add_row",
                lhs: (r, c),
                rhs: (rr, rc),
            });
        }
        let rowv = &self.tensors[ri].values;
        let out: Vec<f64> = self.tensors[ai]
            .values
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rowv).map(|(x, y)| x + y).collect::<Vec<_>>())
            .collect();
        self.derived(r, c, out, Op::AddRow { a: ai, row: ri }, &[ai, ri])
    }

    /// `c * a` for a compile-time constant factor.
    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, cc) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let out = self.tensors[ai].values.iter().map(|v| c * v).collect();
        self.derived(r, cc, out, Op::Scale { a: ai, c }, &[ai])
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let out = self.tensors[ai]
            .values
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.derived(r, c, out, Op::Sigmoid { a: ai }, &[ai])
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let out = self.tensors[ai].values.iter().map(|v| v.tanh()).collect();
        self.derived(r, c, out, Op::Tanh { a: ai }, &[ai])
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let out = self.tensors[ai].values.iter().map(|v| v.max(0.0)).collect();
        self.derived(r, c, out, Op::Relu { a: ai }, &[ai])
    }

    /// Row-wise softmax with max subtraction; rows sum to 1.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        if c == 0 {
            return Err(Error::Shape {
                op: "softmax_rows",
                lhs: (r, c),
                rhs: (r, c),
            });
        }
        let mut out = vec![0.0; r * c];
        for (orow, irow) in out.chunks_mut(c).zip(self.tensors[ai].values.chunks(c)) {
            let m = irow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(irow) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        self.derived(r, c, out, Op::SoftmaxRows { a: ai }, &[ai])
    }

    /// Inverted dropout. Training: each entry kept with probability
    /// `1 - rate` and scaled by `1/(1 - rate)`; inference: identity.
    pub fn dropout<R: Rng>(
        &mut self,
        a: TensorId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        if !training || rate == 0.0 {
            let out = self.tensors[ai].values.clone();
            let mask = vec![1.0; r * c];
            return self.derived(r, c, out, Op::Dropout { a: ai, mask }, &[ai]);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = zip_map(&self.tensors[ai].values, &mask, |x, m| x * m);
        self.derived(r, c, out, Op::Dropout { a: ai, mask }, &[ai])
    }

    /// Batch normalization over rows (features are columns), followed by the
    /// per-feature affine `gamma * xhat + beta`.
    ///
    /// Training uses batch statistics (batch size must be at least 2) and
    /// updates `stats`; inference normalizes with the frozen running values.
    pub fn batchnorm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        stats: &mut RunningStats,
        training: bool,
    ) -> Result<TensorId> {
        let xi = self.check_id(x)?;
        let gi = self.check_id(gamma)?;
        let bi = self.check_id(beta)?;
        let (n, c) = (self.tensors[xi].rows, self.tensors[xi].cols);
        for (id, name) in [(gi, "gamma"), (bi, "beta")] {
            let (r2, c2) = (self.tensors[id].rows, self.tensors[id].cols);
            if (r2, c2) != (1, c) {
                return Err(Error::Tape(format!(
                    "batchnorm: {name} must be 1x{c}, got {r2}x{c2}"
                )));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::Tape(format!(
                "batchnorm: running stats track {} features, input has {c}",
                stats.mean.len()
            )));
        }
        if training && n < 2 {
            return Err(Error::Tape(
                "batchnorm: training mode needs a batch of at least 2 rows".into(),
            ));
        }

        let xs = &self.tensors[xi].values;
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for row in xs.chunks(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
            for row in xs.chunks(c) {
                for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            for s in var.iter_mut() {
                *s /= n as f64;
            }
            let mom = stats.momentum;
            for (r, b) in stats.mean.iter_mut().zip(&mean) {
                *r = mom * *r + (1.0 - mom) * b;
            }
            for (r, b) in stats.var.iter_mut().zip(&var) {
                *r = mom * *r + (1.0 - mom) * b;
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * c];
        for (hrow, xrow) in xhat.chunks_mut(c).zip(xs.chunks(c)) {
            for (((h, &v), m), s) in hrow.iter_mut().zip(xrow).zip(&mean).zip(&inv_std) {
                *h = (v - m) * s;
            }
        }
        let gv = &self.tensors[gi].values;
        let bv = &self.tensors[bi].values;
        let mut out = vec![0.0; n * c];
        for (orow, hrow) in out.chunks_mut(c).zip(xhat.chunks(c)) {
            for (((o, &h), g), b) in orow.iter_mut().zip(hrow).zip(gv).zip(bv) {
                *o = g * h + b;
            }
        }
        self.derived(
            n,
            c,
            out,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                train: training,
            },
            &[xi, gi, bi],
        )
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        let xs = &self.tensors[ai].values;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xs[i * c + j];
            }
        }
        self.derived(c, r, out, Op::Transpose { a: ai }, &[ai])
    }

    /// Column means: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        if r == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                lhs: (r, c),
                rhs: (r, c),
            });
        }
        let mut out = vec![0.0; c];
        for row in self.tensors[ai].values.chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        self.derived(1, c, out, Op::MeanRows { a: ai }, &[ai])
    }

    /// Copies row `row` of `a` as a `1 x c` tensor.
    pub fn slice_row(&mut self, a: TensorId, row: usize) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        if row >= r {
            return Err(Error::Tape(format!(
                "slice_row: row {row} out of range for {r}x{c}"
            )));
        }
        let out = self.tensors[ai].values[row * c..(row + 1) * c].to_vec();
        self.derived(1, c, out, Op::SliceRow { a: ai, row }, &[ai])
    }

    /// Gathers `idx.len()` rows of `a` (repeats allowed) into a new matrix.
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let (r, c) = (self.tensors[ai].rows, self.tensors[ai].cols);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Tape(format!(
                "gather_rows: row {bad} out of range for {r}x{c}"
            )));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&self.tensors[ai].values[i * c..(i + 1) * c]);
        }
        self.derived(
            idx.len(),
            c,
            out,
            Op::GatherRows {
                a: ai,
                idx: idx.to_vec(),
            },
            &[ai],
        )
    }

    /// Stacks `1 x c` tensors into a `parts.len() x c` matrix.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Tape("stack_rows: no inputs".into()));
        }
        let mut ids = Vec::with_capacity(parts.len());
        for &p in parts {
            ids.push(self.check_id(p)?);
        }
        let c = self.tensors[ids[0]].cols;
        for &i in &ids {
            let (ri, ci) = (self.tensors[i].rows, self.tensors[i].cols);
            if ri != 1 || ci != c {
                return Err(Error::Shape {
                    op: "stack_rows",
                    lhs: (1, c),
                    rhs: (ri, ci),
                });
            }
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in &ids {
            out.extend_from_slice(&self.tensors[i].values);
        }
        self.derived(ids.len(), c, out, Op::StackRows { parts: ids.clone() }, &ids)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Tape("concat_cols: no inputs".into()));
        }
        let mut ids = Vec::with_capacity(parts.len());
        for &p in parts {
            ids.push(self.check_id(p)?);
        }
        let r = self.tensors[ids[0]].rows;
        let mut total_c = 0;
        for &i in &ids {
            let (ri, ci) = (self.tensors[i].rows, self.tensors[i].cols);
            if ri != r {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: (r, self.tensors[ids[0]].cols),
                    rhs: (ri, ci),
                });
            }
            total_c += ci;
        }
        let mut out = Vec::with_capacity(r * total_c);
        for row in 0..r {
            for &i in &ids {
                let ci = self.tensors[i].cols;
                out.extend_from_slice(&self.tensors[i].values[row * ci..(row + 1) * ci]);
            }
        }
        self.derived(r, total_c, out, Op::ConcatCols { parts: ids.clone() }, &ids)
    }

    /// Mean negative log-likelihood of the true classes: probabilities are
    /// `n x classes` rows summing to 1, labels index the true class per row.
    pub fn nll_loss(&mut self, probs: TensorId, labels: &[usize]) -> Result<TensorId> {
        let pi = self.check_id(probs)?;
        let (n, c) = (self.tensors[pi].rows, self.tensors[pi].cols);
        if labels.len() != n {
            return Err(Error::Tape(format!(
                "nll_loss: {} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Tape(format!(
                "nll_loss: label {bad} out of range for {c} classes"
            )));
        }
        let xs = &self.tensors[pi].values;
        let mut total = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            total -= xs[i * c + l].ln();
        }
        let out = vec![total / n as f64];
        self.derived(
            1,
            1,
            out,
            Op::NllLoss {
                probs: pi,
                labels: labels.to_vec(),
            },
            &[pi],
        )
    }

    /// Scalar sum of squared entries.
    pub fn sum_squares(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check_id(a)?;
        let s: f64 = self.tensors[ai].values.iter().map(|v| v * v).sum();
        self.derived(1, 1, vec![s], Op::SumSquares { a: ai }, &[ai])
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Accumulates `d loss / d tensor` into every tensor that requires
    /// gradients. `loss` must be scalar. One backward pass per forward;
    /// reset the tape to record a new graph.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let li = self.check_id(loss)?;
        if self.backward_done {
            return Err(Error::Tape(
                "backward already ran on this tape; reset before recording a new pass".into(),
            ));
        }
        let (lr, lc) = (self.tensors[li].rows, self.tensors[li].cols);
        if (lr, lc) != (1, 1) {
            return Err(Error::Tape(format!(
                "backward: loss must be a 1x1 scalar, got {lr}x{lc}"
            )));
        }
        self.backward_done = true;

        let n = self.tensors.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[li] = Some(vec![1.0]);

        for i in (0..=li).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(i, &g, &mut grads);
            // Keep the output gradient if the tensor itself wants it.
            if self.tensors[i].requires_grad {
                grads[i] = Some(g);
            }
        }

        for (t, g) in self.tensors.iter_mut().zip(grads.into_iter()) {
            if t.requires_grad {
                let grad = g.unwrap_or_else(|| vec![0.0; t.rows * t.cols]);
                if grad.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                t.grad = Some(grad);
            }
        }
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], target: usize, size: usize, f: impl FnOnce(&mut [f64])) {
        let buf = grads[target].get_or_insert_with(|| vec![0.0; size]);
        f(buf);
    }

    fn backward_op(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |t: usize| self.tensors[t].needs_grad;
        let size = |t: usize| self.tensors[t].rows * self.tensors[t].cols;
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.tensors[*a].rows, self.tensors[*a].cols);
                let n = self.tensors[*b].cols;
                if needs(*a) {
                    let bv = &self.tensors[*b].values;
                    Self::accumulate(grads, *a, m * k, |da| {
                        // dA[i,p] += sum_j g[i,j] B[p,j]
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            let darow = &mut da[r * k..(r + 1) * k];
                            for (p, d) in darow.iter_mut().enumerate() {
                                let brow = &bv[p * n..(p + 1) * n];
                                let mut acc = 0.0;
                                for (gv, bvv) in grow.iter().zip(brow) {
                                    acc += gv * bvv;
                                }
                                *d += acc;
                            }
                        }
                    });
                }
                if needs(*b) {
                    let av = &self.tensors[*a].values;
                    Self::accumulate(grads, *b, k * n, |db| {
                        // dB[p,j] += sum_i A[i,p] g[i,j]
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            let arow = &av[r * k..(r + 1) * k];
                            for (p, &ap) in arow.iter().enumerate() {
                                if ap != 0.0 {
                                    let dbrow = &mut db[p * n..(p + 1) * n];
                                    for (d, gv) in dbrow.iter_mut().zip(grow) {
                                        *d += ap * gv;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for t in [*a, *b] {
                    if needs(t) {
                        Self::accumulate(grads, t, size(t), |d| {
                            for (dv, gv) in d.iter_mut().zip(g) {
                                *dv += gv;
                            }
                        });
                    }
                }
            }
            Op::Sub { a, b } => {
                if needs(*a) {
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += gv;
                        }
                    });
                }
                if needs(*b) {
                    Self::accumulate(grads, *b, size(*b), |d| {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv -= gv;
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                if needs(*a) {
                    let bv = &self.tensors[*b].values;
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for ((dv, gv), xv) in d.iter_mut().zip(g).zip(bv) {
                            *dv += gv * xv;
                        }
                    });
                }
                if needs(*b) {
                    let av = &self.tensors[*a].values;
                    Self::accumulate(grads, *b, size(*b), |d| {
                        for ((dv, gv), xv) in d.iter_mut().zip(g).zip(av) {
                            *dv += gv * xv;
                        }
                    });
                }
            }
            Op::AddRow { a, row } => {
                let c = self.tensors[*row].cols;
                if needs(*a) {
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += gv;
                        }
                    });
                }
                if needs(*row) {
                    Self::accumulate(grads, *row, c, |d| {
                        for grow in g.chunks(c) {
                            for (dv, gv) in d.iter_mut().zip(grow) {
                                *dv += gv;
                            }
                        }
                    });
                }
            }
            Op::Scale { a, c } => {
                if needs(*a) {
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += c * gv;
                        }
                    });
                }
            }
            Op::Sigmoid { a } => {
                if needs(*a) {
                    let y = &self.tensors[i].values;
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for ((dv, gv), yv) in d.iter_mut().zip(g).zip(y) {
                            *dv += gv * yv * (1.0 - yv);
                        }
                    });
                }
            }
            Op::Tanh { a } => {
                if needs(*a) {
                    let y = &self.tensors[i].values;
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for ((dv, gv), yv) in d.iter_mut().zip(g).zip(y) {
                            *dv += gv * (1.0 - yv * yv);
                        }
                    });
                }
            }
            Op::Relu { a } => {
                if needs(*a) {
                    let x = &self.tensors[*a].values;
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for ((dv, gv), xv) in d.iter_mut().zip(g).zip(x) {
                            if *xv > 0.0 {
                                *dv += gv;
                            }
                        }
                    });
                }
            }
            Op::SoftmaxRows { a } => {
                if needs(*a) {
                    let y = &self.tensors[i].values;
                    let c = self.tensors[i].cols;
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                            let dot: f64 = grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum();
                            for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                                *dv += yv * (gv - dot);
                            }
                        }
                    });
                }
            }
            Op::Dropout { a, mask } => {
                if needs(*a) {
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for ((dv, gv), mv) in d.iter_mut().zip(g).zip(mask) {
                            *dv += gv * mv;
                        }
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = self.tensors[*x].cols;
                let n = self.tensors[*x].rows;
                if needs(*beta) {
                    Self::accumulate(grads, *beta, c, |d| {
                        for grow in g.chunks(c) {
                            for (dv, gv) in d.iter_mut().zip(grow) {
                                *dv += gv;
                            }
                        }
                    });
                }
                if needs(*gamma) {
                    Self::accumulate(grads, *gamma, c, |d| {
                        for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                            for ((dv, gv), hv) in d.iter_mut().zip(grow).zip(hrow) {
                                *dv += gv * hv;
                            }
                        }
                    });
                }
                if needs(*x) {
                    let gv = &self.tensors[*gamma].values;
                    if *train {
                        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g*xhat))
                        let mut mean_g = vec![0.0; c];
                        let mut mean_gh = vec![0.0; c];
                        for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                mean_g[j] += grow[j];
                                mean_gh[j] += grow[j] * hrow[j];
                            }
                        }
                        for j in 0..c {
                            mean_g[j] /= n as f64;
                            mean_gh[j] /= n as f64;
                        }
                        Self::accumulate(grads, *x, n * c, |d| {
                            for ((drow, grow), hrow) in
                                d.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c))
                            {
                                for j in 0..c {
                                    drow[j] += gv[j]
                                        * inv_std[j]
                                        * (grow[j] - mean_g[j] - hrow[j] * mean_gh[j]);
                                }
                            }
                        });
                    } else {
                        // Frozen statistics: plain affine in x.
                        Self::accumulate(grads, *x, n * c, |d| {
                            for (drow, grow) in d.chunks_mut(c).zip(g.chunks(c)) {
                                for j in 0..c {
                                    drow[j] += grow[j] * gv[j] * inv_std[j];
                                }
                            }
                        });
                    }
                }
            }
            Op::Transpose { a } => {
                if needs(*a) {
                    let (r, c) = (self.tensors[*a].rows, self.tensors[*a].cols);
                    Self::accumulate(grads, *a, r * c, |d| {
                        for p in 0..c {
                            for q in 0..r {
                                d[q * c + p] += g[p * r + q];
                            }
                        }
                    });
                }
            }
            Op::MeanRows { a } => {
                if needs(*a) {
                    let (r, c) = (self.tensors[*a].rows, self.tensors[*a].cols);
                    let inv = 1.0 / r as f64;
                    Self::accumulate(grads, *a, r * c, |d| {
                        for drow in d.chunks_mut(c) {
                            for (dv, gv) in drow.iter_mut().zip(g) {
                                *dv += gv * inv;
                            }
                        }
                    });
                }
            }
            Op::SliceRow { a, row } => {
                if needs(*a) {
                    let c = self.tensors[*a].cols;
                    let row = *row;
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for (dv, gv) in d[row * c..(row + 1) * c].iter_mut().zip(g) {
                            *dv += gv;
                        }
                    });
                }
            }
            Op::GatherRows { a, idx } => {
                if needs(*a) {
                    let c = self.tensors[*a].cols;
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for (k, &src) in idx.iter().enumerate() {
                            let grow = &g[k * c..(k + 1) * c];
                            for (dv, gv) in d[src * c..(src + 1) * c].iter_mut().zip(grow) {
                                *dv += gv;
                            }
                        }
                    });
                }
            }
            Op::StackRows { parts } => {
                let c = self.tensors[i].cols;
                for (k, &p) in parts.iter().enumerate() {
                    if needs(p) {
                        let grow = &g[k * c..(k + 1) * c];
                        Self::accumulate(grads, p, c, |d| {
                            for (dv, gv) in d.iter_mut().zip(grow) {
                                *dv += gv;
                            }
                        });
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let r = self.tensors[i].rows;
                let total_c = self.tensors[i].cols;
                let mut offset = 0;
                for &p in parts {
                    let cp = self.tensors[p].cols;
                    if needs(p) {
                        Self::accumulate(grads, p, r * cp, |d| {
                            for row in 0..r {
                                let grow = &g[row * total_c + offset..row * total_c + offset + cp];
                                for (dv, gv) in d[row * cp..(row + 1) * cp].iter_mut().zip(grow) {
                                    *dv += gv;
                                }
                            }
                        });
                    }
                    offset += cp;
                }
            }
            Op::NllLoss { probs, labels } => {
                if needs(*probs) {
                    let c = self.tensors[*probs].cols;
                    let n = labels.len() as f64;
                    let pv = &self.tensors[*probs].values;
                    let gs = g[0];
                    Self::accumulate(grads, *probs, size(*probs), |d| {
                        for (r, &l) in labels.iter().enumerate() {
                            d[r * c + l] -= gs / (n * pv[r * c + l]);
                        }
                    });
                }
            }
            Op::SumSquares { a } => {
                if needs(*a) {
                    let xv = &self.tensors[*a].values;
                    let gs = g[0];
                    Self::accumulate(grads, *a, size(*a), |d| {
                        for (dv, xvv) in d.iter_mut().zip(xv) {
                            *dv += 2.0 * gs * xvv;
                        }
                    });
                }
            }
        }
    }

    /// Text listing of the recorded graph: index, op, shape, inputs.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for (i, (t, op)) in self.tensors.iter().zip(&self.ops).enumerate() {
            let inputs: Vec<usize> = match op {
                Op::Leaf => vec![],
                Op::MatMul { a, b }
                | Op::Add { a, b }
                | Op::Sub { a, b }
                | Op::Mul { a, b } => vec![*a, *b],
                Op::AddRow { a, row } => vec![*a, *row],
                Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
                Op::Scale { a, .. }
                | Op::Sigmoid { a }
                | Op::Tanh { a }
                | Op::Relu { a }
                | Op::SoftmaxRows { a }
                | Op::Dropout { a, .. }
                | Op::Transpose { a }
                | Op::MeanRows { a }
                | Op::SliceRow { a, .. }
                | Op::GatherRows { a, .. }
                | Op::SumSquares { a } => vec![*a],
                Op::StackRows { parts } | Op::ConcatCols { parts } => parts.clone(),
                Op::NllLoss { probs, .. } => vec![*probs],
            };
            let _ = writeln!(
                s,
                "{:>5}  {:<14} {}x{}  <- {:?}{}",
                i,
                op.name(),
                t.rows,
                t.cols,
                inputs,
                if t.requires_grad { "  [param]" } else { "" }
            );
        }
        s
    }
}

/// `out += a @ b` for row-major buffers (`m x k` times `k x n`).
fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
