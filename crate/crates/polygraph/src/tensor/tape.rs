//! Execution tape recording forward ops so adjoints can be replayed in reverse.

use super::{Tensor, TensorError};
use rand::Rng;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    Scale(usize, f64),
    /// Multiply every entry of the first input by a 1x1 tensor.
    ScaleByScalar(usize, usize),
    ConcatCols(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    /// Row i of the output is row `indices[i]` of the input.
    GatherRows(usize, Vec<usize>),
    /// Per-row constant scaling (coefficients are not differentiated).
    ScaleRows(usize, Vec<f64>),
    /// s[i, k] = sum_j h[i, k*dh + j] * a[0, k*dh + j] for each head k.
    PerHeadDot(usize, usize, usize),
    /// out[i, k*dh + j] = m[i, k*dh + j] * w[i, k].
    MulHeadBroadcast(usize, usize, usize),
    SegmentSoftmax(usize, Vec<usize>),
    SegmentSum(usize, Vec<usize>),
    CrossEntropy {
        input: usize,
        labels: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
    BceLogits {
        input: usize,
        labels: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
    /// Mask entries already carry the 1/(1-rate) survivor scaling.
    Dropout(usize, Vec<f64>),
    SumAll(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::MulElem(..) => "mul_elementwise",
            Op::Scale(..) => "scale",
            Op::ScaleByScalar(..) => "scale_by_scalar",
            Op::ConcatCols(..) => "concat_cols",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::GatherRows(..) => "gather_rows",
            Op::ScaleRows(..) => "scale_rows",
            Op::PerHeadDot(..) => "per_head_dot",
            Op::MulHeadBroadcast(..) => "mul_head_broadcast",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SegmentSum(..) => "segment_sum",
            Op::CrossEntropy { .. } => "cross_entropy_logits",
            Op::BceLogits { .. } => "bce_logits",
            Op::Dropout(..) => "dropout",
            Op::SumAll(..) => "sum_all",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Reverse-mode differentiation tape.
///
/// Records every executed op in order; `backward` visits the records exactly
/// once in reverse to accumulate adjoints into every tensor reachable from the
/// loss that has `requires_grad` set.
pub struct Tape {
    nodes: Vec<Node>,
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
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorRef {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> TensorRef {
        self.leaf(value, false)
    }

    pub fn value(&self, t: TensorRef) -> &Tensor {
        &self.nodes[t.0].value
    }

    pub fn grad(&self, t: TensorRef) -> Option<&Tensor> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn shape(&self, t: TensorRef) -> (usize, usize) {
        self.nodes[t.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> TensorRef {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor, inputs: &[TensorRef]) -> Result<TensorRef, TensorError> {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(op, value, requires))
    }

    fn check_same_shape(
        &self,
        op: &'static str,
        a: TensorRef,
        b: TensorRef,
    ) -> Result<(), TensorError> {
        let (la, lb) = (self.shape(a), self.shape(b));
        if la != lb {
            return Err(TensorError::ShapeMismatch { op, lhs: la, rhs: lb });
        }
        Ok(())
    }

    // ---- forward ops ----

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let value = self.value_ref(a).matmul(self.value_ref(b));
        self.record(Op::MatMul(a.0, b.0), value, &[a, b])
    }

    fn value_ref(&self, t: TensorRef) -> &Tensor {
        &self.nodes[t.0].value
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        self.check_same_shape("add", a, b)?;
        let (r, c) = self.shape(a);
        let data = self
            .value_ref(a)
            .data()
            .iter()
            .zip(self.value_ref(b).data())
            .map(|(x, y)| x + y)
            .collect();
        self.record(Op::Add(a.0, b.0), Tensor::from_vec(r, c, data), &[a, b])
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        self.check_same_shape("sub", a, b)?;
        let (r, c) = self.shape(a);
        let data = self
            .value_ref(a)
            .data()
            .iter()
            .zip(self.value_ref(b).data())
            .map(|(x, y)| x - y)
            .collect();
        self.record(Op::Sub(a.0, b.0), Tensor::from_vec(r, c, data), &[a, b])
    }

    pub fn mul_elementwise(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        self.check_same_shape("mul_elementwise", a, b)?;
        let (r, c) = self.shape(a);
        let data = self
            .value_ref(a)
            .data()
            .iter()
            .zip(self.value_ref(b).data())
            .map(|(x, y)| x * y)
            .collect();
        self.record(Op::MulElem(a.0, b.0), Tensor::from_vec(r, c, data), &[a, b])
    }

    pub fn scale(&mut self, a: TensorRef, factor: f64) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(a);
        let data = self.value_ref(a).data().iter().map(|x| x * factor).collect();
        self.record(Op::Scale(a.0, factor), Tensor::from_vec(r, c, data), &[a])
    }

    /// Multiply all of `a` by the single entry of the 1x1 tensor `s`.
    pub fn scale_by_scalar(&mut self, a: TensorRef, s: TensorRef) -> Result<TensorRef, TensorError> {
        let ss = self.shape(s);
        if ss != (1, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "scale_by_scalar",
                lhs: self.shape(a),
                rhs: ss,
            });
        }
        let factor = self.value_ref(s).get(0, 0);
        let (r, c) = self.shape(a);
        let data = self.value_ref(a).data().iter().map(|x| x * factor).collect();
        self.record(Op::ScaleByScalar(a.0, s.0), Tensor::from_vec(r, c, data), &[a, s])
    }

    pub fn concat_cols(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(TensorError::ShapeMismatch { op: "concat_cols", lhs: sa, rhs: sb });
        }
        let mut out = Tensor::zeros(sa.0, sa.1 + sb.1);
        for i in 0..sa.0 {
            for j in 0..sa.1 {
                out.set(i, j, self.value_ref(a).get(i, j));
            }
            for j in 0..sb.1 {
                out.set(i, sa.1 + j, self.value_ref(b).get(i, j));
            }
        }
        self.record(Op::ConcatCols(a.0, b.0), out, &[a, b])
    }

    pub fn relu(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(a);
        let data = self.value_ref(a).data().iter().map(|x| x.max(0.0)).collect();
        self.record(Op::Relu(a.0), Tensor::from_vec(r, c, data), &[a])
    }

    pub fn leaky_relu(&mut self, a: TensorRef, slope: f64) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(a);
        let data = self
            .value_ref(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        self.record(Op::LeakyRelu(a.0, slope), Tensor::from_vec(r, c, data), &[a])
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(a);
        let data = self
            .value_ref(a)
            .data()
            .iter()
            .map(|&x| sigmoid_scalar(x))
            .collect();
        self.record(Op::Sigmoid(a.0), Tensor::from_vec(r, c, data), &[a])
    }

    pub fn tanh(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(a);
        let data = self.value_ref(a).data().iter().map(|x| x.tanh()).collect();
        self.record(Op::Tanh(a.0), Tensor::from_vec(r, c, data), &[a])
    }

    pub fn gather_rows(&mut self, a: TensorRef, indices: &[usize]) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(a);
        let mut out = Tensor::zeros(indices.len(), c);
        for (i, &src) in indices.iter().enumerate() {
            if src >= r {
                return Err(TensorError::SegmentOutOfRange { index: src, segments: r });
            }
            for j in 0..c {
                out.set(i, j, self.value_ref(a).get(src, j));
            }
        }
        self.record(Op::GatherRows(a.0, indices.to_vec()), out, &[a])
    }

    /// Scale each row of `a` by a fixed, non-differentiated coefficient.
    pub fn scale_rows(&mut self, a: TensorRef, coeffs: &[f64]) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(a);
        if coeffs.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: (r, c),
                rhs: (coeffs.len(), 1),
            });
        }
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, self.value_ref(a).get(i, j) * coeffs[i]);
            }
        }
        self.record(Op::ScaleRows(a.0, coeffs.to_vec()), out, &[a])
    }

    /// Per-head dot product with an attention vector: `h` is N x (heads*dh),
    /// `a` is 1 x (heads*dh); output N x heads.
    pub fn per_head_dot(
        &mut self,
        h: TensorRef,
        a: TensorRef,
        heads: usize,
    ) -> Result<TensorRef, TensorError> {
        let (sh, sa) = (self.shape(h), self.shape(a));
        if sa.0 != 1 || sa.1 != sh.1 || sh.1 % heads != 0 {
            return Err(TensorError::ShapeMismatch { op: "per_head_dot", lhs: sh, rhs: sa });
        }
        let dh = sh.1 / heads;
        let mut out = Tensor::zeros(sh.0, heads);
        for i in 0..sh.0 {
            for k in 0..heads {
                let mut s = 0.0;
                for j in 0..dh {
                    s += self.value_ref(h).get(i, k * dh + j) * self.value_ref(a).get(0, k * dh + j);
                }
                out.set(i, k, s);
            }
        }
        self.record(Op::PerHeadDot(h.0, a.0, heads), out, &[h, a])
    }

    /// Multiply each head block of `m` (R x heads*dh) by the matching column
    /// of `w` (R x heads).
    pub fn mul_head_broadcast(
        &mut self,
        m: TensorRef,
        w: TensorRef,
        heads: usize,
    ) -> Result<TensorRef, TensorError> {
        let (sm, sw) = (self.shape(m), self.shape(w));
        if sw.0 != sm.0 || sw.1 != heads || sm.1 % heads != 0 {
            return Err(TensorError::ShapeMismatch { op: "mul_head_broadcast", lhs: sm, rhs: sw });
        }
        let dh = sm.1 / heads;
        let mut out = Tensor::zeros(sm.0, sm.1);
        for i in 0..sm.0 {
            for k in 0..heads {
                let wv = self.value_ref(w).get(i, k);
                for j in 0..dh {
                    out.set(i, k * dh + j, self.value_ref(m).get(i, k * dh + j) * wv);
                }
            }
        }
        self.record(Op::MulHeadBroadcast(m.0, w.0, heads), out, &[m, w])
    }

    /// Softmax over rows sharing a segment id, independently per column.
    /// Uses per-segment max subtraction; empty segments produce nothing.
    pub fn segment_softmax(
        &mut self,
        scores: TensorRef,
        segment_of: &[usize],
    ) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(scores);
        if segment_of.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                lhs: (r, c),
                rhs: (segment_of.len(), 1),
            });
        }
        let num_segments = segment_of.iter().copied().max().map_or(0, |m| m + 1);
        let mut maxes = vec![f64::NEG_INFINITY; num_segments * c];
        for (e, &s) in segment_of.iter().enumerate() {
            for j in 0..c {
                let v = self.value_ref(scores).get(e, j);
                let slot = &mut maxes[s * c + j];
                if v > *slot {
                    *slot = v;
                }
            }
        }
        let mut sums = vec![0.0; num_segments * c];
        let mut out = Tensor::zeros(r, c);
        for (e, &s) in segment_of.iter().enumerate() {
            for j in 0..c {
                let v = (self.value_ref(scores).get(e, j) - maxes[s * c + j]).exp();
                out.set(e, j, v);
                sums[s * c + j] += v;
            }
        }
        for (e, &s) in segment_of.iter().enumerate() {
            for j in 0..c {
                out.set(e, j, out.get(e, j) / sums[s * c + j]);
            }
        }
        self.record(Op::SegmentSoftmax(scores.0, segment_of.to_vec()), out, &[scores])
    }

    /// Sum message rows into their segment; empty segments yield zero rows.
    /// Summation runs in ascending row order.
    pub fn segment_sum(
        &mut self,
        messages: TensorRef,
        segment_of: &[usize],
        num_segments: usize,
    ) -> Result<TensorRef, TensorError> {
        let (r, c) = self.shape(messages);
        if segment_of.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                lhs: (r, c),
                rhs: (segment_of.len(), 1),
            });
        }
        let mut out = Tensor::zeros(num_segments, c);
        for (e, &s) in segment_of.iter().enumerate() {
            if s >= num_segments {
                return Err(TensorError::SegmentOutOfRange { index: s, segments: num_segments });
            }
            for j in 0..c {
                out.set(s, j, out.get(s, j) + self.value_ref(messages).get(e, j));
            }
        }
        self.record(Op::SegmentSum(messages.0, segment_of.to_vec()), out, &[messages])
    }

    /// Mean over masked nodes of the softmax negative log-likelihood,
    /// stabilized by per-row max subtraction.
    pub fn cross_entropy_logits(
        &mut self,
        logits: TensorRef,
        labels: &[usize],
        mask: &[bool],
    ) -> Result<TensorRef, TensorError> {
        let (n, c) = self.shape(logits);
        if labels.len() != n || mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_logits",
                lhs: (n, c),
                rhs: (labels.len(), 1),
            });
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(TensorError::EmptyMask);
        }
        let mut probs = Tensor::zeros(n, c);
        let mut loss = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = self.value_ref(logits).row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &v in row {
                z += (v - max).exp();
            }
            for j in 0..c {
                probs.set(i, j, (row[j] - max).exp() / z);
            }
            loss += z.ln() + max - row[labels[i]];
        }
        loss /= count as f64;
        self.record(
            Op::CrossEntropy {
                input: logits.0,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            Tensor::scalar(loss),
            &[logits],
        )
    }

    /// Mean over masked nodes of the logistic negative log-likelihood on a
    /// single logit column, in the softplus form.
    pub fn bce_logits(
        &mut self,
        logits: TensorRef,
        labels: &[usize],
        mask: &[bool],
    ) -> Result<TensorRef, TensorError> {
        let (n, c) = self.shape(logits);
        if c != 1 || labels.len() != n || mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "bce_logits",
                lhs: (n, c),
                rhs: (labels.len(), 1),
            });
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(TensorError::EmptyMask);
        }
        let mut loss = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let z = self.value_ref(logits).get(i, 0);
            let y = labels[i] as f64;
            // max(z,0) - z*y + ln(1 + exp(-|z|))
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        loss /= count as f64;
        self.record(
            Op::BceLogits {
                input: logits.0,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            Tensor::scalar(loss),
            &[logits],
        )
    }

    /// Zero entries with probability `rate` and scale survivors by
    /// 1/(1-rate); identity when `train` is false.
    pub fn dropout<R: Rng>(
        &mut self,
        a: TensorRef,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<TensorRef, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadDropoutRate(rate));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self
            .value_ref(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.record(Op::Dropout(a.0, mask), Tensor::from_vec(r, c, data), &[a])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let s: f64 = self.value_ref(a).data().iter().sum();
        self.record(Op::SumAll(a.0), Tensor::scalar(s), &[a])
    }

    // ---- backward ----

    pub fn backward(&mut self, loss: TensorRef) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::DoubleBackward);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx);
        }
        Ok(())
    }

    fn take_grad(&mut self, idx: usize) -> Tensor {
        self.nodes[idx].grad.clone().expect("grad present")
    }

    fn accumulate(&mut self, idx: usize, delta: &Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let shape = self.nodes[idx].value.shape();
        let grad = self
            .nodes[idx]
            .grad
            .get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
        for (g, d) in grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    fn propagate(&mut self, idx: usize) {
        let g = self.take_grad(idx);
        // Values are cloned where the adjoint needs them; tapes are short-lived
        // and the clones keep the borrow structure simple.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let da = g.matmul(&transpose(&bv));
                let db = transpose(&av).matmul(&g);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, &g);
                self.accumulate(b, &g);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, &g);
                let neg = map(&g, |x| -x);
                self.accumulate(b, &neg);
            }
            Op::MulElem(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let da = zip(&g, &bv, |x, y| x * y);
                let db = zip(&g, &av, |x, y| x * y);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Scale(a, f) => {
                let (a, f) = (*a, *f);
                let da = map(&g, |x| x * f);
                self.accumulate(a, &da);
            }
            Op::ScaleByScalar(a, s) => {
                let (a, s) = (*a, *s);
                let factor = self.nodes[s].value.get(0, 0);
                let av = self.nodes[a].value.clone();
                let da = map(&g, |x| x * factor);
                let ds: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                self.accumulate(a, &da);
                self.accumulate(s, &Tensor::scalar(ds));
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let (ra, ca) = self.nodes[a].value.shape();
                let cb = self.nodes[b].value.cols();
                let mut da = Tensor::zeros(ra, ca);
                let mut db = Tensor::zeros(ra, cb);
                for i in 0..ra {
                    for j in 0..ca {
                        da.set(i, j, g.get(i, j));
                    }
                    for j in 0..cb {
                        db.set(i, j, g.get(i, ca + j));
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Relu(a) => {
                let a = *a;
                let av = self.nodes[a].value.clone();
                let da = zip(&g, &av, |x, v| if v > 0.0 { x } else { 0.0 });
                self.accumulate(a, &da);
            }
            Op::LeakyRelu(a, slope) => {
                let (a, slope) = (*a, *slope);
                let av = self.nodes[a].value.clone();
                let da = zip(&g, &av, |x, v| if v > 0.0 { x } else { slope * x });
                self.accumulate(a, &da);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let yv = self.nodes[idx].value.clone();
                let da = zip(&g, &yv, |x, y| x * y * (1.0 - y));
                self.accumulate(a, &da);
            }
            Op::Tanh(a) => {
                let a = *a;
                let yv = self.nodes[idx].value.clone();
                let da = zip(&g, &yv, |x, y| x * (1.0 - y * y));
                self.accumulate(a, &da);
            }
            Op::GatherRows(a, indices) => {
                let a = *a;
                let indices = indices.clone();
                let (ra, ca) = self.nodes[a].value.shape();
                let mut da = Tensor::zeros(ra, ca);
                for (i, &src) in indices.iter().enumerate() {
                    for j in 0..ca {
                        da.set(src, j, da.get(src, j) + g.get(i, j));
                    }
                }
                self.accumulate(a, &da);
            }
            Op::ScaleRows(a, coeffs) => {
                let a = *a;
                let coeffs = coeffs.clone();
                let (r, c) = g.shape();
                let mut da = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        da.set(i, j, g.get(i, j) * coeffs[i]);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::PerHeadDot(h, a, heads) => {
                let (h, a, heads) = (*h, *a, *heads);
                let hv = self.nodes[h].value.clone();
                let av = self.nodes[a].value.clone();
                let (n, w) = hv.shape();
                let dh = w / heads;
                let mut dhm = Tensor::zeros(n, w);
                let mut dam = Tensor::zeros(1, w);
                for i in 0..n {
                    for k in 0..heads {
                        let gs = g.get(i, k);
                        for j in 0..dh {
                            let col = k * dh + j;
                            dhm.set(i, col, dhm.get(i, col) + gs * av.get(0, col));
                            dam.set(0, col, dam.get(0, col) + gs * hv.get(i, col));
                        }
                    }
                }
                self.accumulate(h, &dhm);
                self.accumulate(a, &dam);
            }
            Op::MulHeadBroadcast(m, w, heads) => {
                let (m, w, heads) = (*m, *w, *heads);
                let mv = self.nodes[m].value.clone();
                let wv = self.nodes[w].value.clone();
                let (r, wide) = mv.shape();
                let dh = wide / heads;
                let mut dm = Tensor::zeros(r, wide);
                let mut dw = Tensor::zeros(r, heads);
                for i in 0..r {
                    for k in 0..heads {
                        let wvv = wv.get(i, k);
                        let mut acc = 0.0;
                        for j in 0..dh {
                            let col = k * dh + j;
                            dm.set(i, col, g.get(i, col) * wvv);
                            acc += g.get(i, col) * mv.get(i, col);
                        }
                        dw.set(i, k, acc);
                    }
                }
                self.accumulate(m, &dm);
                self.accumulate(w, &dw);
            }
            Op::SegmentSoftmax(a, segment_of) => {
                let a = *a;
                let segment_of = segment_of.clone();
                let yv = self.nodes[idx].value.clone();
                let (r, c) = yv.shape();
                let num_segments = segment_of.iter().copied().max().map_or(0, |m| m + 1);
                // per segment/column: sum_f g_f * y_f
                let mut dots = vec![0.0; num_segments * c];
                for (e, &s) in segment_of.iter().enumerate() {
                    for j in 0..c {
                        dots[s * c + j] += g.get(e, j) * yv.get(e, j);
                    }
                }
                let mut da = Tensor::zeros(r, c);
                for (e, &s) in segment_of.iter().enumerate() {
                    for j in 0..c {
                        da.set(e, j, yv.get(e, j) * (g.get(e, j) - dots[s * c + j]));
                    }
                }
                self.accumulate(a, &da);
            }
            Op::SegmentSum(a, segment_of) => {
                let a = *a;
                let segment_of = segment_of.clone();
                let (r, c) = self.nodes[a].value.shape();
                let mut da = Tensor::zeros(r, c);
                for (e, &s) in segment_of.iter().enumerate() {
                    for j in 0..c {
                        da.set(e, j, g.get(s, j));
                    }
                }
                self.accumulate(a, &da);
            }
            Op::CrossEntropy { input, labels, mask, probs, count } => {
                let input = *input;
                let labels = labels.clone();
                let mask = mask.clone();
                let probs = probs.clone();
                let count = *count;
                let gl = g.get(0, 0) / count as f64;
                let (n, c) = probs.shape();
                let mut da = Tensor::zeros(n, c);
                for i in 0..n {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..c {
                        let ind = if labels[i] == j { 1.0 } else { 0.0 };
                        da.set(i, j, gl * (probs.get(i, j) - ind));
                    }
                }
                self.accumulate(input, &da);
            }
            Op::BceLogits { input, labels, mask, count } => {
                let input = *input;
                let labels = labels.clone();
                let mask = mask.clone();
                let count = *count;
                let zv = self.nodes[input].value.clone();
                let gl = g.get(0, 0) / count as f64;
                let n = zv.rows();
                let mut da = Tensor::zeros(n, 1);
                for i in 0..n {
                    if !mask[i] {
                        continue;
                    }
                    let p = sigmoid_scalar(zv.get(i, 0));
                    da.set(i, 0, gl * (p - labels[i] as f64));
                }
                self.accumulate(input, &da);
            }
            Op::Dropout(a, mask) => {
                let a = *a;
                let mask = mask.clone();
                let (r, c) = g.shape();
                let data = g.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
                let da = Tensor::from_vec(r, c, data);
                self.accumulate(a, &da);
            }
            Op::SumAll(a) => {
                let a = *a;
                let (r, c) = self.nodes[a].value.shape();
                let gv = g.get(0, 0);
                let da = Tensor::from_vec(r, c, vec![gv; r * c]);
                self.accumulate(a, &da);
            }
        }
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.cols(), t.rows());
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            out.set(j, i, t.get(i, j));
        }
    }
    out
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let (r, c) = t.shape();
    Tensor::from_vec(r, c, t.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (r, c) = a.shape();
    Tensor::from_vec(
        r,
        c,
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}
