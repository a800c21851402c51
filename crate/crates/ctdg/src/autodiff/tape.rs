//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! A [`Tape`] records every primitive application in execution order, which
//! is already a topological order, so the backward pass is a single reverse
//! sweep that visits each node exactly once. Nodes whose value cannot reach
//! a parameter are skipped during backprop.

use super::rng::RngStream;
use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact Gaussian-CDF GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let phi = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    phi + x * pdf
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// x * w + b with b broadcast over rows.
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    /// Matrix plus a row vector broadcast over rows.
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Cos(Var),
    Sin(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, gain: Var, bias: Var, eps: f64 },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherCols { x: Var, idx: Vec<usize> },
    /// Flatten consecutive groups of `patch` rows, zero-padding the tail.
    PatchRows { x: Var, patch: usize },
    /// Mean of the selected rows, a 1 x w output.
    MeanRows { x: Var, rows: Vec<usize> },
    SumAll(Var),
    Transpose(Var),
    Dropout { x: Var, mask_scale: Vec<f64> },
    BceWithLogitsMean { logits: Var, labels: Vec<f64> },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Recording tape. `train` controls whether dropout is active.
pub struct Tape {
    nodes: Vec<Node>,
    pub train: bool,
    /// When set, every produced value is checked for NaN/Inf.
    pub check_finite: bool,
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
            train: false,
            check_finite: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        if self.check_finite {
            assert!(value.is_finite(), "non-finite value produced by {:?}", op);
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Insert a trainable parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Insert non-trainable data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.value(a).shape();
        let (kb, n) = self.value(b).shape();
        assert_eq!(ka, kb, "matmul shape mismatch: {m}x{ka} * {kb}x{n}");
        let mut out = Tensor::zeros(m, n);
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            m,
            ka,
            n,
            out.data_mut(),
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), out, ng)
    }

    /// x * w + b, the row-wise affine map.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (m, ka) = self.value(x).shape();
        let (kb, n) = self.value(w).shape();
        assert_eq!(ka, kb, "linear shape mismatch: {m}x{ka} * {kb}x{n}");
        assert_eq!(self.value(b).shape(), (1, n), "linear bias must be 1x{n}");
        let mut out = Tensor::zeros(m, n);
        matmul_acc(
            self.value(x).data(),
            self.value(w).data(),
            m,
            ka,
            n,
            out.data_mut(),
        );
        {
            let bias = self.value(b).data().to_vec();
            for r in 0..m {
                let row = &mut out.data_mut()[r * n..(r + 1) * n];
                for (o, bv) in row.iter_mut().zip(bias.iter()) {
                    *o += bv;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::Linear { x, w, b }, out, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "add shape mismatch"
        );
        let (r, c) = self.value(a).shape();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), Tensor::from_vec(r, c, data), ng)
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.value(a).shape();
        assert_eq!(self.value(b).shape(), (1, n), "bias must be 1x{n}");
        let mut out = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..m {
            let row = &mut out.data_mut()[r * n..(r + 1) * n];
            for (o, bv) in row.iter_mut().zip(bias.iter()) {
                *o += bv;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::AddBias(a, b), out, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "mul shape mismatch"
        );
        let (r, c) = self.value(a).shape();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), Tensor::from_vec(r, c, data), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, w) = self.value(a).shape();
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let ng = self.needs(a);
        self.push(Op::Scale(a, c), Tensor::from_vec(r, w, data), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let ng = self.needs(a);
        self.push(Op::Relu(a), Tensor::from_vec(r, c, data), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let data = self.value(a).data().iter().map(|&x| gelu_scalar(x)).collect();
        let ng = self.needs(a);
        self.push(Op::Gelu(a), Tensor::from_vec(r, c, data), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| sigmoid_scalar(x))
            .collect();
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), Tensor::from_vec(r, c, data), ng)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let data = self.value(a).data().iter().map(|x| x.cos()).collect();
        let ng = self.needs(a);
        self.push(Op::Cos(a), Tensor::from_vec(r, c, data), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let data = self.value(a).data().iter().map(|x| x.sin()).collect();
        let ng = self.needs(a);
        self.push(Op::Sin(a), Tensor::from_vec(r, c, data), ng)
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        assert!(c > 0, "softmax over empty rows");
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = self.value(a).row_slice(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let orow = &mut out.data_mut()[i * c..(i + 1) * c];
            for (o, &x) in orow.iter_mut().zip(row.iter()) {
                *o = (x - mx).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let ng = self.needs(a);
        self.push(Op::SoftmaxRows(a), out, ng)
    }

    /// Row-wise layer normalization with gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (r, c) = self.value(x).shape();
        assert_eq!(self.value(gain).shape(), (1, c), "layer-norm gain must be 1x{c}");
        assert_eq!(self.value(bias).shape(), (1, c), "layer-norm bias must be 1x{c}");
        let mut out = Tensor::zeros(r, c);
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        for i in 0..r {
            let row = self.value(x).row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let orow = &mut out.data_mut()[i * c..(i + 1) * c];
            for (j, (o, &x)) in orow.iter_mut().zip(row.iter()).enumerate() {
                *o = (x - mean) * inv * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(Op::LayerNormRows { x, gain, bias, eps }, out, ng)
    }

    /// Concatenate along the last axis; all inputs share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(r, total);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), r, "concat_cols row mismatch");
            let c = t.cols();
            for i in 0..r {
                let src = t.row_slice(i);
                out.data_mut()[i * total + off..i * total + off + c].copy_from_slice(src);
            }
            off += c;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), out, ng)
    }

    /// Stack inputs vertically; all inputs share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).cols();
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Tensor::zeros(total, c);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), c, "concat_rows column mismatch");
            let n = t.len();
            out.data_mut()[off..off + n].copy_from_slice(t.data());
            off += n;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatRows(parts.to_vec()), out, ng)
    }

    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let (r, c) = self.value(x).shape();
        assert!(idx.iter().all(|&j| j < c), "gather_cols index out of range");
        let mut out = Tensor::zeros(r, idx.len());
        for i in 0..r {
            let src = self.value(x).row_slice(i).to_vec();
            let dst = &mut out.data_mut()[i * idx.len()..(i + 1) * idx.len()];
            for (o, &j) in dst.iter_mut().zip(idx.iter()) {
                *o = src[j];
            }
        }
        let ng = self.needs(x);
        self.push(
            Op::GatherCols {
                x,
                idx: idx.to_vec(),
            },
            out,
            ng,
        )
    }

    /// Group `patch` consecutive rows into one flattened row, zero-padding
    /// the tail group. An empty input still yields one all-padding row.
    pub fn patch_rows(&mut self, x: Var, patch: usize) -> Var {
        assert!(patch >= 1, "patch size must be at least 1");
        let (n, w) = self.value(x).shape();
        let l = patch_count(n, patch);
        let mut out = Tensor::zeros(l, w * patch);
        for row in 0..n {
            let p = row / patch;
            let slot = row % patch;
            let src = self.value(x).row_slice(row).to_vec();
            out.data_mut()[p * w * patch + slot * w..p * w * patch + (slot + 1) * w]
                .copy_from_slice(&src);
        }
        let ng = self.needs(x);
        self.push(Op::PatchRows { x, patch }, out, ng)
    }

    /// Mean of the selected rows as a 1 x w vector.
    pub fn mean_rows_subset(&mut self, x: Var, rows: &[usize]) -> Var {
        let (n, w) = self.value(x).shape();
        assert!(!rows.is_empty(), "mean over empty row set");
        assert!(rows.iter().all(|&r| r < n), "mean_rows row out of range");
        let mut out = Tensor::zeros(1, w);
        for &r in rows {
            let src = self.value(x).row_slice(r).to_vec();
            for (o, v) in out.data_mut().iter_mut().zip(src.iter()) {
                *o += v;
            }
        }
        let k = rows.len() as f64;
        for o in out.data_mut().iter_mut() {
            *o /= k;
        }
        let ng = self.needs(x);
        self.push(
            Op::MeanRows {
                x,
                rows: rows.to_vec(),
            },
            out,
            ng,
        )
    }

    /// Mean over all rows.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let n = self.value(x).rows();
        let rows: Vec<usize> = (0..n).collect();
        self.mean_rows_subset(x, &rows)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Op::SumAll(x), Tensor::scalar(s), ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).shape();
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                let v = self.value(x).at(i, j);
                out.set(j, i, v);
            }
        }
        let ng = self.needs(x);
        self.push(Op::Transpose(x), out, ng)
    }

    /// Inverted dropout; identity when the tape is not in train mode or the
    /// rate is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngStream) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if !self.train || rate == 0.0 {
            return x;
        }
        let (r, c) = self.value(x).shape();
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask_scale: Vec<f64> = (0..r * c)
            .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(mask_scale.iter())
            .map(|(v, m)| v * m)
            .collect();
        let ng = self.needs(x);
        self.push(
            Op::Dropout { x, mask_scale },
            Tensor::from_vec(r, c, data),
            ng,
        )
    }

    /// Mean binary cross-entropy over logits, in the log-sum-exp form.
    pub fn bce_with_logits_mean(&mut self, logits: Var, labels: &[f64]) -> Var {
        let n = self.value(logits).len();
        assert_eq!(n, labels.len(), "bce labels length mismatch");
        assert!(n > 0, "bce over empty batch");
        let mut total = 0.0;
        for (&x, &y) in self.value(logits).data().iter().zip(labels.iter()) {
            total += x.max(0.0) - x * y + (1.0 + (-x.abs()).exp()).ln();
        }
        let ng = self.needs(logits);
        self.push(
            Op::BceWithLogitsMean {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(total / n as f64),
            ng,
        )
    }

    /// Reverse sweep from a scalar loss. Returns one gradient slot per node;
    /// leaves that the loss never reached hold zero gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            self.accumulate(id, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        Gradients { grads }
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut [Option<Tensor>],
        v: Var,
    ) -> Option<&'a mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1)))
    }

    fn accumulate(&self, id: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).shape();
                let n = self.value(*b).cols();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    matmul_nt_acc(gout.data(), self.nodes[b.0].value.data(), m, n, k, ga.data_mut());
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    matmul_tn_acc(self.nodes[a.0].value.data(), gout.data(), k, m, n, gb.data_mut());
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = self.value(*x).shape();
                let n = self.value(*w).cols();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    matmul_nt_acc(gout.data(), self.nodes[w.0].value.data(), m, n, k, gx.data_mut());
                }
                if let Some(gw) = self.grad_buf(grads, *w) {
                    matmul_tn_acc(self.nodes[x.0].value.data(), gout.data(), k, m, n, gw.data_mut());
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for r in 0..m {
                        let row = &gout.data()[r * n..(r + 1) * n];
                        for (o, v) in gb.data_mut().iter_mut().zip(row.iter()) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.grad_buf(grads, *v) {
                        for (o, x) in g.data_mut().iter_mut().zip(gout.data().iter()) {
                            *o += x;
                        }
                    }
                }
            }
            Op::AddBias(a, b) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for (o, x) in g.data_mut().iter_mut().zip(gout.data().iter()) {
                        *o += x;
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    let (m, n) = gout.shape();
                    for r in 0..m {
                        let row = &gout.data()[r * n..(r + 1) * n];
                        for (o, v) in g.data_mut().iter_mut().zip(row.iter()) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((o, x), y) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(self.nodes[b.0].value.data().iter())
                    {
                        *o += x * y;
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for ((o, x), y) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(self.nodes[a.0].value.data().iter())
                    {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for (o, x) in g.data_mut().iter_mut().zip(gout.data().iter()) {
                        *o += x * c;
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((o, x), inp) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(self.nodes[a.0].value.data().iter())
                    {
                        if *inp > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((o, x), inp) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(self.nodes[a.0].value.data().iter())
                    {
                        *o += x * gelu_grad_scalar(*inp);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((o, x), s) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(y.data().iter())
                    {
                        *o += x * s * (1.0 - s);
                    }
                }
            }
            Op::Cos(a) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((o, x), inp) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(self.nodes[a.0].value.data().iter())
                    {
                        *o -= x * inp.sin();
                    }
                }
            }
            Op::Sin(a) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((o, x), inp) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(self.nodes[a.0].value.data().iter())
                    {
                        *o += x * inp.cos();
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let (r, c) = y.shape();
                if let Some(g) = self.grad_buf(grads, *a) {
                    for i in 0..r {
                        let yrow = y.row_slice(i);
                        let grow = &gout.data()[i * c..(i + 1) * c];
                        let dotv: f64 = yrow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        let out = &mut g.data_mut()[i * c..(i + 1) * c];
                        for ((o, &yv), &gv) in out.iter_mut().zip(yrow.iter()).zip(grow.iter()) {
                            *o += yv * (gv - dotv);
                        }
                    }
                }
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = &self.nodes[x.0].value;
                let (r, c) = xv.shape();
                let gval = self.nodes[gain.0].value.data();
                for i in 0..r {
                    let row = xv.row_slice(i);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let grow = &gout.data()[i * c..(i + 1) * c];
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();

                    if self.nodes[gain.0].needs_grad {
                        let g = self.grad_buf(grads, *gain).unwrap();
                        for ((o, &gv), &xh) in
                            g.data_mut().iter_mut().zip(grow.iter()).zip(xhat.iter())
                        {
                            *o += gv * xh;
                        }
                    }
                    if self.nodes[bias.0].needs_grad {
                        let g = self.grad_buf(grads, *bias).unwrap();
                        for (o, &gv) in g.data_mut().iter_mut().zip(grow.iter()) {
                            *o += gv;
                        }
                    }
                    if self.nodes[x.0].needs_grad {
                        // dxhat = dy * gain; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                        let dxhat: Vec<f64> = grow
                            .iter()
                            .zip(gval.iter())
                            .map(|(&gv, &gn)| gv * gn)
                            .collect();
                        let m1 = dxhat.iter().sum::<f64>() / c as f64;
                        let m2 = dxhat
                            .iter()
                            .zip(xhat.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / c as f64;
                        let g = self.grad_buf(grads, *x).unwrap();
                        let out = &mut g.data_mut()[i * c..(i + 1) * c];
                        for ((o, &dxh), &xh) in out.iter_mut().zip(dxhat.iter()).zip(xhat.iter()) {
                            *o += inv * (dxh - m1 - xh * m2);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = gout.shape();
                let mut off = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.cols();
                    if let Some(g) = self.grad_buf(grads, p) {
                        for i in 0..r {
                            let src = &gout.data()[i * total + off..i * total + off + c];
                            let dst = &mut g.data_mut()[i * c..(i + 1) * c];
                            for (o, v) in dst.iter_mut().zip(src.iter()) {
                                *o += v;
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if let Some(g) = self.grad_buf(grads, p) {
                        for (o, v) in g
                            .data_mut()
                            .iter_mut()
                            .zip(gout.data()[off..off + n].iter())
                        {
                            *o += v;
                        }
                    }
                    off += n;
                }
            }
            Op::GatherCols { x, idx } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    let r = gout.rows();
                    let c = g.cols();
                    let w = idx.len();
                    for i in 0..r {
                        for (j, &src_col) in idx.iter().enumerate() {
                            g.data_mut()[i * c + src_col] += gout.data()[i * w + j];
                        }
                    }
                }
            }
            Op::PatchRows { x, patch } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    let (n, w) = g.shape();
                    let wp = w * patch;
                    for row in 0..n {
                        let p = row / patch;
                        let slot = row % patch;
                        let src = &gout.data()[p * wp + slot * w..p * wp + (slot + 1) * w];
                        let dst = &mut g.data_mut()[row * w..(row + 1) * w];
                        for (o, v) in dst.iter_mut().zip(src.iter()) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MeanRows { x, rows } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    let w = g.cols();
                    let scale = 1.0 / rows.len() as f64;
                    for &r in rows {
                        let dst = &mut g.data_mut()[r * w..(r + 1) * w];
                        for (o, v) in dst.iter_mut().zip(gout.data().iter()) {
                            *o += v * scale;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let s = gout.at(0, 0);
                if let Some(g) = self.grad_buf(grads, *x) {
                    for o in g.data_mut().iter_mut() {
                        *o += s;
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    let (r, c) = g.shape();
                    for i in 0..r {
                        for j in 0..c {
                            let v = gout.at(j, i);
                            g.data_mut()[i * c + j] += v;
                        }
                    }
                }
            }
            Op::Dropout { x, mask_scale } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    for ((o, gv), m) in g
                        .data_mut()
                        .iter_mut()
                        .zip(gout.data().iter())
                        .zip(mask_scale.iter())
                    {
                        *o += gv * m;
                    }
                }
            }
            Op::BceWithLogitsMean { logits, labels } => {
                let s = gout.at(0, 0) / labels.len() as f64;
                let lv = &self.nodes[logits.0].value;
                if let Some(g) = self.grad_buf(grads, *logits) {
                    for ((o, &x), &y) in g
                        .data_mut()
                        .iter_mut()
                        .zip(lv.data().iter())
                        .zip(labels.iter())
                    {
                        *o += s * (sigmoid_scalar(x) - y);
                    }
                }
            }
        }
    }
}

/// Number of patches covering `n` rows at patch size `p`, minimum 1.
pub fn patch_count(n: usize, p: usize) -> usize {
    std::cmp::max(1, n.div_ceil(p))
}

/// Gradients for every tape node, addressed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; zero tensor shape must be materialized by caller
    /// when absent (the loss never reached the leaf).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}
