use rand::Rng;

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities inside the cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Membership of a row in a two-sample balancing term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Treated,
    Control,
    Excluded,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Hadamard(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    CausalConv {
        x: Var,
        w: Var,
        geo: ConvGeometry,
    },
    GraphProp {
        adj: Var,
        h: Var,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatCols(Var, Var),
    BroadcastRows(Var),
    RepeatRows {
        x: Var,
        times: usize,
    },
    VStack(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    SumSquares(Var),
    Bce {
        p: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    Mmd {
        z: Var,
        groups: Vec<Group>,
        diff: Vec<f64>,
        n1: usize,
        n0: usize,
    },
    Hinge {
        y: Var,
        lower: Vec<f64>,
        upper: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of executed operations. Each operation appends a node whose inputs
/// precede it, so reverse insertion order is a valid backward schedule.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visits: Vec<u32>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    /// How many times the backward pass processed `var`.
    pub fn visits(&self, var: Var) -> u32 {
        self.visits.get(var.0).copied().unwrap_or(0)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a leaf. Gradients are tracked when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        if tb.shape().len() != 2 || tb.shape()[0] != k {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let n = tb.cols();
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Sub(a, b), needs))
    }

    /// Adds a bias vector (length = column count) to every row.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let cols = ta.cols();
        if tb.len() != cols {
            return Err(Error::dim("add_row_bias", ta.shape(), tb.shape()));
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRowBias(a, bias), needs))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Hadamard(a, b), needs))
    }

    /// Elementwise product with a constant (non-differentiable) factor.
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if factor.len() != ta.len() {
            return Err(Error::dim("mul_const", ta.shape(), &[factor.len()]));
        }
        let out: Vec<f64> = ta.data().iter().zip(&factor).map(|(x, f)| x * f).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::MulConst(a, factor), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let out = ta.data().iter().map(|x| x * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), out).expect("shape preserved");
        let needs = self.needs(a);
        self.push(t, Op::Scale(a, c), needs)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), out).expect("shape preserved");
        let needs = self.needs(a);
        self.push(t, op, needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Row-wise softmax (max-subtracted).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut out = ta.data().to_vec();
        kernels::softmax_rows_inplace(&mut out, cols);
        let t = Tensor::new(ta.shape().to_vec(), out).expect("shape preserved");
        let needs = self.needs(a);
        self.push(t, Op::SoftmaxRows(a), needs)
    }

    /// Multi-channel dilated causal convolution over `x` laid out as
    /// `(batch·seq_len) × c_in`; `w` is `(kernel·c_in) × c_out`.
    pub fn causal_conv(&mut self, x: Var, w: Var, seq_len: usize, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::Parameter("dilation must be at least 1".into()));
        }
        let (tx, tw) = (self.value(x), self.value(w));
        let c_in = tx.cols();
        if seq_len == 0 || tx.rows() % seq_len != 0 {
            return Err(Error::dim("causal_conv", tx.shape(), &[seq_len]));
        }
        if tw.shape().len() != 2 || tw.shape()[0] % c_in != 0 {
            return Err(Error::dim("causal_conv", tx.shape(), tw.shape()));
        }
        let geo = ConvGeometry {
            batch: tx.rows() / seq_len,
            seq_len,
            c_in,
            c_out: tw.cols(),
            kernel: tw.shape()[0] / c_in,
            dilation,
        };
        let mut out = vec![0.0; tx.rows() * geo.c_out];
        kernels::causal_conv_forward(tx.data(), tw.data(), &mut out, geo);
        let needs = self.needs(x) || self.needs(w);
        let t = Tensor::new(vec![tx.rows(), geo.c_out], out)?;
        Ok(self.push(t, Op::CausalConv { x, w, geo }, needs))
    }

    /// Single-channel dilated causal convolution of a sequence with a filter.
    pub fn dilated_causal_conv1d(&mut self, r: Var, filter: Var, dilation: usize) -> Result<Var> {
        let len = self.value(r).len();
        let k = self.value(filter).len();
        let r2 = self.reshape(r, vec![len, 1])?;
        let f2 = self.reshape(filter, vec![k, 1])?;
        let out = self.causal_conv(r2, f2, len, dilation)?;
        self.reshape(out, vec![len])
    }

    /// Applies `adj` (`m×m`) to every consecutive block of `m` rows of `h`.
    pub fn graph_propagate(&mut self, adj: Var, h: Var) -> Result<Var> {
        let (ta, th) = (self.value(adj), self.value(h));
        let m = ta.cols();
        if ta.shape() != [m, m] || th.rows() % m != 0 {
            return Err(Error::dim("graph_propagate", ta.shape(), th.shape()));
        }
        let c = th.cols();
        let blocks = th.rows() / m;
        let mut out = vec![0.0; th.len()];
        for b in 0..blocks {
            let hb = &th.data()[b * m * c..(b + 1) * m * c];
            let ob = &mut out[b * m * c..(b + 1) * m * c];
            kernels::matmul_acc(ta.data(), hb, ob, m, m, c);
        }
        let needs = self.needs(adj) || self.needs(h);
        let t = Tensor::new(th.shape().to_vec(), out)?;
        Ok(self.push(t, Op::GraphProp { adj, h }, needs))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        let n = tx.rows();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            if r >= n {
                return Err(Error::Bounds(format!("row {r} of {n}")));
            }
            out.extend_from_slice(tx.row(r));
        }
        let needs = self.needs(x);
        let t = Tensor::new(vec![rows.len(), c], out)?;
        Ok(self.push(t, Op::GatherRows { x, rows }, needs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::dim("concat_cols", ta.shape(), tb.shape()));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            out.extend_from_slice(ta.row(r));
            out.extend_from_slice(tb.row(r));
        }
        let needs = self.needs(a) || self.needs(b);
        let t = Tensor::new(vec![ta.rows(), ca + cb], out)?;
        Ok(self.push(t, Op::ConcatCols(a, b), needs))
    }

    /// Tiles a single row vector into `n` rows.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var> {
        let tv = self.value(v);
        let c = tv.len();
        let out = tv.data().repeat(n);
        let needs = self.needs(v);
        let t = Tensor::new(vec![n, c], out)?;
        Ok(self.push(t, Op::BroadcastRows(v), needs))
    }

    /// Repeats each row `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        let mut out = Vec::with_capacity(tx.len() * times);
        for r in 0..tx.rows() {
            for _ in 0..times {
                out.extend_from_slice(tx.row(r));
            }
        }
        let needs = self.needs(x);
        let t = Tensor::new(vec![tx.rows() * times, c], out)?;
        Ok(self.push(t, Op::RepeatRows { x, times }, needs))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Parameter("vstack of nothing".into()))?;
        let c = self.value(*first).cols();
        let mut out = Vec::new();
        let mut needs = false;
        for &p in parts {
            let tp = self.value(p);
            if tp.cols() != c {
                return Err(Error::dim("vstack", self.value(*first).shape(), tp.shape()));
            }
            out.extend_from_slice(tp.data());
            needs |= self.needs(p);
        }
        let rows = out.len() / c;
        let t = Tensor::new(vec![rows, c], out)?;
        Ok(self.push(t, Op::VStack(parts.to_vec()), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().with_requires_grad(false).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumSquares(x), needs)
    }

    /// Weighted, summed binary cross-entropy of probabilities `p` against
    /// 0/1 `targets`. Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, p: Var, targets: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let tp = self.value(p);
        if targets.len() != tp.len() || weights.len() != tp.len() {
            return Err(Error::dim("bce", tp.shape(), &[targets.len(), weights.len()]));
        }
        let loss = tp
            .data()
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&p, &y), &w)| if w == 0.0 { 0.0 } else { w * bce_scalar(p, y) })
            .sum();
        let needs = self.needs(p);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, targets, weights }, needs))
    }

    /// Squared linear MMD between the treated and control rows of `z`.
    /// Evaluates to zero (with zero gradient) when either group is empty.
    pub fn mmd_linear_sq(&mut self, z: Var, groups: Vec<Group>) -> Result<Var> {
        let tz = self.value(z);
        if groups.len() != tz.rows() {
            return Err(Error::dim("mmd_linear_sq", tz.shape(), &[groups.len()]));
        }
        let d = tz.cols();
        let (mut m1, mut m0) = (vec![0.0; d], vec![0.0; d]);
        let (mut n1, mut n0) = (0usize, 0usize);
        for (r, g) in groups.iter().enumerate() {
            let (acc, n) = match g {
                Group::Treated => (&mut m1, &mut n1),
                Group::Control => (&mut m0, &mut n0),
                Group::Excluded => continue,
            };
            *n += 1;
            for (a, v) in acc.iter_mut().zip(tz.row(r)) {
                *a += v;
            }
        }
        let (diff, loss) = if n1 == 0 || n0 == 0 {
            (vec![0.0; d], 0.0)
        } else {
            let diff: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a / n1 as f64 - b / n0 as f64).collect();
            let loss = diff.iter().map(|v| v * v).sum();
            (diff, loss)
        };
        let needs = self.needs(z) && n1 > 0 && n0 > 0;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mmd {
                z,
                groups,
                diff,
                n1,
                n0,
            },
            needs,
        ))
    }

    /// Weighted hinge penalty `relu(lower - y) + relu(y - upper)`, summed.
    pub fn range_hinge(&mut self, y: Var, lower: Vec<f64>, upper: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let ty = self.value(y);
        let n = ty.len();
        if lower.len() != n || upper.len() != n || weights.len() != n {
            return Err(Error::dim("range_hinge", ty.shape(), &[lower.len(), upper.len()]));
        }
        let loss = ty
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| weights[i] * ((lower[i] - v).max(0.0) + (v - upper[i]).max(0.0)))
            .sum();
        let needs = self.needs(y);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Hinge {
                y,
                lower,
                upper,
                weights,
            },
            needs,
        ))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales the
    /// survivors by `1 / (1 - rate)`. Identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mul_const(x, mask)
    }

    /// Reverse pass from `loss`, seeded with ones.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        let mut visits = vec![0u32; n];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visits[i] += 1;
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Gradients { grads, visits }
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |ga| kernels::matmul_a_bt_acc(g, tb.data(), ga, m, k, n));
                acc(*b, &mut |gb| kernels::matmul_at_b_acc(ta.data(), g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::AddRowBias(a, bias) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let cols = out.cols();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::MulConst(a, factor) => acc(*a, &mut |ga| {
                for ((o, gv), f) in ga.iter_mut().zip(g).zip(factor) {
                    *o += gv * f;
                }
            }),
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (o, gv) in ga.iter_mut().zip(g) {
                    *o += gv * c;
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((o, gv), s) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * s * (1.0 - s);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((o, gv), t) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * (1.0 - t * t);
                }
            }),
            Op::Relu(a) => {
                let ta = self.value(*a);
                acc(*a, &mut |ga| {
                    for ((o, gv), x) in ga.iter_mut().zip(g).zip(ta.data()) {
                        if *x > 0.0 {
                            *o += gv;
                        }
                    }
                })
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                acc(*a, &mut |ga| {
                    for ((go, gr), yr) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gv), y) in go.iter_mut().zip(gr).zip(yr) {
                            *o += y * (gv - dot);
                        }
                    }
                })
            }
            Op::CausalConv { x, w, geo } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                acc(*x, &mut |gx| {
                    kernels::causal_conv_backward(tx.data(), tw.data(), g, Some(gx), None, *geo)
                });
                acc(*w, &mut |gw| {
                    kernels::causal_conv_backward(tx.data(), tw.data(), g, None, Some(gw), *geo)
                });
            }
            Op::GraphProp { adj, h } => {
                let (ta, th) = (self.value(*adj), self.value(*h));
                let m = ta.cols();
                let c = th.cols();
                let blocks = th.rows() / m;
                acc(*h, &mut |gh| {
                    for b in 0..blocks {
                        let gb = &g[b * m * c..(b + 1) * m * c];
                        let ob = &mut gh[b * m * c..(b + 1) * m * c];
                        kernels::matmul_at_b_acc(ta.data(), gb, ob, m, m, c);
                    }
                });
                acc(*adj, &mut |gadj| {
                    for b in 0..blocks {
                        let gb = &g[b * m * c..(b + 1) * m * c];
                        let hb = &th.data()[b * m * c..(b + 1) * m * c];
                        kernels::matmul_a_bt_acc(gb, hb, gadj, m, m, c);
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let c = out.cols();
                acc(*x, &mut |gx| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gx[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                })
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let c = ca + cb;
                acc(*a, &mut |ga| {
                    for (r, gr) in g.chunks(c).enumerate() {
                        add_into(&mut ga[r * ca..(r + 1) * ca], &gr[..ca]);
                    }
                });
                acc(*b, &mut |gb| {
                    for (r, gr) in g.chunks(c).enumerate() {
                        add_into(&mut gb[r * cb..(r + 1) * cb], &gr[ca..]);
                    }
                });
            }
            Op::BroadcastRows(v) => {
                let c = out.cols();
                acc(*v, &mut |gv| {
                    for row in g.chunks(c) {
                        add_into(gv, row);
                    }
                })
            }
            Op::RepeatRows { x, times } => {
                let c = out.cols();
                acc(*x, &mut |gx| {
                    for (i, row) in g.chunks(c).enumerate() {
                        let r = i / times;
                        add_into(&mut gx[r * c..(r + 1) * c], row);
                    }
                })
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let slice = &g[offset..offset + len];
                    acc(*p, &mut |gp| add_into(gp, slice));
                    offset += len;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::SumSquares(x) => {
                let tx = self.value(*x);
                acc(*x, &mut |gx| {
                    for (o, v) in gx.iter_mut().zip(tx.data()) {
                        *o += 2.0 * v * g[0];
                    }
                })
            }
            Op::Bce { p, targets, weights } => {
                let tp = self.value(*p);
                acc(*p, &mut |gp| {
                    for i in 0..gp.len() {
                        let pv = tp.data()[i];
                        if weights[i] == 0.0 || !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pv) {
                            continue;
                        }
                        let y = targets[i];
                        gp[i] += g[0] * weights[i] * (-y / pv + (1.0 - y) / (1.0 - pv));
                    }
                })
            }
            Op::Mmd {
                z,
                groups,
                diff,
                n1,
                n0,
            } => {
                let d = diff.len();
                let s1 = 2.0 * g[0] / *n1 as f64;
                let s0 = -2.0 * g[0] / *n0 as f64;
                acc(*z, &mut |gz| {
                    for (r, grp) in groups.iter().enumerate() {
                        let s = match grp {
                            Group::Treated => s1,
                            Group::Control => s0,
                            Group::Excluded => continue,
                        };
                        for (o, dv) in gz[r * d..(r + 1) * d].iter_mut().zip(diff) {
                            *o += s * dv;
                        }
                    }
                })
            }
            Op::Hinge {
                y,
                lower,
                upper,
                weights,
            } => {
                let ty = self.value(*y);
                acc(*y, &mut |gy| {
                    for i in 0..gy.len() {
                        let v = ty.data()[i];
                        if v < lower[i] {
                            gy[i] -= g[0] * weights[i];
                        } else if v > upper[i] {
                            gy[i] += g[0] * weights[i];
                        }
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Cross-entropy of one clamped probability against a 0/1 label.
pub fn bce_scalar(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
