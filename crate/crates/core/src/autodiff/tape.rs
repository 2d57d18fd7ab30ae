//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the indices of
//! its inputs. `backward` walks the list in reverse, so each node is visited
//! once and gradients from fan-out are summed. Only leaves keep gradients
//! between calls; intermediate adjoints live for a single sweep.

use super::activation::Activation;
use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Activate(Var, Activation),
    Exp(Var),
    Log(Var),
    ClampMin(Var, T),
    Powf(Var, T),
    Softplus(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize, usize),
    Transpose(Var),
    SqDist(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Ordered record of executed operations.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn dims(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], 1),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf copying `t`'s values; it tracks gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn variable(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, values)?.with_requires_grad(true);
        Ok(self.leaf(&t))
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// First element of a node, used for scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (p, q, s) = (sa[0], sa[1], sb[1]);
        let value = matmul_raw(self.value(a), self.value(b), p, q, s);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![p, s], value, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`q` bias to every row of a `p×q` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (p, q) = dims(self.shape(a));
        if self.value(bias).len() != q {
            return Err(Error::Shape {
                op: "add_bias",
                left: self.shape(a).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let value: Vec<T> = self.value(a).iter().enumerate().map(|(i, &v)| v + b[i % q]).collect();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(vec![p, q], value, Op::AddBias(a, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, value, op, rg)
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::AddScalar(a, c), |x| x + c)
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        self.map(a, Op::Activate(a, kind), |x| kind.apply(x))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), T::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), T::ln)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: T) -> Var {
        self.map(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    pub fn powf(&mut self, a: Var, p: T) -> Var {
        self.map(a, Op::Powf(a, p), |x| x.powf(p))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), softplus)
    }

    /// Row-wise log-softmax of a `batch×N` matrix, shifted by the row max.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (p, q) = dims(self.shape(a));
        let mut value = Vec::with_capacity(p * q);
        for row in self.value(a).chunks(q.max(1)) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            value.extend(row.iter().map(|&v| v - lse));
        }
        let rg = self.rg(a);
        self.push(vec![p, q], value, Op::LogSoftmax(a), rg)
    }

    /// Picks column `idx[i]` from row `i`, giving a `batch×1` column.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (p, q) = dims(self.shape(a));
        if idx.len() != p {
            return Err(Error::Shape {
                op: "gather",
                left: self.shape(a).to_vec(),
                right: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&c| c >= q) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for {q} columns"
            )));
        }
        let v = self.value(a);
        let value = idx.iter().enumerate().map(|(i, &c)| v[i * q + c]).collect();
        let rg = self.rg(a);
        Ok(self.push(vec![p, 1], value, Op::Gather(a, idx.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len().max(1));
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (p, q) = dims(self.shape(a));
        if start > end || end > q {
            return Err(Error::contract(format!(
                "column slice {start}..{end} out of range for {q} columns"
            )));
        }
        let v = self.value(a);
        let mut value = Vec::with_capacity(p * (end - start));
        for i in 0..p {
            value.extend_from_slice(&v[i * q + start..i * q + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(vec![p, end - start], value, Op::SliceCols(a, start, end), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (p, q) = dims(self.shape(a));
        let v = self.value(a);
        let mut value = vec![T::zero(); p * q];
        for i in 0..p {
            for j in 0..q {
                value[j * p + i] = v[i * q + j];
            }
        }
        let rg = self.rg(a);
        self.push(vec![q, p], value, Op::Transpose(a), rg)
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (`n×n`).
    pub fn sq_dist(&mut self, a: Var) -> Var {
        let (n, d) = dims(self.shape(a));
        let v = self.value(a);
        let mut value = vec![T::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s: T = (0..d)
                    .map(|k| {
                        let diff = v[i * d + k] - v[j * d + k];
                        diff * diff
                    })
                    .sum();
                value[i * n + j] = s;
                value[j * n + i] = s;
            }
        }
        let rg = self.rg(a);
        self.push(vec![n, n], value, Op::SqDist(a), rg)
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.rg(loss) {
            return Err(Error::contract(
                "loss is not reachable from any tensor that requires grad",
            ));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if let Op::Leaf = op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &op, &g, &mut adj);
        }
        Ok(())
    }

    fn send(&self, adj: &mut [Option<Vec<T>>], to: Var, contrib: impl FnOnce() -> Vec<T>) {
        if !self.rg(to) {
            return;
        }
        let c = contrib();
        match &mut adj[to.0] {
            Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(c),
        }
    }

    fn propagate(&self, i: usize, op: &Op<T>, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[i].value;
        let elementwise = |a: Var, f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
            self.value(a)
                .iter()
                .zip(out)
                .zip(g)
                .map(|((&x, &y), &gi)| f(x, y, gi))
                .collect()
        };
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = dims(self.shape(a));
                let s = self.shape(b)[1];
                self.send(adj, a, || {
                    // g · bᵀ
                    let bt = transpose_raw(self.value(b), q, s);
                    matmul_raw(g, &bt, p, s, q)
                });
                self.send(adj, b, || {
                    // aᵀ · g
                    let at = transpose_raw(self.value(a), p, q);
                    matmul_raw(&at, g, q, p, s)
                });
            }
            Op::AddBias(a, bias) => {
                let q = self.value(bias).len();
                self.send(adj, a, || g.to_vec());
                self.send(adj, bias, || {
                    let mut acc = vec![T::zero(); q];
                    for (k, &gi) in g.iter().enumerate() {
                        acc[k % q] = acc[k % q] + gi;
                    }
                    acc
                });
            }
            Op::Add(a, b) => {
                self.send(adj, a, || g.to_vec());
                self.send(adj, b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(adj, a, || g.to_vec());
                self.send(adj, b, || g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                self.send(adj, a, || self.value(b).iter().zip(g).map(|(&y, &gi)| y * gi).collect());
                self.send(adj, b, || self.value(a).iter().zip(g).map(|(&x, &gi)| x * gi).collect());
            }
            Op::Scale(a, c) => self.send(adj, a, || g.iter().map(|&v| v * c).collect()),
            Op::AddScalar(a, _) => self.send(adj, a, || g.to_vec()),
            Op::Activate(a, kind) => self.send(adj, a, || elementwise(a, &|x, y, gi| gi * kind.derivative(x, y))),
            Op::Exp(a) => self.send(adj, a, || elementwise(a, &|_, y, gi| gi * y)),
            Op::Log(a) => self.send(adj, a, || elementwise(a, &|x, _, gi| gi / x)),
            Op::ClampMin(a, floor) => self.send(adj, a, || {
                elementwise(a, &|x, _, gi| if x > floor { gi } else { T::zero() })
            }),
            Op::Powf(a, p) => self.send(adj, a, || elementwise(a, &|x, _, gi| gi * p * x.powf(p - T::one()))),
            Op::Softplus(a) => self.send(adj, a, || elementwise(a, &|x, _, gi| gi * Activation::Sigmoid.apply(x))),
            Op::LogSoftmax(a) => self.send(adj, a, || {
                let (_, q) = dims(self.shape(a));
                let mut res = Vec::with_capacity(out.len());
                for (orow, grow) in out.chunks(q).zip(g.chunks(q)) {
                    let gsum: T = grow.iter().copied().sum();
                    res.extend(orow.iter().zip(grow).map(|(&lp, &gi)| gi - lp.exp() * gsum));
                }
                res
            }),
            Op::Gather(a, ref idx) => self.send(adj, a, || {
                let (p, q) = dims(self.shape(a));
                let mut res = vec![T::zero(); p * q];
                for (r, &c) in idx.iter().enumerate() {
                    res[r * q + c] = g[r];
                }
                res
            }),
            Op::Sum(a) => self.send(adj, a, || vec![g[0]; self.value(a).len()]),
            Op::Mean(a) => self.send(adj, a, || {
                let n = self.value(a).len();
                vec![g[0] / T::from_usize_lossy(n.max(1)); n]
            }),
            Op::SliceCols(a, start, end) => self.send(adj, a, || {
                let (p, q) = dims(self.shape(a));
                let w = end - start;
                let mut res = vec![T::zero(); p * q];
                for r in 0..p {
                    res[r * q + start..r * q + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                res
            }),
            Op::Transpose(a) => self.send(adj, a, || {
                let (p, q) = dims(self.shape(a));
                // g is q×p
                transpose_raw(g, q, p)
            }),
            Op::SqDist(a) => self.send(adj, a, || {
                let (n, d) = dims(self.shape(a));
                let v = self.value(a);
                let mut res = vec![T::zero(); n * d];
                let two = T::lit(2.0);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = two * (g[i * n + j] + g[j * n + i]);
                        if w == T::zero() {
                            continue;
                        }
                        for k in 0..d {
                            res[i * d + k] = res[i * d + k] + w * (v[i * d + k] - v[j * d + k]);
                        }
                    }
                }
                res
            }),
        }
    }
}

fn transpose_raw<T: Scalar>(v: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = v[i * cols + j];
        }
    }
    out
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(t: &mut Tape<f64>, r: usize, c: usize, v: &[f64], rg: bool) -> Var {
        let t2 = Tensor::new(vec![r, c], v.to_vec()).unwrap().with_requires_grad(rg);
        t.leaf(&t2)
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let m = [1.0, -2.0, 3.0, 0.5, 4.0, 7.0, -1.0, 0.0, 2.5];
        let i = tape.leaf(&Tensor::identity(3));
        let b = mat(&mut tape, 3, 3, &m, false);
        let out = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(out), &m);
    }

    #[test]
    fn hand_matmul() {
        let mut tape = Tape::new();
        let a = mat(&mut tape, 2, 2, &[1.0, 2.0, 3.0, 4.0], false);
        let b = mat(&mut tape, 2, 1, &[1.0, 1.0], false);
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(out), &[2, 1]);
        assert_eq!(tape.value(out), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let mut tape = Tape::new();
        let a = mat(&mut tape, 2, 3, &[0.0; 6], false);
        let b = mat(&mut tape, 2, 3, &[0.0; 6], false);
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn log_softmax_uniform_and_shifted() {
        let mut tape = Tape::new();
        let a = mat(&mut tape, 2, 3, &[0.0, 0.0, 0.0, 1000.0, 0.0, 0.0], false);
        let lp = tape.log_softmax(a);
        let v = tape.value(lp);
        for &x in &v[..3] {
            assert!((x - (1.0_f64 / 3.0).ln()).abs() < 1e-15);
        }
        assert_eq!(v[3], 0.0);
        assert!((v[4] + 1000.0).abs() < 1e-9 && (v[5] + 1000.0).abs() < 1e-9);
        for row in v.chunks(3) {
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut tape = Tape::new();
        let a = mat(&mut tape, 1, 2, &[1.0, 2.0], true);
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = mat(&mut tape, 1, 2, &[1.0, 2.0], false);
        let s = tape.sum(a);
        assert!(tape.backward(s).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // f = sum(x * x) -> grad 2x, with x reused twice
        let mut tape = Tape::new();
        let x = mat(&mut tape, 1, 3, &[1.0, -2.0, 0.5], true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, -8.0, 2.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn relu_passes_upstream_exactly() {
        let mut tape = Tape::new();
        let x = mat(&mut tape, 1, 3, &[0.3, 2.0, 50.0], true);
        let y = tape.activate(x, Activation::Relu);
        let w = mat(&mut tape, 1, 3, &[1.7, -0.2, 3.3], false);
        let p = tape.mul(y, w).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.7, -0.2, 3.3]);
    }

    #[test]
    fn tanh_backward_vanishes_when_saturated() {
        let mut tape = Tape::new();
        let x = mat(&mut tape, 1, 3, &[10.0, -12.0, 25.0], true);
        let y = tape.activate(x, Activation::Tanh);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|g| g.abs() <= 1e-7));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0_f64) - 2.0_f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0_f64), 1000.0);
        assert!(softplus(-1000.0_f64) >= 0.0);
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut tape = Tape::new();
        let a = mat(&mut tape, 1, 3, &[0.0; 3], false);
        assert!(tape.gather(a, &[3]).is_err());
    }
}
