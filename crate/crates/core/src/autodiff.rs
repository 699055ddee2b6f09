//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive as it is evaluated. Nodes are appended
//! in evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Hadamard,
}

/// Training enables dropout; evaluation makes it the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

pub fn sigmoid<T: Real>(v: T) -> T {
    // Only ever exponentiate a non-positive number.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl Unary {
    pub fn apply<T: Real>(self, v: T) -> T {
        match self {
            Unary::Sigmoid => sigmoid(v),
            Unary::Tanh => v.tanh(),
            Unary::Identity => v,
        }
    }

    /// Derivative expressed through the output value `y`.
    fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Tanh => T::one() - y * y,
            Unary::Identity => T::one(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Identity => "identity",
        }
    }
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Hadamard => "hadamard",
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Unary(Unary, Var),
    /// The flag marks `rhs` as a `1 × n` row broadcast over the rows of `lhs`.
    Binary(Binary, Var, Var, bool),
    OneMinus(Var),
    Scale(Var, T),
    Sum(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

#[derive(Default)]
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
    parameters: Vec<Var>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            parameters: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input. Gradients still flow to it and can be read back,
    /// but it is not part of the trainable set.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(Op::Leaf, value, "constant")
    }

    /// A trainable leaf, reported by [`Gradients::parameters`].
    pub fn parameter(&mut self, value: Tensor<T>) -> Result<Var> {
        let v = self.push(Op::Leaf, value, "parameter")?;
        self.parameters.push(v);
        Ok(v)
    }

    pub fn parameters(&self) -> &[Var] {
        &self.parameters
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        self.push(Op::MatMulNt(a, b), out, "matmul_nt")
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let value = self.value(x);
        value.ensure_finite(kind.name())?;
        let out = value.map(|v| kind.apply(v));
        self.push(Op::Unary(kind, x), out, kind.name())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    /// Component-wise binary op. Shapes must match, except that a `1 × n`
    /// right-hand side broadcasts over an `m × n` left-hand side (and, for
    /// `add` and `hadamard`, the other way round).
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            let out = self
                .value(a)
                .zip_map(self.value(b), kind.name(), |x, y| combine(kind, x, y))?;
            return self.push(Op::Binary(kind, a, b, false), out, kind.name());
        }
        if sb.0 == 1 && sb.1 == sa.1 {
            let out = broadcast(kind, self.value(a), self.value(b));
            return self.push(Op::Binary(kind, a, b, true), out, kind.name());
        }
        if kind != Binary::Sub && sa.0 == 1 && sa.1 == sb.1 {
            return self.binary(kind, b, a);
        }
        Err(Error::Dimension {
            op: kind.name(),
            left: sa,
            right: sb,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Hadamard, a, b)
    }

    /// `1 − x`, the coupled complement of a gate.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| T::one() - v);
        self.push(Op::OneMinus(x), out, "one_minus")
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let out = self.value(x).scale(k);
        self.push(Op::Scale(x, k), out, "scale")
    }

    /// Sum of all components as a `1 × 1` node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), out, "sum")
    }

    /// Embedding lookup: row `ids[r]` of `table` becomes row `r` of the output.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: id,
                    bound: t.rows(),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_vec_unchecked(ids.len(), t.cols(), data);
        self.push(
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            out,
            "gather_rows",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&values)?;
        self.push(Op::ConcatRows(parts.to_vec()), out, "concat_rows")
    }

    /// Mean over rows of `−log softmax(logits)[target]`, stabilized by
    /// subtracting each row's maximum.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if targets.len() != l.rows() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: l.shape(),
                right: (targets.len(), 1),
            });
        }
        l.ensure_finite("softmax_cross_entropy")?;
        let (rows, cols) = l.shape();
        let mut probs = Vec::with_capacity(rows * cols);
        let mut total = T::zero();
        for (r, &target) in targets.iter().enumerate() {
            if target >= cols {
                return Err(Error::Index {
                    op: "softmax_cross_entropy",
                    index: target,
                    bound: cols,
                });
            }
            let row = l.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            total = total + (log_denom - (row[target] - max));
            probs.extend(row.iter().map(|&v| (v - max).exp() / denom));
        }
        let loss = total / T::of(rows as f64);
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: Tensor::from_vec_unchecked(rows, cols, probs),
            },
            Tensor::scalar(loss),
            "softmax_cross_entropy",
        )
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let (rows, cols) = self.value(x).shape();
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..rows * cols)
            .map(|_| if rng.unit() < rate { T::zero() } else { keep })
            .collect();
        let mask = self.constant(Tensor::from_vec_unchecked(rows, cols, mask))?;
        self.hadamard(x, mask)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        adj[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            // Leaves keep their adjoints; interior ones are consumed.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(up) = adj[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let da = up.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&up)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    // out = a bᵀ: da = up b, db = upᵀ a
                    let da = up.matmul(self.value(*b))?;
                    let db = up.matmul_tn(self.value(*a))?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Unary(kind, x) => {
                    let grad = node
                        .value
                        .zip_map(&up, "unary_backward", |y, g| g * kind.derivative_from_output(y))?;
                    accumulate(&mut adj, *x, grad);
                }
                Op::Binary(kind, a, b, broadcast_rhs) => {
                    let (ga, gb) = match kind {
                        Binary::Add => (up.clone(), up),
                        Binary::Sub => (up.clone(), up.scale(-T::one())),
                        Binary::Hadamard => {
                            let (va, vb) = (self.value(*a), self.value(*b));
                            if *broadcast_rhs {
                                (broadcast(Binary::Hadamard, &up, vb), up.hadamard(va)?)
                            } else {
                                (up.hadamard(vb)?, up.hadamard(va)?)
                            }
                        }
                    };
                    let gb = if *broadcast_rhs { column_sums(&gb) } else { gb };
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::OneMinus(x) => accumulate(&mut adj, *x, up.scale(-T::one())),
                Op::Scale(x, k) => accumulate(&mut adj, *x, up.scale(*k)),
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut adj, *x, Tensor::filled(r, c, up.data()[0]));
                }
                Op::GatherRows { table, ids } => {
                    let (r, c) = self.value(*table).shape();
                    let mut grad = Tensor::zeros(r, c);
                    for (row, &id) in ids.iter().enumerate() {
                        let src = up.row(row);
                        let dst = &mut grad.data_mut()[id * c..(id + 1) * c];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                    accumulate(&mut adj, *table, grad);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).rows();
                        accumulate(&mut adj, p, up.slice_rows(start, start + n));
                        start += n;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                    let scale = up.data()[0] / T::of(targets.len() as f64);
                    let mut grad = probs.clone();
                    let cols = grad.cols();
                    for (r, &t) in targets.iter().enumerate() {
                        let g = &mut grad.data_mut()[r * cols + t];
                        *g = *g - T::one();
                    }
                    accumulate(&mut adj, *logits, grad.scale(scale));
                }
            }
        }
        Ok(Gradients {
            adjoints: adj,
            parameters: self.parameters.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn combine<T: Real>(kind: Binary, a: T, b: T) -> T {
    match kind {
        Binary::Add => a + b,
        Binary::Sub => a - b,
        Binary::Hadamard => a * b,
    }
}

fn broadcast<T: Real>(kind: Binary, a: &Tensor<T>, row: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = a.shape();
    let r = row.data();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        out.extend(a.row(i).iter().zip(r).map(|(&x, &y)| combine(kind, x, y)));
    }
    Tensor::from_vec_unchecked(rows, cols, out)
}

fn column_sums<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(t.row(r)) {
            *o = *o + v;
        }
    }
    out
}

fn accumulate<T: Real>(adj: &mut [Option<Tensor<T>>], v: Var, grad: Tensor<T>) {
    match &mut adj[v.0] {
        Some(existing) if existing.shape() == grad.shape() => existing.add_assign(&grad),
        slot => *slot = Some(grad),
    }
}

/// Adjoints of the leaves of a graph after [`Graph::backward`].
pub struct Gradients<T: Real = f64> {
    adjoints: Vec<Option<Tensor<T>>>,
    parameters: Vec<Var>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a leaf; zeros if the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.adjoints[v.0] {
            Some(t) if t.shape() == self.shapes[v.0] => t.clone(),
            _ => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Gradients for every registered parameter, in registration order.
    pub fn parameters(&self) -> Vec<Tensor<T>> {
        self.parameters.iter().map(|&p| self.wrt(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(100.0f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64).is_finite());
    }

    #[test]
    fn unary_values() {
        let mut g: Graph = Graph::new();
        let x = g.constant(Tensor::zeros(2, 3)).unwrap();
        let s = g.sigmoid(x).unwrap();
        let t = g.tanh(x).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.5));
        assert!(g.value(t).data().iter().all(|&v| v == 0.0));
        let y = g.constant(Tensor::row_vector(&[1.5, -2.0]).unwrap()).unwrap();
        let id = g.unary(Unary::Identity, y).unwrap();
        assert_eq!(g.value(id), g.value(y));
    }

    #[test]
    fn hadamard_and_zero_add() {
        let mut g: Graph = Graph::new();
        let a = g.constant(Tensor::row_vector(&[1.0, 2.0]).unwrap()).unwrap();
        let b = g.constant(Tensor::row_vector(&[3.0, 4.0]).unwrap()).unwrap();
        let z = g.constant(Tensor::zeros(1, 2)).unwrap();
        let h = g.hadamard(a, b).unwrap();
        let s = g.add(a, z).unwrap();
        assert_eq!(g.value(h).data(), &[3.0, 8.0]);
        assert_eq!(g.value(s), g.value(a));
    }

    #[test]
    fn bias_broadcast_matches_loop() {
        let m = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let bias = Tensor::row_vector(&[0.5, -1.0, 2.0]).unwrap();
        let mut want = m.clone();
        for r in 0..2 {
            for c in 0..3 {
                want.set(r, c, m.get(r, c) + bias.get(0, c));
            }
        }
        let mut g: Graph = Graph::new();
        let (mv, bv) = (g.constant(m).unwrap(), g.constant(bias).unwrap());
        let out = g.add(mv, bv).unwrap();
        assert_eq!(g.value(out), &want);
        let flipped = g.add(bv, mv).unwrap();
        assert_eq!(g.value(flipped), &want);
        let bad = g.constant(Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(g.add(mv, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut g: Graph = Graph::new();
        let uniform = g.constant(Tensor::zeros(1, 4)).unwrap();
        let loss = g.softmax_cross_entropy(uniform, &[2]).unwrap();
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);

        let sharp = g.constant(Tensor::row_vector(&[1000.0, 0.0, 0.0]).unwrap()).unwrap();
        let loss = g.softmax_cross_entropy(sharp, &[0]).unwrap();
        assert!(g.value(loss).data()[0].abs() < 1e-12);

        assert!(matches!(
            g.softmax_cross_entropy(uniform, &[4]),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let logits = Tensor::from_rows(&[&[0.3, -1.1, 2.0, 0.7, -0.2], &[-0.5, 0.9, 0.1, -1.7, 1.3]]).unwrap();
        let targets = [2usize, 4];
        let mut direct = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let z: f64 = logits.row(r).iter().map(|v| v.exp()).sum();
            direct += -(logits.get(r, t).exp() / z).ln();
        }
        direct /= 2.0;
        let mut g: Graph = Graph::new();
        let l = g.constant(logits).unwrap();
        let loss = g.softmax_cross_entropy(l, &targets).unwrap();
        assert!((g.value(loss).data()[0] - direct).abs() < 1e-10);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g: Graph = Graph::new();
        let x = g.parameter(Tensor::zeros(1, 3)).unwrap();
        let s = g.sigmoid(x).unwrap();
        let loss = g.sum(s).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(x).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn square_gradient() {
        let mut g: Graph = Graph::new();
        let x = g.parameter(Tensor::row_vector(&[1.0, 2.0]).unwrap()).unwrap();
        let sq = g.hadamard(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
        assert_eq!(grads.parameters().len(), 1);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut g: Graph = Graph::new();
        let x = g.parameter(Tensor::zeros(1, 2)).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_parameter_has_zero_gradient() {
        let mut g: Graph = Graph::new();
        let x = g.parameter(Tensor::row_vector(&[1.0]).unwrap()).unwrap();
        let y = g.parameter(Tensor::row_vector(&[3.0, 4.0]).unwrap()).unwrap();
        let loss = g.sum(x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(y), Tensor::zeros(1, 2));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = SeededRng::new(3);
        let mut g: Graph = Graph::new();
        let x = g.constant(Tensor::ones(1, 8)).unwrap();
        assert_eq!(g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.7, Mode::Eval, &mut rng).unwrap(), x);
        assert!(matches!(
            g.dropout(x, 1.0, Mode::Train, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_statistics() {
        let n = 1_000_000;
        let mut rng = SeededRng::new(11);
        let mut g: Graph = Graph::new();
        let x = g.constant(Tensor::ones(1, n)).unwrap();
        let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let out = g.value(y);
        let survivors = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean = out.sum() / n as f64;
        assert!((survivors - 0.5).abs() <= 0.01, "{survivors}");
        assert!((mean - 1.0).abs() <= 0.02, "{mean}");
    }
}
