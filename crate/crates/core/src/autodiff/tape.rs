use std::sync::Arc;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    /// elu(x) + 1: x + 1 for x ≥ 0, eˣ otherwise.
    EluPlusOne,
    Sigmoid,
    Relu,
}

impl Unary {
    pub fn eval<T: Scalar>(&self, x: T) -> T {
        match self {
            Unary::EluPlusOne => {
                if x >= T::zero() {
                    x + T::one()
                } else {
                    x.exp()
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through input and output.
    fn derivative<T: Scalar>(&self, x: T, y: T) -> T {
        match self {
            Unary::EluPlusOne => {
                if x >= T::zero() {
                    T::one()
                } else {
                    y
                }
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Sparse row combination: output row r = Σ w · input[idx].
#[derive(Debug, Clone, Default)]
pub struct RowMixing {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl RowMixing {
    pub fn gather(indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| vec![(i, 1.0)]).collect(),
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddBias { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Unary { x: Var, kind: Unary },
    L2NormRows { x: Var, norms: Vec<T> },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    RowMix { x: Var, mix: Arc<RowMixing> },
    GroupMax { x: Var, argmax: Vec<usize> },
    RowDot(Var, Var),
    Rope { x: Var, cos_sin: Vec<(T, T)> },
    DivRows { x: Var, d: Var },
    MulRows { x: Var, s: Var },
    SumRows(Var),
    SumAll(Var),
    /// Scalar-valued op whose local gradient was computed in the forward pass.
    Fused { x: Var, local: Tensor<T> },
    WeightedSum(Vec<(Var, T)>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Unary { .. } => "unary",
            Op::L2NormRows { .. } => "l2_normalize",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::RowMix { .. } => "row_mix",
            Op::GroupMax { .. } => "group_max",
            Op::RowDot(..) => "row_dot",
            Op::Rope { .. } => "rope",
            Op::DivRows { .. } => "div_rows",
            Op::MulRows { .. } => "mul_rows",
            Op::SumRows(_) => "sum_rows",
            Op::SumAll(_) => "sum_all",
            Op::Fused { .. } => "fused_loss",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Denominator guard of row normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Reverse-mode tape over 2-D tensors.
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward {}", op.name())));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = Tensor::matmul(self.value(a), ta, self.value(b), tb)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, ng)
    }

    /// x·W + b with b broadcast over rows.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, false, weight, false)?;
        self.add_bias(xw, bias)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if bs != (1, xs.1) {
            return Err(mismatch("add_bias", xs, bs));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..xs.0 {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *v = *v + *bv;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddBias { x, bias }, ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa.0, sa.1, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// scale·x + shift elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, c) = (T::from_f64(scale), T::from_f64(shift));
        let value = self.value(x).map(|v| s * v + c);
        let ng = self.needs(x);
        self.push(value, Op::Affine { x, scale: s }, ng)
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let value = self.value(x).map(|v| kind.eval(v));
        let ng = self.needs(x);
        self.push(value, Op::Unary { x, kind }, ng)
    }

    pub fn elu_plus_one(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::EluPlusOne)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    /// Each row divided by (its L2 norm + 1e-12).
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let mut value = src.clone();
        let eps = T::from_f64(NORM_EPS);
        let mut norms = Vec::with_capacity(src.rows());
        for r in 0..src.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            for v in row.iter_mut() {
                *v = *v / (norm + eps);
            }
            norms.push(norm);
        }
        let ng = self.needs(x);
        self.push(value, Op::L2NormRows { x, norms }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(mismatch("concat", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start + len > cols {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} of {cols} columns",
                start + len
            )));
        }
        let mut value = Tensor::zeros(rows, len);
        for r in 0..rows {
            value
                .row_mut(r)
                .copy_from_slice(&self.value(x).row(r)[start..start + len]);
        }
        let ng = self.needs(x);
        self.push(value, Op::Slice { x, start }, ng)
    }

    pub fn row_mix(&mut self, x: Var, mix: Arc<RowMixing>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        let mut value = Tensor::zeros(mix.rows.len(), cols);
        for (r, terms) in mix.rows.iter().enumerate() {
            let out = value.row_mut(r);
            for &(i, w) in terms {
                if i >= rows {
                    return Err(Error::ShapeMismatch(format!("row {i} of {rows}")));
                }
                let w = T::from_f64(w);
                for (o, &v) in out.iter_mut().zip(self.value(x).row(i)) {
                    *o = *o + w * v;
                }
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::RowMix { x, mix }, ng)
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.row_mix(x, Arc::new(RowMixing::gather(indices)))
    }

    /// Columnwise max over each group of rows; ties resolve to the earliest
    /// listed row.
    pub fn group_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        let mut value = Tensor::zeros(groups.len(), cols);
        let mut argmax = Vec::with_capacity(groups.len() * cols);
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyPatch);
            }
            for c in 0..cols {
                let mut best = members[0];
                for &m in members {
                    if m >= rows {
                        return Err(Error::ShapeMismatch(format!("row {m} of {rows}")));
                    }
                    if self.value(x).get(m, c) > self.value(x).get(best, c) {
                        best = m;
                    }
                }
                value.set(g, c, self.value(x).get(best, c));
                argmax.push(best);
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::GroupMax { x, argmax }, ng)
    }

    /// Per-row inner product, N×1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("row_dot", sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..sa.0)
            .map(|r| va.row(r).iter().zip(vb.row(r)).map(|(&x, &y)| x * y).sum())
            .collect();
        let value = Tensor::new(sa.0, 1, data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::RowDot(a, b), ng)
    }

    /// Rotate column pairs (2k, 2k+1) of row r by `angles[r][k]`.
    pub fn rope(&mut self, x: Var, angles: &Tensor<f64>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if cols % 2 != 0 || angles.shape() != (rows, cols / 2) {
            return Err(mismatch("rope", (rows, cols), angles.shape()));
        }
        let cos_sin: Vec<(T, T)> = angles
            .data()
            .iter()
            .map(|&a| (T::from_f64(a.cos()), T::from_f64(a.sin())))
            .collect();
        let mut value = self.value(x).clone();
        for r in 0..rows {
            let row = value.row_mut(r);
            for k in 0..cols / 2 {
                let (c, s) = cos_sin[r * cols / 2 + k];
                let (x0, x1) = (row[2 * k], row[2 * k + 1]);
                row[2 * k] = c * x0 - s * x1;
                row[2 * k + 1] = s * x0 + c * x1;
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::Rope { x, cos_sin }, ng)
    }

    /// x (N×C) with row r divided by d[r] (N×1).
    pub fn div_rows(&mut self, x: Var, d: Var) -> Result<Var> {
        let (sx, sd) = (self.shape(x), self.shape(d));
        if sd != (sx.0, 1) {
            return Err(mismatch("div_rows", sx, sd));
        }
        let mut value = self.value(x).clone();
        for r in 0..sx.0 {
            let dv = self.value(d).get(r, 0);
            for v in value.row_mut(r) {
                *v = *v / dv;
            }
        }
        let ng = self.needs(x) || self.needs(d);
        self.push(value, Op::DivRows { x, d }, ng)
    }

    /// x (N×C) with row r scaled by s[r] (N×1).
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss != (sx.0, 1) {
            return Err(mismatch("mul_rows", sx, ss));
        }
        let mut value = self.value(x).clone();
        for r in 0..sx.0 {
            let sv = self.value(s).get(r, 0);
            for v in value.row_mut(r) {
                *v = *v * sv;
            }
        }
        let ng = self.needs(x) || self.needs(s);
        self.push(value, Op::MulRows { x, s }, ng)
    }

    /// Column sums, 1×C.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        let mut value = Tensor::zeros(1, cols);
        for r in 0..rows {
            for (o, &v) in value.row_mut(0).iter_mut().zip(self.value(x).row(r)) {
                *o = *o + v;
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::SumRows(x), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Scalar node with a precomputed gradient with respect to `x`.
    pub fn fused(&mut self, x: Var, value: f64, local: Tensor<T>) -> Result<Var> {
        if local.shape() != self.shape(x) {
            return Err(mismatch("fused", self.shape(x), local.shape()));
        }
        let ng = self.needs(x);
        self.push(Tensor::scalar(T::from_f64(value)), Op::Fused { x, local }, ng)
    }

    /// Σ wᵢ·xᵢ over 1×1 nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        // compensated so the loss total adds no roundoff beyond its terms
        let (mut total, mut carry) = (T::zero(), T::zero());
        let mut stored = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            if self.shape(v) != (1, 1) {
                return Err(mismatch("weighted_sum", self.shape(v), (1, 1)));
            }
            let w = T::from_f64(w);
            let x = w * self.value(v).item();
            let t = total + x;
            carry = carry
                + if total.abs() >= x.abs() {
                    (total - t) + x
                } else {
                    (x - t) + total
                };
            total = t;
            stored.push((v, w));
        }
        let total = total + carry;
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(Tensor::scalar(total), Op::WeightedSum(stored), ng)
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], needs: bool, v: Var, g: Tensor<T>) {
        if !needs {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Reverse pass from a 1×1 node. Gradients of every node that depends
    /// on a parameter become available through [`Tape::grad`].
    pub fn backward(&mut self, target: Var) -> Result<()> {
        let (rows, cols) = self.shape(target);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[target.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=target.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} node {i}",
                        self.nodes[i].op.name()
                    )));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    if *ta {
                        ga.gemm_acc(T::one(), bv, *tb, g, true, T::zero());
                    } else {
                        ga.gemm_acc(T::one(), g, false, bv, !*tb, T::zero());
                    }
                    Self::accumulate(grads, true, *a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    if *tb {
                        gb.gemm_acc(T::one(), g, true, av, *ta, T::zero());
                    } else {
                        gb.gemm_acc(T::one(), av, !*ta, g, false, T::zero());
                    }
                    Self::accumulate(grads, true, *b, gb);
                }
            }
            Op::AddBias { x, bias } => {
                Self::accumulate(grads, needs(*x), *x, g.clone());
                if needs(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                    Self::accumulate(grads, true, *bias, gb);
                }
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, needs(*a), *a, g.clone());
                Self::accumulate(grads, needs(*b), *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, needs(*a), *a, g.clone());
                Self::accumulate(grads, needs(*b), *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let ga = elementwise(g, val(*b), |x, y| x * y);
                    Self::accumulate(grads, true, *a, ga);
                }
                if needs(*b) {
                    let gb = elementwise(g, val(*a), |x, y| x * y);
                    Self::accumulate(grads, true, *b, gb);
                }
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                Self::accumulate(grads, needs(*x), *x, g.map(|v| v * s));
            }
            Op::Unary { x, kind } => {
                let xv = val(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(node.value.data()))
                    .map(|(&gv, (&xi, &yi))| gv * kind.derivative(xi, yi))
                    .collect();
                let gx = Tensor::new(g.rows(), g.cols(), data)?;
                Self::accumulate(grads, needs(*x), *x, gx);
            }
            Op::L2NormRows { x, norms } => {
                let xv = val(*x);
                let eps = T::from_f64(NORM_EPS);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &norm) in norms.iter().enumerate() {
                    let s = norm + eps;
                    let gr = g.row(r);
                    let xr = xv.row(r);
                    let gdotx: T = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                    let coef = if norm > T::zero() {
                        gdotx / (norm * s * s)
                    } else {
                        T::zero()
                    };
                    for ((o, &gi), &xi) in gx.row_mut(r).iter_mut().zip(gr).zip(xr) {
                        *o = gi / s - xi * coef;
                    }
                }
                Self::accumulate(grads, needs(*x), *x, gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    if needs(p) {
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        Self::accumulate(grads, true, p, gp);
                    }
                    off += cols;
                }
            }
            Op::Slice { x, start } => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                Self::accumulate(grads, needs(*x), *x, gx);
            }
            Op::RowMix { x, mix } => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Tensor::zeros(rows, cols);
                for (r, terms) in mix.rows.iter().enumerate() {
                    for &(src, w) in terms {
                        let w = T::from_f64(w);
                        for (o, &gv) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o = *o + w * gv;
                        }
                    }
                }
                Self::accumulate(grads, needs(*x), *x, gx);
            }
            Op::GroupMax { x, argmax } => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Tensor::zeros(rows, cols);
                for (k, &src) in argmax.iter().enumerate() {
                    let (grp, c) = (k / cols, k % cols);
                    let cur = gx.get(src, c);
                    gx.set(src, c, cur + g.get(grp, c));
                }
                Self::accumulate(grads, needs(*x), *x, gx);
            }
            Op::RowDot(a, b) => {
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if needs(target) {
                        let mut gt = val(other).clone();
                        for r in 0..gt.rows() {
                            let gr = g.get(r, 0);
                            for v in gt.row_mut(r) {
                                *v = *v * gr;
                            }
                        }
                        Self::accumulate(grads, true, target, gt);
                    }
                }
            }
            Op::Rope { x, cos_sin } => {
                let (rows, cols) = g.shape();
                let mut gx = g.clone();
                for r in 0..rows {
                    let row = gx.row_mut(r);
                    for k in 0..cols / 2 {
                        let (c, s) = cos_sin[r * cols / 2 + k];
                        let (g0, g1) = (row[2 * k], row[2 * k + 1]);
                        row[2 * k] = c * g0 + s * g1;
                        row[2 * k + 1] = c * g1 - s * g0;
                    }
                }
                Self::accumulate(grads, needs(*x), *x, gx);
            }
            Op::DivRows { x, d } => {
                let (xv, dv) = (val(*x), val(*d));
                if needs(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let den = dv.get(r, 0);
                        for v in gx.row_mut(r) {
                            *v = *v / den;
                        }
                    }
                    Self::accumulate(grads, true, *x, gx);
                }
                if needs(*d) {
                    let data = (0..xv.rows())
                        .map(|r| {
                            let den = dv.get(r, 0);
                            let s: T = g.row(r).iter().zip(xv.row(r)).map(|(&a, &b)| a * b).sum();
                            -s / (den * den)
                        })
                        .collect();
                    Self::accumulate(grads, true, *d, Tensor::new(xv.rows(), 1, data)?);
                }
            }
            Op::MulRows { x, s } => {
                let (xv, sv) = (val(*x), val(*s));
                if needs(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let f = sv.get(r, 0);
                        for v in gx.row_mut(r) {
                            *v = *v * f;
                        }
                    }
                    Self::accumulate(grads, true, *x, gx);
                }
                if needs(*s) {
                    let data = (0..xv.rows())
                        .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(&a, &b)| a * b).sum())
                        .collect();
                    Self::accumulate(grads, true, *s, Tensor::new(xv.rows(), 1, data)?);
                }
            }
            Op::SumRows(x) => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    gx.row_mut(r).copy_from_slice(g.row(0));
                }
                Self::accumulate(grads, needs(*x), *x, gx);
            }
            Op::SumAll(x) => {
                let (rows, cols) = val(*x).shape();
                Self::accumulate(grads, needs(*x), *x, Tensor::filled(rows, cols, g.item()));
            }
            Op::Fused { x, local } => {
                let s = g.item();
                Self::accumulate(grads, needs(*x), *x, local.map(|v| v * s));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    Self::accumulate(grads, needs(v), v, Tensor::scalar(w * g.item()));
                }
            }
        }
        Ok(())
    }
}

fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}
