use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type UnaryFn = Box<dyn Fn(f64) -> f64>;

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// Second operand may be a column vector broadcast across columns.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    /// `scale * x + shift`
    Affine(Var, f64),
    Sum(Var),
    Mean(Var),
    /// Elementwise quantile loss of `pred` against `target`.
    Pinball { pred: Var, target: Var, q: f64 },
    Custom(Var, UnaryFn),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Dynamic record of primitive operations.
///
/// Nodes are appended in evaluation order; [`Tape::backward`] sweeps them in
/// reverse exactly once. Every primitive checks its output for NaN/Inf and
/// fails the step instead of propagating non-finite values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Gradients of a scalar loss with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::leaf`]; `None` for constants
    /// and intermediate nodes.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.by_node.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.by_node.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// Same shape, or `b` is a column vector matching `a`'s rows.
fn broadcastable(op: &'static str, a: &Tensor, b: &Tensor) -> Result<bool> {
    if a.shape() == b.shape() {
        return Ok(false);
    }
    if b.cols() == 1 && b.rows() == a.rows() {
        return Ok(true);
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    })
}

fn broadcast_apply(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    let cols = a.cols();
    for (i, chunk) in out.data_mut().chunks_mut(cols).enumerate() {
        let bv = b.data()[i];
        for v in chunk {
            *v = f(*v, bv);
        }
    }
    out
}

fn row_sums(t: &Tensor) -> Tensor {
    let sums = t
        .data()
        .chunks(t.cols())
        .map(|c| c.iter().sum())
        .collect::<Vec<f64>>();
    Tensor::column(&sums)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable input; receives a gradient in [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    pub fn is_leaf(&self, var: Var) -> bool {
        matches!(self.nodes[var.0].op, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let v = if broadcastable("add", ta, tb)? {
            broadcast_apply(ta, tb, |x, y| x + y)
        } else {
            ta.zip_map(tb, |x, y| x + y)
        };
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let v = if broadcastable("sub", ta, tb)? {
            broadcast_apply(ta, tb, |x, y| x - y)
        } else {
            ta.zip_map(tb, |x, y| x - y)
        };
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let v = ta.zip_map(tb, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("div", ta, tb)?;
        if tb.data().iter().any(|&y| y == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "zero divisor".into(),
            });
        }
        let v = ta.zip_map(tb, |x, y| x / y);
        self.push("div", v, Op::Div(a, b))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Domain {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(*first).shape(),
                    rhs: t.shape(),
                });
            }
            rows += t.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a).slice_rows(start, end)?;
        self.push("slice_rows", v, Op::SliceRows(a, start))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = t.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let v = t.map(f64::ln);
        self.push("log", v, Op::Log(a))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push("affine", v, Op::Affine(a, scale))
    }

    pub fn scalar_mul(&mut self, a: Var, k: f64) -> Result<Var> {
        self.affine(a, k, 0.0)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 1.0)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Domain {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", v, Op::Mean(a))
    }

    /// Elementwise pinball loss `rho(target, pred; q)`. At `target == pred`
    /// the subgradient follows the `target >= pred` branch.
    pub fn pinball(&mut self, pred: Var, target: Var, q: f64) -> Result<Var> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain {
                op: "pinball",
                detail: format!("quantile order {q} outside (0, 1)"),
            });
        }
        let (tp, tt) = (self.value(pred), self.value(target));
        same_shape("pinball", tp, tt)?;
        let v = tt.zip_map(tp, |z, zh| crate::training::pinball_value(z, zh, q));
        self.push("pinball", v, Op::Pinball { pred, target, q })
    }

    /// Elementwise op with a caller-supplied derivative.
    pub fn custom_unary(
        &mut self,
        a: Var,
        forward: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Var> {
        let v = self.value(a).map(forward);
        self.push("custom", v, Op::Custom(a, Box::new(derivative)))
    }

    /// Reverse sweep from a 1x1 loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs_grad(*a) {
                        let acc = slot(&mut grads, *a, ta.shape());
                        g.matmul_bt_into(tb, acc);
                    }
                    if self.needs_grad(*b) {
                        let acc = slot(&mut grads, *b, tb.shape());
                        ta.matmul_at_into(&g, acc);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Add(..)) { 1.0 } else { -1.0 };
                    accumulate(&mut grads, *a, &g, 1.0);
                    if self.value(*b).shape() == g.shape() {
                        accumulate(&mut grads, *b, &g, sign);
                    } else {
                        accumulate(&mut grads, *b, &row_sums(&g), sign);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, &g.zip_map(tb, |d, y| d * y), 1.0);
                    accumulate(&mut grads, *b, &g.zip_map(ta, |d, x| d * x), 1.0);
                }
                Op::Div(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, &g.zip_map(tb, |d, y| d / y), 1.0);
                    let gb = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .zip(tb.data())
                            .map(|((d, x), y)| -d * x / (y * y))
                            .collect(),
                    )?;
                    accumulate(&mut grads, *b, &gb, 1.0);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        if self.needs_grad(*p) {
                            let part = g.slice_rows(start, start + rows)?;
                            accumulate(&mut grads, *p, &part, 1.0);
                        }
                        start += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    if self.needs_grad(*a) {
                        let ta = self.value(*a);
                        let cols = ta.cols();
                        let acc = slot(&mut grads, *a, ta.shape());
                        let off = start * cols;
                        for (o, d) in acc.data_mut()[off..off + g.len()].iter_mut().zip(g.data()) {
                            *o += d;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, |d, s| d * s * (1.0 - s));
                    accumulate(&mut grads, *a, &d, 1.0);
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |d, t| d * (1.0 - t * t));
                    accumulate(&mut grads, *a, &d, 1.0);
                }
                Op::Exp(a) => {
                    let d = g.zip_map(&node.value, |d, e| d * e);
                    accumulate(&mut grads, *a, &d, 1.0);
                }
                Op::Log(a) => {
                    let d = g.zip_map(self.value(*a), |d, x| d / x);
                    accumulate(&mut grads, *a, &d, 1.0);
                }
                Op::Affine(a, scale) => {
                    accumulate(&mut grads, *a, &g, *scale);
                }
                Op::Sum(a) | Op::Mean(a) => {
                    if self.needs_grad(*a) {
                        let ta = self.value(*a);
                        let k = match node.op {
                            Op::Mean(_) => g.item() / ta.len() as f64,
                            _ => g.item(),
                        };
                        accumulate(&mut grads, *a, &Tensor::filled(ta.rows(), ta.cols(), k), 1.0);
                    }
                }
                Op::Pinball { pred, target, q } => {
                    let (tp, tt) = (self.value(*pred), self.value(*target));
                    let slope = tt.zip_map(tp, |z, zh| if z >= zh { *q } else { *q - 1.0 });
                    let d_target = g.zip_map(&slope, |d, s| d * s);
                    accumulate(&mut grads, *pred, &d_target, -1.0);
                    accumulate(&mut grads, *target, &d_target, 1.0);
                }
                Op::Custom(a, deriv) => {
                    let d = g.zip_map(self.value(*a), |d, x| d * deriv(x));
                    accumulate(&mut grads, *a, &d, 1.0);
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if grads[idx].is_none() {
                    let (r, c) = node.value.shape();
                    grads[idx] = Some(Tensor::zeros(r, c));
                }
            } else {
                grads[idx] = None;
            }
        }
        Ok(Gradients { by_node: grads })
    }

    fn needs_grad(&self, var: Var) -> bool {
        !matches!(self.nodes[var.0].op, Op::Constant)
    }
}

fn slot(grads: &mut [Option<Tensor>], var: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[var.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: &Tensor, k: f64) {
    match &mut grads[var.0] {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += k * d;
            }
        }
        empty @ None => {
            let mut t = g.clone();
            if k != 1.0 {
                t.scale_in_place(k);
            }
            *empty = Some(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0)).unwrap();
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item(), 0.5);
        let g = t.backward(y).unwrap();
        let analytic = g.wrt(x).unwrap().item();
        assert!((analytic - 0.25).abs() < 1e-15);
        assert!((analytic - fd(sigmoid, 0.0)).abs() < 1e-8);
    }

    #[test]
    fn hadamard_product() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::column(&[1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::column(&[3.0, 4.0])).unwrap();
        let c = t.mul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 8.0]);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::filled(2, 2, 1.5)).unwrap();
        let c = t.constant(Tensor::scalar(4.0)).unwrap();
        let y = t.exp(c).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.wrt(w).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.wrt(c).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::column(&[1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss((2, 1)))));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3)).unwrap();
        let b = t.constant(Tensor::zeros(2, 3)).unwrap();
        match t.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::column(&[1.0, 0.0])).unwrap();
        assert!(matches!(t.log(a), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn overflow_aborts() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(t.exp(a), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn bias_broadcast_gradient_sums_columns() {
        let mut t = Tape::new();
        let m = t.constant(Tensor::zeros(2, 3)).unwrap();
        let b = t.leaf(Tensor::column(&[1.0, 2.0])).unwrap();
        let y = t.add(m, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let build = || {
            let mut t = Tape::new();
            let w = t
                .leaf(Tensor::from_vec(2, 2, vec![0.3, -1.2, 0.7, 0.05]).unwrap())
                .unwrap();
            let x = t.constant(Tensor::column(&[0.4, -0.9])).unwrap();
            let h = t.matmul(w, x).unwrap();
            let a = t.tanh(h).unwrap();
            let b = t.mul(a, a).unwrap();
            let l = t.mean(b).unwrap();
            let g = t.backward(l).unwrap();
            g.wrt(w).unwrap().clone()
        };
        let (a, b) = (build(), build());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
