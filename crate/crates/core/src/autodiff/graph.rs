//! Define-by-run tape for reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every objective evaluation. Nodes are
//! appended in creation order, which is also a valid topological order, so
//! the backward sweep is a single reverse pass over the node list.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Result, UdnError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `[n, m] + [1, m]`, bias broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Tensor times a `[1, 1]` node.
    MulScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    Element(Var, usize),
    Sum(Var),
    SumSquares(Var),
    Log(Var),
    Exp(Var),
    LogSumExp(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_non_finite: Option<usize>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Shorthand for the value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// The earliest node whose value contains NaN or an infinity, if any.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.first_non_finite.map(Var)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf reading the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(UdnError::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn expect_scalar(&self, op: &'static str, v: Var) -> Result<()> {
        let s = self.shape(v);
        if s != [1, 1] {
            return Err(UdnError::dim(op, format!("expected a scalar, got {s:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(UdnError::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let out = matmul(self.value(a), self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != [1, sa[1]] {
            return Err(UdnError::dim("add_row", format!("{sa:?} + {sb:?}")));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(sa[1]) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for (o, x) in out.data_mut().iter_mut().zip(bv) {
            *o -= x;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for (o, x) in out.data_mut().iter_mut().zip(bv) {
            *o *= x;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.expect_scalar("mul_scalar", s)?;
        let k = self.scalar(s);
        let out = self.value(a).map(|x| x * k);
        Ok(self.push(out, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Row-wise log-softmax, stabilized by the row maximum.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let cols = x.cols();
        for row in out.data_mut().chunks_mut(cols) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Picks `a[i, columns[i]]` for every row, giving an `[n, 1]` column.
    pub fn pick(&mut self, a: Var, columns: &[usize]) -> Result<Var> {
        let [n, c] = self.shape(a);
        if columns.len() != n {
            return Err(UdnError::dim("pick", format!("{} indices for {n} rows", columns.len())));
        }
        if let Some(&bad) = columns.iter().find(|&&j| j >= c) {
            return Err(UdnError::Index { index: bad, bound: c });
        }
        let x = self.value(a);
        let out: Vec<f64> = columns.iter().enumerate().map(|(i, &j)| x.get(i, j)).collect();
        Ok(self.push(Tensor::column(out), Op::Pick(a, columns.to_vec())))
    }

    /// Element at flat row-major position `index`, as a scalar node.
    pub fn element(&mut self, a: Var, index: usize) -> Result<Var> {
        let len = self.value(a).len();
        if index >= len {
            return Err(UdnError::Index { index, bound: len });
        }
        let v = self.value(a).data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Element(a, index)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        self.push(Tensor::scalar(s), Op::SumSquares(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// `log Σ exp(a)` over all elements.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let s = log_sum_exp(self.value(a).data());
        self.push(Tensor::scalar(s), Op::LogSumExp(a))
    }

    /// Sum of a list of same-shaped nodes. An empty list is the scalar 0.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = terms.split_first() else {
            return Ok(self.constant_scalar(0.0));
        };
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from the scalar `loss`, accumulating `∂loss/∂param`
    /// into the gradient slots of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(UdnError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, self.value(*b));
                    let gb = matmul_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::row(gb));
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |x, y| x * y);
                    let gb = zip_map(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulScalar(a, s) => {
                    let k = self.scalar(*s);
                    let gs: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    accumulate(&mut grads, *s, Tensor::scalar(gs));
                    accumulate(&mut grads, *a, g.map(|x| x * k));
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c));
                }
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let ga = zip_map(&g, &node.value, |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let cols = g.cols();
                    let mut ga = g.clone();
                    for (grow, yrow) in ga.data_mut().chunks_mut(cols).zip(node.value.data().chunks(cols)) {
                        let total: f64 = grow.iter().sum();
                        for (gv, y) in grow.iter_mut().zip(yrow) {
                            *gv -= y.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Pick(a, columns) => {
                    let [n, c] = self.shape(*a);
                    let mut ga = Tensor::zeros(n, c);
                    for (i, &j) in columns.iter().enumerate() {
                        ga.set(i, j, g.data()[i]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Element(a, index) => {
                    let [n, c] = self.shape(*a);
                    let mut ga = Tensor::zeros(n, c);
                    ga.data_mut()[*index] = g.item();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let [n, c] = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::filled(n, c, g.item()));
                }
                Op::SumSquares(a) => {
                    let k = 2.0 * g.item();
                    accumulate(&mut grads, *a, self.value(*a).map(|x| k * x));
                }
                Op::Log(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| x / y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip_map(&g, &node.value, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSumExp(a) => {
                    let lse = node.value.item();
                    let k = g.item();
                    accumulate(&mut grads, *a, self.value(*a).map(|x| k * (x - lse).exp()));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes agree")
}

/// Numerically stable `log Σ exp(xs)`; `-∞` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
