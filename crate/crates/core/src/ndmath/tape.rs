//! Reverse-mode differentiation over the small primitive set the forecaster
//! needs. A [`Tape`] records every primitive in execution order; [`Tape::backward`]
//! replays it in reverse, accumulating gradients additively.

use std::borrow::Cow;

use rand::Rng;

use super::array::{check_dropout_rate, dropout_mask, gelu, gelu_derivative, Array2, Mode};
use crate::error::Result;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Second operand may be a `1 x n` row broadcast over the first.
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Gelu(Var),
    Dropout(Var, Vec<f64>),
    Gather { table: Var, rows: Vec<usize> },
    /// `out[r, :] = in[r, :] * scale[r] + shift[r]`
    RowAffine { input: Var, scale: Vec<f64> },
    /// Scalar objective whose gradient with respect to `input` was computed
    /// alongside its value.
    Objective { input: Var, grad: Array2 },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Array2>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward replay.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2> {
        self.grads[v.0].take()
    }

    /// Indices of the non-leaf operations visited, in visiting order.
    pub fn visited(&self) -> &[usize] {
        &self.visited
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf, borrowed for the lifetime of the tape.
    pub fn param(&mut self, value: &'a Array2) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Array2) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = super::elementwise(self.value(a), self.value(b), super::ElementwiseKind::Add);
        let rg = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = super::elementwise(self.value(a), self.value(b), super::ElementwiseKind::Mul);
        let rg = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.needs(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.needs(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `a` unchanged
    /// without recording anything.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        check_dropout_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let x = self.value(a);
        let mask = dropout_mask(x.len(), rate, rng);
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Array2::new(x.rows(), x.cols(), data);
        let rg = self.needs(a);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    /// Row lookup: output row `i` is `table[rows[i]]`.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in &rows {
            assert!(r < t.rows(), "gather: row {r} out of range for {} rows", t.rows());
            data.extend_from_slice(t.row(r));
        }
        let out = Array2::new(rows.len(), t.cols(), data);
        let rg = self.needs(table);
        self.push(out, Op::Gather { table, rows }, rg)
    }

    /// Per-row affine map with constant coefficients.
    pub fn row_affine(&mut self, input: Var, scale: Vec<f64>, shift: &[f64]) -> Var {
        let x = self.value(input);
        assert!(
            scale.len() == x.rows() && shift.len() == x.rows(),
            "row_affine: coefficient count does not match {} rows",
            x.rows()
        );
        let mut out = x.clone();
        for r in 0..out.rows() {
            let (s, b) = (scale[r], shift[r]);
            out.row_mut(r).iter_mut().for_each(|v| *v = *v * s + b);
        }
        let rg = self.needs(input);
        self.push(out, Op::RowAffine { input, scale }, rg)
    }

    /// Records a scalar objective `value` whose gradient w.r.t. `input` is `grad`.
    pub fn objective(&mut self, input: Var, value: f64, grad: Array2) -> Var {
        assert_eq!(grad.shape(), self.value(input).shape(), "objective: gradient shape mismatch");
        let rg = self.needs(input);
        self.push(Array2::new(1, 1, vec![value]), Op::Objective { input, grad }, rg)
    }

    /// Replays the tape backward from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward: output must be a scalar");
        let mut grads: Vec<Option<Array2>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[output.0] = Some(Array2::new(1, 1, vec![1.0]));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        let gb = if self.value(*b).shape() == g.shape() { g.clone() } else { g.column_sums() };
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, super::elementwise(&g, vb, super::ElementwiseKind::Mul));
                    }
                    if self.needs(*b) {
                        let prod = super::elementwise(&g, va, super::ElementwiseKind::Mul);
                        let gb = if vb.shape() == prod.shape() { prod } else { prod.column_sums() };
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (d, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    for (d, x) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *d *= gelu_derivative(*x);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Dropout(a, mask) => {
                    let mut ga = g;
                    for (d, m) in ga.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather { table, rows } => {
                    let t = self.value(*table);
                    let slot = &mut grads[table.0];
                    let gt = slot.get_or_insert_with(|| Array2::zeros(t.rows(), t.cols()));
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, s) in gt.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                }
                Op::RowAffine { input, scale } => {
                    let mut ga = g;
                    for (r, s) in scale.iter().enumerate() {
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *input, ga);
                }
                Op::Objective { input, grad } => {
                    accumulate(&mut grads, *input, grad.scale(g.get(0, 0)));
                }
            }
        }
        Gradients { grads, visited }
    }
}

fn accumulate(grads: &mut [Option<Array2>], v: Var, g: Array2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
