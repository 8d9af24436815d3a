//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every node holds a [`Tensor`]. Binary element-wise ops broadcast operands
//! whose row or column count is 1. Nodes that do not depend on a parameter are
//! never visited in the backward sweep, so constant sub-graphs cost nothing
//! beyond their forward evaluation.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// A differentiable operation implemented outside the tape's primitive set.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; the op only supplies its vector-Jacobian product.
pub trait CustomOp {
    fn name(&self) -> &str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output. `None` means the input receives no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

/// Source of one output element of a gather.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GatherSrc {
    /// Flat (row-major) index into the input.
    Input(usize),
    Const(f64),
}

/// A constant index map from an input tensor to an output of shape `rows × cols`.
#[derive(Debug, Clone)]
pub struct GatherMap {
    pub rows: usize,
    pub cols: usize,
    pub src: Vec<GatherSrc>,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Sqrt,
    Relu,
    Abs,
    Square,
    Recip,
    Scale(f64),
    AddConst(f64),
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    SumAll(usize),
    SumCols(usize),
    SumRows(usize),
    Gather(usize, Rc<GatherMap>),
    HStack(Vec<usize>),
    VStack(Vec<usize>),
    Custom(Rc<dyn CustomOp>, Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.borrow().len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}[{}x{}]", self.id, r, c)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// A leaf that receives gradients.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Records a custom op whose forward value has already been computed.
    pub fn custom<'t>(&'t self, op: Rc<dyn CustomOp>, inputs: &[Var<'t>], output: Tensor) -> Var<'t> {
        let requires_grad = inputs.iter().any(|v| self.grad_of(v.id));
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(output, Op::Custom(op, ids), requires_grad)
    }

    /// Concatenates along columns. All parts need the same row count.
    pub fn hstack<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::Shape("hstack of nothing".into()));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        if values.iter().any(|v| v.rows() != rows) {
            return Err(Error::Shape("hstack row counts differ".into()));
        }
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let requires_grad = parts.iter().any(|p| self.grad_of(p.id));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::HStack(parts.iter().map(|p| p.id).collect()), requires_grad))
    }

    /// Concatenates along rows. All parts need the same column count.
    pub fn vstack<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::Shape("vstack of nothing".into()));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].cols();
        if values.iter().any(|v| v.cols() != cols) {
            return Err(Error::Shape("vstack column counts differ".into()));
        }
        let rows: usize = values.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in &values {
            data.extend_from_slice(v.data());
        }
        let requires_grad = parts.iter().any(|p| self.grad_of(p.id));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::VStack(parts.iter().map(|p| p.id).collect()), requires_grad))
    }

    /// Reverse sweep from a scalar output.
    pub fn gradient(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape();
        if out_shape != (1, 1) {
            return Err(Error::Shape(format!("gradient of a {}x{} output", out_shape.0, out_shape.1)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::scalar(1.0));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backward_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::gradient`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if the output does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sums `g` (of the broadcast output shape) down to `shape`.
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let (r, c) = shape;
    let mut out = Tensor::zeros(r, c);
    let (gr, gc) = g.shape();
    for i in 0..gr {
        let oi = if r == 1 { 0 } else { i };
        let row = g.row_slice(i);
        for (j, &v) in row.iter().enumerate().take(gc) {
            let oj = if c == 1 { 0 } else { j };
            out.data_mut()[oi * c + oj] += v;
        }
    }
    out
}

fn backward_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if needs(*a) {
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                gemm(g, false, vb, true, &mut ga, 0.0);
                accumulate(grads, *a, ga);
            }
            if needs(*b) {
                let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                gemm(va, true, g, false, &mut gb, 0.0);
                accumulate(grads, *b, gb);
            }
        }
        Op::Binary(kind, a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (rows, cols) = g.shape();
            let ia = |i: usize, j: usize| (if va.rows() == 1 { 0 } else { i }) * va.cols() + if va.cols() == 1 { 0 } else { j };
            let ib = |i: usize, j: usize| (if vb.rows() == 1 { 0 } else { i }) * vb.cols() + if vb.cols() == 1 { 0 } else { j };
            let (da, db) = (va.data(), vb.data());
            if needs(*a) {
                let full = Tensor::from_fn(rows, cols, |i, j| {
                    let gij = g.get(i, j);
                    match kind {
                        Binary::Add | Binary::Sub => gij,
                        Binary::Mul => gij * db[ib(i, j)],
                        Binary::Div => gij / db[ib(i, j)],
                    }
                });
                accumulate(grads, *a, reduce_to(&full, va.shape()));
            }
            if needs(*b) {
                let full = Tensor::from_fn(rows, cols, |i, j| {
                    let gij = g.get(i, j);
                    match kind {
                        Binary::Add => gij,
                        Binary::Sub => -gij,
                        Binary::Mul => gij * da[ia(i, j)],
                        Binary::Div => {
                            let y = db[ib(i, j)];
                            -gij * da[ia(i, j)] / (y * y)
                        }
                    }
                });
                accumulate(grads, *b, reduce_to(&full, vb.shape()));
            }
        }
        Op::Unary(kind, a) => {
            if !needs(*a) {
                return;
            }
            let x = &nodes[*a].value;
            let y = &node.value;
            let mut out = g.clone();
            let (xs, ys) = (x.data(), y.data());
            for (k, o) in out.data_mut().iter_mut().enumerate() {
                let d = match kind {
                    Unary::Neg => -1.0,
                    Unary::Exp => ys[k],
                    Unary::Log => 1.0 / xs[k],
                    Unary::Sqrt => {
                        if ys[k] > 0.0 {
                            0.5 / ys[k]
                        } else {
                            0.0
                        }
                    }
                    Unary::Relu => {
                        if xs[k] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Unary::Abs => {
                        if xs[k] > 0.0 {
                            1.0
                        } else if xs[k] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Unary::Square => 2.0 * xs[k],
                    Unary::Recip => -ys[k] * ys[k],
                    Unary::Scale(s) => *s,
                    Unary::AddConst(_) => 1.0,
                };
                *o *= d;
            }
            accumulate(grads, *a, out);
        }
        Op::SumAll(a) => {
            if needs(*a) {
                let (r, c) = nodes[*a].value.shape();
                accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
        }
        Op::SumCols(a) => {
            if needs(*a) {
                let (r, c) = nodes[*a].value.shape();
                accumulate(grads, *a, Tensor::from_fn(r, c, |i, _| g.data()[i]));
            }
        }
        Op::SumRows(a) => {
            if needs(*a) {
                let (r, c) = nodes[*a].value.shape();
                accumulate(grads, *a, Tensor::from_fn(r, c, |_, j| g.data()[j]));
            }
        }
        Op::Gather(a, map) => {
            if needs(*a) {
                let (r, c) = nodes[*a].value.shape();
                let mut out = Tensor::zeros(r, c);
                let od = out.data_mut();
                for (k, src) in map.src.iter().enumerate() {
                    if let GatherSrc::Input(i) = src {
                        od[*i] += g.data()[k];
                    }
                }
                accumulate(grads, *a, out);
            }
        }
        Op::HStack(parts) => {
            let rows = g.rows();
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                if needs(p) {
                    let part = Tensor::from_fn(rows, pc, |i, j| g.get(i, offset + j));
                    accumulate(grads, p, part);
                }
                offset += pc;
            }
        }
        Op::VStack(parts) => {
            let cols = g.cols();
            let mut offset = 0;
            for &p in parts {
                let pr = nodes[p].value.rows();
                if needs(p) {
                    let data = g.data()[offset * cols..(offset + pr) * cols].to_vec();
                    accumulate(grads, p, Tensor::new(pr, cols, data).expect("vstack slice"));
                }
                offset += pr;
            }
        }
        Op::Custom(op, inputs) => {
            let values: Vec<&Tensor> = inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let gs = op.backward(&values, &node.value, g);
            for (&i, gi) in inputs.iter().zip(gs) {
                if let (true, Some(gi)) = (needs(i), gi) {
                    accumulate(grads, i, gi);
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.grad_of(self.id)
    }

    fn unary(&self, kind: Unary) -> Var<'t> {
        let x = self.value();
        let y = x.map(|v| match kind {
            Unary::Neg => -v,
            Unary::Exp => v.exp(),
            Unary::Log => v.ln(),
            Unary::Sqrt => v.sqrt(),
            Unary::Relu => v.max(0.0),
            Unary::Abs => v.abs(),
            Unary::Square => v * v,
            Unary::Recip => 1.0 / v,
            Unary::Scale(s) => s * v,
            Unary::AddConst(c) => v + c,
        });
        self.tape.push(y, Op::Unary(kind, self.id), self.requires_grad())
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Unary::Neg)
    }
    pub fn exp(&self) -> Var<'t> {
        self.unary(Unary::Exp)
    }
    pub fn ln(&self) -> Var<'t> {
        self.unary(Unary::Log)
    }
    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&self) -> Var<'t> {
        self.unary(Unary::Sqrt)
    }
    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&self) -> Var<'t> {
        self.unary(Unary::Relu)
    }
    pub fn abs(&self) -> Var<'t> {
        self.unary(Unary::Abs)
    }
    pub fn square(&self) -> Var<'t> {
        self.unary(Unary::Square)
    }
    pub fn recip(&self) -> Var<'t> {
        self.unary(Unary::Recip)
    }
    pub fn scale(&self, k: f64) -> Var<'t> {
        self.unary(Unary::Scale(k))
    }
    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Unary::AddConst(c))
    }

    fn binary(&self, kind: Binary, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let rows = a.rows().max(b.rows());
        let cols = a.cols().max(b.cols());
        let ok = |t: &Tensor| (t.rows() == rows || t.rows() == 1) && (t.cols() == cols || t.cols() == 1);
        if !ok(&a) || !ok(&b) {
            return Err(Error::Shape(format!(
                "cannot broadcast {}x{} with {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let out = if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(rows, cols, data)?
        } else {
            let at = |t: &Tensor, i: usize, j: usize| {
                t.get(if t.rows() == 1 { 0 } else { i }, if t.cols() == 1 { 0 } else { j })
            };
            Tensor::from_fn(rows, cols, |i, j| f(at(&a, i, j), at(&b, i, j)))
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::Binary(kind, self.id, other.id), rg))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(Binary::Add, other)
    }
    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(Binary::Sub, other)
    }
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(Binary::Mul, other)
    }
    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(Binary::Div, other)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.value().matmul(&other.value())?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id), self.requires_grad())
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row sums: `r × c` to `r × 1`.
    pub fn sum_cols(&self) -> Var<'t> {
        let v = self.value();
        let data = (0..v.rows()).map(|r| v.row_slice(r).iter().sum()).collect();
        self.tape.push(Tensor::column(data), Op::SumCols(self.id), self.requires_grad())
    }

    /// Column sums: `r × c` to `1 × c`.
    pub fn sum_rows(&self) -> Var<'t> {
        let v = self.value();
        let mut data = vec![0.0; v.cols()];
        for r in 0..v.rows() {
            for (acc, x) in data.iter_mut().zip(v.row_slice(r)) {
                *acc += x;
            }
        }
        self.tape.push(Tensor::row(data), Op::SumRows(self.id), self.requires_grad())
    }

    /// Column means: `r × c` to `1 × c`.
    pub fn mean_rows(&self) -> Var<'t> {
        let n = self.shape().0 as f64;
        self.sum_rows().scale(1.0 / n)
    }

    pub fn gather(&self, map: Rc<GatherMap>) -> Result<Var<'t>> {
        let v = self.value();
        if map.src.len() != map.rows * map.cols {
            return Err(Error::Shape("gather map size".into()));
        }
        let mut data = Vec::with_capacity(map.src.len());
        for s in &map.src {
            data.push(match *s {
                GatherSrc::Input(i) => *v
                    .data()
                    .get(i)
                    .ok_or_else(|| Error::Shape(format!("gather index {i} out of range")))?,
                GatherSrc::Const(c) => c,
            });
        }
        let out = Tensor::new(map.rows, map.cols, data)?;
        Ok(self.tape.push(out, Op::Gather(self.id, map), self.requires_grad()))
    }

    /// Selected columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if let Some(bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Shape(format!("column {bad} of a {r}x{c} node")));
        }
        let src = (0..r).flat_map(|i| cols.iter().map(move |&j| GatherSrc::Input(i * c + j))).collect();
        self.gather(Rc::new(GatherMap { rows: r, cols: cols.len(), src }))
    }

    pub fn col(&self, j: usize) -> Result<Var<'t>> {
        self.select_cols(&[j])
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if r * c != rows * cols {
            return Err(Error::Shape(format!("reshape {r}x{c} to {rows}x{cols}")));
        }
        let src = (0..rows * cols).map(GatherSrc::Input).collect();
        self.gather(Rc::new(GatherMap { rows, cols, src }))
    }
}
