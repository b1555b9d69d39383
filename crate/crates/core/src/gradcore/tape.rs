//! A recorded program of matrix primitives that can be replayed forward and
//! differentiated in reverse.
//!
//! A [`Tape`] is built once by appending operations; every append returns a
//! [`Var`] handle to the new node, so operands always precede their
//! consumers. Named inputs are bound at evaluation time, which lets the same
//! tape be replayed with different data. Reverse accumulation walks the tape
//! back to front and sums adjoints in that fixed order, so gradients are
//! bitwise reproducible.

use std::collections::HashMap;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Const(Matrix),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `(n x c) + (1 x c)`, the row broadcast over every row.
    AddRow(Var, Var),
    /// `(n x c) - (n x 1)`, the column broadcast over every column.
    SubCol(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    /// `n x c -> n x 1`
    RowSum(Var),
    /// `n x c -> 1 x c`
    ColMean(Var),
    Transpose(Var),
    /// Per-row maximum, treated as a constant by the backward pass.
    RowMaxDetached(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::SubCol(..) => "sub_col",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::ColMean(_) => "col_mean",
            Op::Transpose(_) => "transpose",
            Op::RowMaxDetached(_) => "row_max_detached",
        }
    }

    fn operands(&self) -> (Option<Var>, Option<Var>) {
        match *self {
            Op::Input(_) | Op::Const(_) => (None, None),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::SubCol(a, b) => (Some(a), Some(b)),
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::ColMean(a)
            | Op::Transpose(a)
            | Op::RowMaxDetached(a) => (Some(a), None),
        }
    }
}

/// Named input bindings for one evaluation.
#[derive(Default, Clone, Debug)]
pub struct Inputs<'a> {
    map: HashMap<&'a str, &'a Matrix>,
}

impl<'a> Inputs<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: &'a str, value: &'a Matrix) -> Self {
        self.map.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &'a str, value: &'a Matrix) {
        self.map.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&'a Matrix> {
        self.map.get(name).copied()
    }
}

/// Values of every node after a forward pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    values: Vec<Matrix>,
    output: Var,
}

impl Evaluation {
    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn output(&self) -> &Matrix {
        &self.values[self.output.0]
    }

    /// The output as a scalar; errors if it is not `1 x 1`.
    pub fn scalar(&self) -> Result<f64> {
        let out = self.output();
        if out.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "expected scalar output, got {}x{}",
                out.rows(),
                out.cols()
            )));
        }
        Ok(out.get(0, 0))
    }
}

/// Gradients of a scalar output with respect to named inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_name: HashMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.by_name.get(name)
    }

    pub fn take(&mut self, name: &str) -> Option<Matrix> {
        self.by_name.remove(name)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

/// A recorded computation; see the module docs.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    output: Option<Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op) -> Var {
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    /// Marks `v` as the tape output. Defaults to the last node.
    pub fn set_output(&mut self, v: Var) {
        self.output = Some(v);
    }

    pub fn output(&self) -> Option<Var> {
        self.output.or_else(|| self.ops.len().checked_sub(1).map(Var))
    }

    pub fn input(&mut self, name: impl Into<String>) -> Var {
        self.push(Op::Input(name.into()))
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Const(m))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Scale(a, s))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.push(Op::AddRow(a, row))
    }

    pub fn sub_col(&mut self, a: Var, col: Var) -> Var {
        self.push(Op::SubCol(a, col))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        self.push(Op::RowSum(a))
    }

    pub fn col_mean(&mut self, a: Var) -> Var {
        self.push(Op::ColMean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a))
    }

    pub fn row_max_detached(&mut self, a: Var) -> Var {
        self.push(Op::RowMaxDetached(a))
    }

    /// Row-wise log-softmax, stabilized by a detached row maximum.
    pub fn log_softmax(&mut self, logits: Var) -> Var {
        let m = self.row_max_detached(logits);
        let shifted = self.sub_col(logits, m);
        let e = self.exp(shifted);
        let s = self.row_sum(e);
        let lse = self.log(s);
        self.sub_col(shifted, lse)
    }

    /// Evaluates every node. The tape and the inputs are left untouched.
    pub fn forward_eval(&self, inputs: &Inputs<'_>) -> Result<Evaluation> {
        let output = self
            .output()
            .ok_or_else(|| Error::Contract("empty tape".into()))?;
        let mut values: Vec<Matrix> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = eval_op(op, &values, inputs)?;
            values.push(v);
        }
        Ok(Evaluation { values, output })
    }

    /// Reverse-mode gradients of the (scalar) output with respect to the
    /// named inputs in `wrt`. Inputs the output does not depend on get zero
    /// gradients of their bound shape.
    pub fn backward_grad(&self, eval: &Evaluation, wrt: &[&str]) -> Result<Gradients> {
        let out = eval.output;
        if eval.value(out).shape() != (1, 1) {
            let (r, c) = eval.value(out).shape();
            return Err(Error::Contract(format!(
                "backward_grad needs a scalar output, got {r}x{c}"
            )));
        }

        // Only nodes downstream of a requested input carry adjoints.
        let mut needs = vec![false; self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            needs[i] = match op {
                Op::Input(name) => wrt.contains(&name.as_str()),
                Op::Const(_) | Op::RowMaxDetached(_) => false,
                other => {
                    let (a, b) = other.operands();
                    a.is_some_and(|a| needs[a.0]) || b.is_some_and(|b| needs[b.0])
                }
            };
        }

        let mut adj: Vec<Option<Matrix>> = vec![None; self.ops.len()];
        if needs[out.0] {
            adj[out.0] = Some(Matrix::scalar(1.0));
        }

        for i in (0..=out.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let op = &self.ops[i];
            if let Op::Input(_) = op {
                adj[i] = Some(g);
                continue;
            }
            let y = &eval.values[i];
            let val = |v: Var| &eval.values[v.0];
            let push = |v: Var, d: Matrix, adj: &mut Vec<Option<Matrix>>| {
                if !needs[v.0] {
                    return;
                }
                match &mut adj[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match *op {
                Op::Input(_) | Op::Const(_) | Op::RowMaxDetached(_) => {}
                Op::MatMul(a, b) => {
                    if needs[a.0] {
                        push(a, g.matmul(&val(b).transpose())?, &mut adj);
                    }
                    if needs[b.0] {
                        push(b, val(a).transpose().matmul(&g)?, &mut adj);
                    }
                }
                Op::Add(a, b) => {
                    push(a, g.clone(), &mut adj);
                    push(b, g, &mut adj);
                }
                Op::Sub(a, b) => {
                    push(a, g.clone(), &mut adj);
                    push(b, g.scale(-1.0), &mut adj);
                }
                Op::Mul(a, b) => {
                    if needs[a.0] {
                        push(a, g.zip_with(val(b), "mul", |d, x| d * x)?, &mut adj);
                    }
                    if needs[b.0] {
                        push(b, g.zip_with(val(a), "mul", |d, x| d * x)?, &mut adj);
                    }
                }
                Op::Scale(a, s) => push(a, g.scale(s), &mut adj),
                Op::AddRow(a, r) => {
                    if needs[r.0] {
                        push(r, col_sums(&g), &mut adj);
                    }
                    push(a, g, &mut adj);
                }
                Op::SubCol(a, c) => {
                    if needs[c.0] {
                        let mut rs = row_sums(&g);
                        rs.data_mut().iter_mut().for_each(|v| *v = -*v);
                        push(c, rs, &mut adj);
                    }
                    push(a, g, &mut adj);
                }
                Op::Relu(a) => push(
                    a,
                    g.zip_with(val(a), "relu", |d, x| if x > 0.0 { d } else { 0.0 })?,
                    &mut adj,
                ),
                Op::Exp(a) => push(a, g.zip_with(y, "exp", |d, e| d * e)?, &mut adj),
                Op::Log(a) => push(a, g.zip_with(val(a), "log", |d, x| d / x)?, &mut adj),
                Op::Square(a) => push(
                    a,
                    g.zip_with(val(a), "square", |d, x| 2.0 * x * d)?,
                    &mut adj,
                ),
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    push(a, Matrix::filled(r, c, g.get(0, 0)), &mut adj);
                }
                Op::Mean(a) => {
                    let (r, c) = val(a).shape();
                    let n = (r * c) as f64;
                    push(a, Matrix::filled(r, c, g.get(0, 0) / n), &mut adj);
                }
                Op::RowSum(a) => {
                    let (r, c) = val(a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0);
                        d.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    push(a, d, &mut adj);
                }
                Op::ColMean(a) => {
                    let (r, c) = val(a).shape();
                    let inv = 1.0 / r as f64;
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            d.set(i, j, g.get(0, j) * inv);
                        }
                    }
                    push(a, d, &mut adj);
                }
                Op::Transpose(a) => push(a, g.transpose(), &mut adj),
            }
        }

        let mut by_name = HashMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Input(name) = op {
                if !wrt.contains(&name.as_str()) || by_name.contains_key(name) {
                    continue;
                }
                let g = adj[i].take().unwrap_or_else(|| {
                    let (r, c) = eval.values[i].shape();
                    Matrix::zeros(r, c)
                });
                by_name.insert(name.clone(), g);
            }
        }
        for name in wrt {
            if !by_name.contains_key(*name) {
                return Err(Error::Contract(format!("no input named `{name}` on tape")));
            }
        }
        Ok(Gradients { by_name })
    }
}

fn col_sums(m: &Matrix) -> Matrix {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    Matrix::from_raw(1, m.cols(), out)
}

fn row_sums(m: &Matrix) -> Matrix {
    let out = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
    Matrix::from_raw(m.rows(), 1, out)
}

fn eval_op(op: &Op, values: &[Matrix], inputs: &Inputs<'_>) -> Result<Matrix> {
    let name = op.name();
    let val = |v: Var| &values[v.0];
    Ok(match op {
        Op::Input(n) => inputs
            .get(n)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("input `{n}` is not bound")))?,
        Op::Const(m) => m.clone(),
        Op::MatMul(a, b) => {
            let (a, b) = (val(*a), val(*b));
            if a.cols() != b.rows() {
                return Err(Error::dim(
                    name,
                    format!("{:?} times {:?}", a.shape(), b.shape()),
                ));
            }
            a.matmul(b)?
        }
        Op::Add(a, b) => val(*a).zip_with(val(*b), name, |x, y| x + y)?,
        Op::Sub(a, b) => val(*a).zip_with(val(*b), name, |x, y| x - y)?,
        Op::Mul(a, b) => val(*a).zip_with(val(*b), name, |x, y| x * y)?,
        Op::Scale(a, s) => val(*a).scale(*s),
        Op::AddRow(a, r) => {
            let (a, r) = (val(*a), val(*r));
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::dim(
                    name,
                    format!("row {:?} against {:?}", r.shape(), a.shape()),
                ));
            }
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                    *o += b;
                }
            }
            out
        }
        Op::SubCol(a, c) => {
            let (a, c) = (val(*a), val(*c));
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(Error::dim(
                    name,
                    format!("column {:?} against {:?}", c.shape(), a.shape()),
                ));
            }
            let mut out = a.clone();
            for i in 0..out.rows() {
                let s = c.get(i, 0);
                out.row_mut(i).iter_mut().for_each(|o| *o -= s);
            }
            out
        }
        Op::Relu(a) => val(*a).map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Exp(a) => val(*a).map(f64::exp),
        Op::Log(a) => val(*a).map(f64::ln),
        Op::Square(a) => val(*a).map(|x| x * x),
        Op::Sum(a) => Matrix::scalar(val(*a).sum()),
        Op::Mean(a) => {
            let a = val(*a);
            let n = a.rows() * a.cols();
            if n == 0 {
                return Err(Error::dim(name, "mean of an empty matrix"));
            }
            Matrix::scalar(a.sum() / n as f64)
        }
        Op::RowSum(a) => row_sums(val(*a)),
        Op::ColMean(a) => {
            let a = val(*a);
            if a.rows() == 0 {
                return Err(Error::dim(name, "column mean of an empty matrix"));
            }
            col_sums(a).scale(1.0 / a.rows() as f64)
        }
        Op::Transpose(a) => val(*a).transpose(),
        Op::RowMaxDetached(a) => {
            let a = val(*a);
            let out = (0..a.rows())
                .map(|r| a.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            Matrix::from_raw(a.rows(), 1, out)
        }
    })
}
