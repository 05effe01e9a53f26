//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! Every operation is evaluated eagerly and appended to a [`Tape`]. Gradients are
//! themselves recorded as tape operations, so the result of [`Tape::grad`] can be
//! differentiated again. That double backprop is what the meta-gradient needs.

use crate::error::{contract, Error, Result};
use crate::tensor::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    /// A value supplied from outside: parameters, data or constants.
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    AddRow(Var, Var),
    SumAll(Var),
    /// `r x c -> 1 x c`.
    SumRows(Var),
    /// `r x c -> r x 1`.
    SumCols(Var),
    Broadcast {
        a: Var,
        rows: usize,
        cols: usize,
    },
    Relu(Var),
    Exp(Var),
    /// Row-wise log-softmax.
    LogSoftmax(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::MatMul { a, b, .. } => [Some(a), Some(b)],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => [Some(a), Some(b)],
            Op::Scale(a, _)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Broadcast { a, .. }
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::LogSoftmax(a) => [Some(a), None],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub op: Op,
    pub value: Matrix,
}

/// An append-only, topologically ordered record of evaluated operations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn expect_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                location: what.into(),
                expected: format!("{:?}", self.shape(a)),
                actual: format!("{:?}", self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let k1 = if ta { ar } else { ac };
        let k2 = if tb { bc } else { br };
        if k1 != k2 {
            return Err(Error::Shape {
                location: "matmul".into(),
                expected: format!("inner dimension {k1}"),
                actual: format!("inner dimension {k2}"),
            });
        }
        let op = Op::MatMul { a, b, ta, tb };
        Ok(self.eval_push(op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same(a, b, "add")?;
        Ok(self.eval_push(Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same(a, b, "sub")?;
        Ok(self.eval_push(Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same(a, b, "mul")?;
        Ok(self.eval_push(Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.eval_push(Op::Scale(a, c))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::Shape {
                location: "add_row".into(),
                expected: format!("(1, {ac})"),
                actual: format!("{:?}", self.shape(row)),
            });
        }
        Ok(self.eval_push(Op::AddRow(a, row)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.eval_push(Op::SumAll(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        self.eval_push(Op::SumRows(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        self.eval_push(Op::SumCols(a))
    }

    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if !((r == 1 || r == rows) && (c == 1 || c == cols)) {
            return Err(Error::Shape {
                location: "broadcast".into(),
                expected: format!("broadcastable to ({rows}, {cols})"),
                actual: format!("({r}, {c})"),
            });
        }
        Ok(self.eval_push(Op::Broadcast { a, rows, cols }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.eval_push(Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.eval_push(Op::Exp(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.eval_push(Op::LogSoftmax(a))
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.data().len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    fn eval_push(&mut self, op: Op) -> Var {
        let value = self.evaluate(&op, |v| &self.nodes[v.0].value);
        self.push(op, value)
    }

    fn evaluate<'a>(&'a self, op: &Op, get: impl Fn(Var) -> &'a Matrix) -> Matrix {
        match *op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::MatMul { a, b, ta, tb } => Matrix::matmul(get(a), get(b), ta, tb),
            Op::Add(a, b) => get(a).zip_map(get(b), |x, y| x + y),
            Op::Sub(a, b) => get(a).zip_map(get(b), |x, y| x - y),
            Op::Mul(a, b) => get(a).zip_map(get(b), |x, y| x * y),
            Op::Scale(a, c) => get(a).map(|x| x * c),
            Op::AddRow(a, row) => get(a).add_row(get(row)),
            Op::SumAll(a) => get(a).sum_all(),
            Op::SumRows(a) => get(a).sum_rows(),
            Op::SumCols(a) => get(a).sum_cols(),
            Op::Broadcast { a, rows, cols } => get(a).broadcast(rows, cols),
            // subgradient at 0 is 0
            Op::Relu(a) => get(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Exp(a) => get(a).map(f64::exp),
            Op::LogSoftmax(a) => get(a).log_softmax_rows(),
        }
    }

    /// Re-executes every operation from the leaf values and returns the new tape.
    pub fn replay(&self) -> Tape {
        let mut out = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                op => out.evaluate(&op, |v| &out.nodes[v.0].value),
            };
            out.nodes.push(Node { op: node.op, value });
        }
        out
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// The adjoint computation is appended to this tape, so the returned nodes are
    /// ordinary differentiable values. Inputs that do not influence `loss` receive
    /// a zero leaf of the right shape.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(loss) != (1, 1) {
            return Err(contract(format!(
                "loss must be a scalar node, got shape {:?}",
                self.shape(loss)
            )));
        }
        let end = loss.0 + 1;
        // Which nodes depend on any of `wrt`; only those need adjoints.
        let mut needs = vec![false; end];
        for w in wrt {
            if w.0 < end {
                needs[w.0] = true;
            }
        }
        for i in 0..end {
            if !needs[i] {
                needs[i] = self.nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|v| needs[v.0]);
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; end];
        adj[loss.0] = Some(self.leaf(Matrix::scalar(1.0)));

        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !needs[i] {
                continue;
            }
            let op = self.nodes[i].op;
            let mut contributions: Vec<(Var, Var)> = Vec::with_capacity(2);
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b, ta, tb } => {
                    if needs[a.0] {
                        let da = if ta {
                            self.matmul(b, g, tb, true)?
                        } else {
                            self.matmul(g, b, false, !tb)?
                        };
                        contributions.push((a, da));
                    }
                    if needs[b.0] {
                        let db = if tb {
                            self.matmul(g, a, true, ta)?
                        } else {
                            self.matmul(a, g, !ta, false)?
                        };
                        contributions.push((b, db));
                    }
                }
                Op::Add(a, b) => {
                    contributions.push((a, g));
                    contributions.push((b, g));
                }
                Op::Sub(a, b) => {
                    contributions.push((a, g));
                    if needs[b.0] {
                        let neg = self.scale(g, -1.0);
                        contributions.push((b, neg));
                    }
                }
                Op::Mul(a, b) => {
                    if needs[a.0] {
                        let da = self.mul(g, b)?;
                        contributions.push((a, da));
                    }
                    if needs[b.0] {
                        let db = self.mul(g, a)?;
                        contributions.push((b, db));
                    }
                }
                Op::Scale(a, c) => {
                    let da = self.scale(g, c);
                    contributions.push((a, da));
                }
                Op::AddRow(a, row) => {
                    contributions.push((a, g));
                    if needs[row.0] {
                        let dr = self.sum_rows(g);
                        contributions.push((row, dr));
                    }
                }
                Op::SumAll(a) | Op::SumRows(a) | Op::SumCols(a) => {
                    let (r, c) = self.shape(a);
                    let da = self.broadcast(g, r, c)?;
                    contributions.push((a, da));
                }
                Op::Broadcast { a, .. } => {
                    let (r, c) = self.shape(a);
                    let (gr, gc) = self.shape(g);
                    let da = match (r == 1 && gr != 1, c == 1 && gc != 1) {
                        (true, true) => self.sum_all(g),
                        (true, false) => self.sum_rows(g),
                        (false, true) => self.sum_cols(g),
                        (false, false) => g,
                    };
                    contributions.push((a, da));
                }
                Op::Relu(a) => {
                    // The step mask is piecewise constant, so it enters as a leaf.
                    let mask = self.nodes[a.0]
                        .value
                        .map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.leaf(mask);
                    let da = self.mul(g, mask)?;
                    contributions.push((a, da));
                }
                Op::Exp(a) => {
                    let da = self.mul(g, Var(i))?;
                    contributions.push((a, da));
                }
                Op::LogSoftmax(a) => {
                    let (r, c) = self.shape(a);
                    let probs = self.exp(Var(i));
                    let row_sums = self.sum_cols(g);
                    let spread = self.broadcast(row_sums, r, c)?;
                    let weighted = self.mul(probs, spread)?;
                    let da = self.sub(g, weighted)?;
                    contributions.push((a, da));
                }
            }
            for (target, d) in contributions {
                if !needs[target.0] {
                    continue;
                }
                adj[target.0] = Some(match adj[target.0] {
                    None => d,
                    Some(prev) => self.add(prev, d)?,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(*w);
                    self.leaf(Matrix::zeros(r, c))
                }
            })
            .collect())
    }
}
