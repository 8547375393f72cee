//! Tape-based automatic differentiation.
//!
//! Every primitive is recorded on a [`Tape`] together with its cached value.
//! Three sweeps run over the recorded graph:
//!
//! * [`Tape::backward`] is the numeric reverse sweep producing parameter
//!   gradients of a scalar.
//! * [`Tape::jvp_at`] propagates a tangent forward from an input node. Each
//!   tangent operation is itself a recorded primitive.
//! * [`Tape::vjp_at`] propagates a cotangent backward to an input node, again
//!   by recording primitives.
//!
//! Because the last two record onto the same tape, a scalar built from a JVP
//! or VJP result can be differentiated by `backward` with respect to the
//! network parameters (reverse-over-forward and reverse-over-reverse).

mod tensor;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub(crate) use tensor::gemm;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Added under the square root of every norm so the derivative stays finite at 0.
pub const NORM_EPS: f64 = 1e-12;

/// Largest input dimension accepted by [`explicit_jacobian`].
pub const MAX_JACOBIAN_INPUT_DIM: usize = 64;

type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    /// `[m] -> [n, m]`
    BroadcastRows(NodeId, usize),
    /// `[n] -> [n, m]`
    BroadcastCols(NodeId, usize),
    /// `[n, m] -> [m]`
    SumRows(NodeId),
    /// `[n, m] -> [n]`
    SumCols(NodeId),
    /// scalar -> any shape
    Fill(NodeId, Vec<usize>),
    Sum(NodeId),
    SumSq(NodeId),
    Sqrt(NodeId),
    Softplus(NodeId, f64),
    Sigmoid(NodeId, f64),
    Reshape(NodeId, Vec<usize>),
}

impl Op {
    fn operands(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => [Some(a), Some(b)],
            Scale(a, _)
            | AddScalar(a, _)
            | BroadcastRows(a, _)
            | BroadcastCols(a, _)
            | SumRows(a)
            | SumCols(a)
            | Fill(a, _)
            | Sum(a)
            | SumSq(a)
            | Sqrt(a)
            | Softplus(a, _)
            | Sigmoid(a, _)
            | Reshape(a, _) => [Some(a), None],
        }
    }
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
    needs_grad: bool,
}

/// Ordered record of primitive operations. Operands always precede their users.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    /// `(input, β bits) -> Sigmoid node`, filled when a SoftPlus is recorded.
    sigmoids: RefCell<HashMap<(NodeId, u64), NodeId>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// SoftPlus and its slope `σ(βx)` from a single exponential.
fn softplus_sigmoid(x: f64, beta: f64) -> (f64, f64) {
    let bx = beta * x;
    let e = (-bx.abs()).exp();
    let s = if bx >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    let sp = if bx > 30.0 {
        x
    } else if bx < -30.0 {
        e / beta
    } else {
        (bx.max(0.0) + e.ln_1p()) / beta
    };
    (sp, s)
}

fn softplus(x: f64, beta: f64) -> f64 {
    softplus_sigmoid(x, beta).0
}

fn sigmoid(x: f64, beta: f64) -> f64 {
    softplus_sigmoid(x, beta).1
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: operand shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn expect_rank(what: &str, a: &Tensor, rank: usize) -> Result<()> {
    if a.rank() != rank {
        return Err(Error::shape(format!("{what}: expected rank {rank}, got shape {:?}", a.shape())));
    }
    Ok(())
}

/// Computes the value of `op` from its operand values.
fn eval_op(op: &Op, val: &dyn Fn(NodeId) -> Rc<Tensor>) -> Result<Tensor> {
    use Op::*;
    Ok(match op {
        Leaf => unreachable!("leaves carry their own value"),
        MatMul { a, b, ta, tb } => gemm(&val(*a), *ta, &val(*b), *tb)?,
        Add(a, b) => {
            let (a, b) = (val(*a), val(*b));
            same_shape("add", &a, &b)?;
            a.zip_map(&b, |x, y| x + y)
        }
        Sub(a, b) => {
            let (a, b) = (val(*a), val(*b));
            same_shape("sub", &a, &b)?;
            a.zip_map(&b, |x, y| x - y)
        }
        Mul(a, b) => {
            let (a, b) = (val(*a), val(*b));
            same_shape("mul", &a, &b)?;
            a.zip_map(&b, |x, y| x * y)
        }
        Div(a, b) => {
            let (a, b) = (val(*a), val(*b));
            same_shape("div", &a, &b)?;
            a.zip_map(&b, |x, y| x / y)
        }
        Scale(a, c) => val(*a).scale(*c),
        AddScalar(a, c) => val(*a).map(|x| x + c),
        BroadcastRows(a, n) => {
            let a = val(*a);
            expect_rank("broadcast_rows", &a, 1)?;
            let m = a.len();
            let mut data = Vec::with_capacity(n * m);
            for _ in 0..*n {
                data.extend_from_slice(a.data());
            }
            Tensor::matrix(*n, m, data)?
        }
        BroadcastCols(a, m) => {
            let a = val(*a);
            expect_rank("broadcast_cols", &a, 1)?;
            let n = a.len();
            let mut data = Vec::with_capacity(n * m);
            for &x in a.data() {
                data.extend(std::iter::repeat_n(x, *m));
            }
            Tensor::matrix(n, *m, data)?
        }
        SumRows(a) => {
            let a = val(*a);
            expect_rank("sum_rows", &a, 2)?;
            let mut out = vec![0.0; a.cols()];
            for row in a.row_iter() {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            Tensor::vector(out)
        }
        SumCols(a) => {
            let a = val(*a);
            expect_rank("sum_cols", &a, 2)?;
            if a.cols() == 0 {
                Tensor::vector(vec![0.0; a.rows()])
            } else {
                Tensor::vector(a.row_iter().map(|r| r.iter().sum()).collect())
            }
        }
        Fill(a, shape) => {
            let a = val(*a);
            if a.len() != 1 {
                return Err(Error::shape(format!("fill needs a scalar, got {:?}", a.shape())));
            }
            Tensor::full(shape, a.item())
        }
        Sum(a) => Tensor::scalar(val(*a).sum()),
        SumSq(a) => {
            let a = val(*a);
            Tensor::scalar(a.dot(&a))
        }
        Sqrt(a) => val(*a).map(f64::sqrt),
        Softplus(a, beta) => val(*a).map(|x| softplus(x, *beta)),
        Sigmoid(a, beta) => val(*a).map(|x| sigmoid(x, *beta)),
        Reshape(a, shape) => val(*a).reshape(shape)?,
    })
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

    /// Records a trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Records a leaf that is treated as a constant by [`Tape::backward`].
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, value: Rc::new(value), needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, op: Op) -> Result<Var<'_>> {
        let value = eval_op(&op, &|id| self.value(id))?;
        Ok(self.push_evaluated(op, value))
    }

    fn push_evaluated(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op.operands().iter().flatten().any(|&o| nodes[o].needs_grad);
        nodes.push(Node { op, value: Rc::new(value), needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn cached_sigmoid(&self, input: NodeId, beta: f64) -> Option<NodeId> {
        self.sigmoids.borrow().get(&(input, beta.to_bits())).copied()
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Recomputes every recorded operation from its operands and reports
    /// whether all cached values are reproduced bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let nodes = self.nodes.borrow();
        for node in nodes.iter() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let again = eval_op(&node.op, &|id| Rc::clone(&nodes[id].value))?;
            let same = again.shape() == node.value.shape()
                && again.data().iter().zip(node.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Reverse sweep from a scalar output. Gradients are kept for leaves only.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = output.id;
        if nodes[out].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                nodes[out].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out + 1];
        grads[out] = Some(Tensor::full(nodes[out].value.shape(), 1.0));

        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let needs = |o: NodeId| nodes[o].needs_grad;
            let v = |o: NodeId| &*nodes[o].value;
            let y = &*node.value;
            let mut acc = |o: NodeId, t: Tensor| match &mut grads[o] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            use Op::*;
            match node.op {
                Leaf => unreachable!(),
                MatMul { a, b, ta, tb } => {
                    if needs(a) {
                        let da = if ta { gemm(v(b), tb, &g, true)? } else { gemm(&g, false, v(b), !tb)? };
                        acc(a, da);
                    }
                    if needs(b) {
                        let db = if tb { gemm(&g, true, v(a), ta)? } else { gemm(v(a), !ta, &g, false)? };
                        acc(b, db);
                    }
                }
                Add(a, b) => {
                    if needs(a) {
                        acc(a, g.clone());
                    }
                    if needs(b) {
                        acc(b, g);
                    }
                }
                Sub(a, b) => {
                    if needs(a) {
                        acc(a, g.clone());
                    }
                    if needs(b) {
                        acc(b, g.scale(-1.0));
                    }
                }
                Mul(a, b) => {
                    if needs(a) {
                        acc(a, g.zip_map(v(b), |g, b| g * b));
                    }
                    if needs(b) {
                        acc(b, g.zip_map(v(a), |g, a| g * a));
                    }
                }
                Div(a, b) => {
                    if needs(a) {
                        acc(a, g.zip_map(v(b), |g, b| g / b));
                    }
                    if needs(b) {
                        // d(a/b)/db = -y/b
                        let gy = g.zip_map(y, |g, y| g * y);
                        acc(b, gy.zip_map(v(b), |gy, b| -gy / b));
                    }
                }
                Scale(a, c) => {
                    if needs(a) {
                        acc(a, g.scale(c));
                    }
                }
                AddScalar(a, _) | Reshape(a, _) => {
                    if needs(a) {
                        let shape = v(a).shape().to_vec();
                        acc(a, g.reshape(&shape)?);
                    }
                }
                BroadcastRows(a, _) => {
                    if needs(a) {
                        let mut out = vec![0.0; y.cols()];
                        for row in g.row_iter() {
                            for (o, x) in out.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                        acc(a, Tensor::vector(out));
                    }
                }
                BroadcastCols(a, _) => {
                    if needs(a) {
                        acc(a, Tensor::vector(g.row_iter().map(|r| r.iter().sum()).collect()));
                    }
                }
                SumRows(a) => {
                    if needs(a) {
                        let (n, m) = (v(a).rows(), v(a).cols());
                        acc(a, Tensor::from_fn(n, m, |_, j| g.data()[j]));
                    }
                }
                SumCols(a) => {
                    if needs(a) {
                        let (n, m) = (v(a).rows(), v(a).cols());
                        acc(a, Tensor::from_fn(n, m, |i, _| g.data()[i]));
                    }
                }
                Fill(a, _) => {
                    if needs(a) {
                        let shape = v(a).shape().to_vec();
                        acc(a, Tensor::full(&shape, g.sum()));
                    }
                }
                Sum(a) => {
                    if needs(a) {
                        acc(a, Tensor::full(v(a).shape(), g.item()));
                    }
                }
                SumSq(a) => {
                    if needs(a) {
                        let s = 2.0 * g.item();
                        acc(a, v(a).scale(s));
                    }
                }
                Sqrt(a) => {
                    if needs(a) {
                        acc(a, g.zip_map(y, |g, y| 0.5 * g / y));
                    }
                }
                Softplus(a, beta) => {
                    if needs(a) {
                        match self.cached_sigmoid(a, beta) {
                            Some(s) => acc(a, g.zip_map(&nodes[s].value, |g, s| g * s)),
                            None => acc(a, g.zip_map(v(a), |g, x| g * sigmoid(x, beta))),
                        }
                    }
                }
                Sigmoid(a, beta) => {
                    if needs(a) {
                        acc(a, g.zip_map(y, |g, s| g * beta * s * (1.0 - s)));
                    }
                }
            }
        }
        let shapes = nodes[..=out].iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn ops_in(&self, lo: NodeId, hi: NodeId) -> Vec<Op> {
        self.nodes.borrow()[lo..=hi].iter().map(|n| n.op.clone()).collect()
    }

    /// Pushes the tangent `tangent` of `input` forward to `output`, recording
    /// every tangent operation. Returns `d output / d input · tangent`.
    pub fn jvp_at<'t>(&'t self, output: Var<'t>, input: Var<'t>, tangent: Var<'t>) -> Result<Var<'t>> {
        if tangent.shape() != input.shape() {
            return Err(Error::shape(format!(
                "jvp: tangent shape {:?} differs from input shape {:?}",
                tangent.shape(),
                input.shape()
            )));
        }
        let (lo, hi) = (input.id, output.id);
        if hi < lo {
            return Ok(self.constant(Tensor::zeros(&output.shape())));
        }
        let ops = self.ops_in(lo, hi);
        let mut tan: Vec<Option<Var<'t>>> = vec![None; hi - lo + 1];
        tan[0] = Some(tangent);
        for id in lo + 1..=hi {
            let op = &ops[id - lo];
            let t = |o: NodeId| if o >= lo { tan[o - lo] } else { None };
            if op.operands().iter().flatten().all(|&o| t(o).is_none()) {
                continue;
            }
            tan[id - lo] = self.tangent_rule(op, id, &t)?;
        }
        match tan[hi - lo] {
            Some(t) => Ok(t),
            None => Ok(self.constant(Tensor::zeros(&output.shape()))),
        }
    }

    fn tangent_rule<'t>(
        &'t self,
        op: &Op,
        id: NodeId,
        t: &dyn Fn(NodeId) -> Option<Var<'t>>,
    ) -> Result<Option<Var<'t>>> {
        use Op::*;
        let var = |o| self.var(o);
        let y = self.var(id);
        Ok(match *op {
            Leaf => None,
            MatMul { a, b, ta, tb } => {
                let left = t(a).map(|da| da.matmul_ex(var(b), ta, tb)).transpose()?;
                let right = t(b).map(|db| var(a).matmul_ex(db, ta, tb)).transpose()?;
                add_opt(left, right)?
            }
            Add(a, b) => add_opt(t(a), t(b))?,
            Sub(a, b) => {
                let nb = t(b).map(|x| x.scale(-1.0)).transpose()?;
                add_opt(t(a), nb)?
            }
            Mul(a, b) => {
                let left = t(a).map(|da| da.mul(var(b))).transpose()?;
                let right = t(b).map(|db| var(a).mul(db)).transpose()?;
                add_opt(left, right)?
            }
            Div(a, b) => {
                let left = t(a).map(|da| da.div(var(b))).transpose()?;
                let right = t(b).map(|db| db.mul(y)?.div(var(b))?.scale(-1.0)).transpose()?;
                add_opt(left, right)?
            }
            Scale(a, c) => t(a).map(|x| x.scale(c)).transpose()?,
            AddScalar(a, _) => t(a),
            BroadcastRows(a, n) => t(a).map(|x| x.broadcast_rows(n)).transpose()?,
            BroadcastCols(a, m) => t(a).map(|x| x.broadcast_cols(m)).transpose()?,
            SumRows(a) => t(a).map(|x| x.sum_rows()).transpose()?,
            SumCols(a) => t(a).map(|x| x.sum_cols()).transpose()?,
            Fill(a, ref shape) => t(a).map(|x| x.fill(shape)).transpose()?,
            Sum(a) => t(a).map(|x| x.sum()).transpose()?,
            SumSq(a) => t(a).map(|x| var(a).mul(x)?.sum()?.scale(2.0)).transpose()?,
            Sqrt(a) => t(a).map(|x| x.scale(0.5)?.div(y)).transpose()?,
            Softplus(a, beta) => t(a).map(|x| x.mul(var(a).sigmoid(beta)?)).transpose()?,
            Sigmoid(a, beta) => t(a).map(|x| x.mul(sigmoid_slope(y, beta)?)).transpose()?,
            Reshape(a, ref shape) => t(a).map(|x| x.reshape(shape)).transpose()?,
        })
    }

    /// Pulls the cotangent `cotangent` of `output` back to `input`, recording
    /// every cotangent operation. Returns `cotangentᵀ · d output / d input`.
    pub fn vjp_at<'t>(&'t self, output: Var<'t>, input: Var<'t>, cotangent: Var<'t>) -> Result<Var<'t>> {
        if cotangent.shape() != output.shape() {
            return Err(Error::shape(format!(
                "vjp: cotangent shape {:?} differs from output shape {:?}",
                cotangent.shape(),
                output.shape()
            )));
        }
        let (lo, hi) = (input.id, output.id);
        if hi < lo {
            return Ok(self.constant(Tensor::zeros(&input.shape())));
        }
        let ops = self.ops_in(lo, hi);
        // Only nodes downstream of `input` carry cotangents worth computing.
        let mut depends = vec![false; hi - lo + 1];
        depends[0] = true;
        for id in lo + 1..=hi {
            depends[id - lo] = ops[id - lo].operands().iter().flatten().any(|&o| o >= lo && depends[o - lo]);
        }
        let mut cot: Vec<Option<Var<'t>>> = vec![None; hi - lo + 1];
        if depends[hi - lo] {
            cot[hi - lo] = Some(cotangent);
        }
        for id in (lo + 1..=hi).rev() {
            let Some(g) = cot[id - lo].take() else { continue };
            let wanted = |o: NodeId| o >= lo && depends[o - lo];
            for (o, contrib) in self.cotangent_rule(&ops[id - lo], id, g, &wanted)? {
                let slot = &mut cot[o - lo];
                *slot = Some(match slot.take() {
                    Some(prev) => prev.add(contrib)?,
                    None => contrib,
                });
            }
        }
        match cot[0] {
            Some(c) => Ok(c),
            None => Ok(self.constant(Tensor::zeros(&input.shape()))),
        }
    }

    fn cotangent_rule<'t>(
        &'t self,
        op: &Op,
        id: NodeId,
        g: Var<'t>,
        wanted: &dyn Fn(NodeId) -> bool,
    ) -> Result<Vec<(NodeId, Var<'t>)>> {
        use Op::*;
        let var = |o| self.var(o);
        let y = self.var(id);
        let mut out = Vec::with_capacity(2);
        match *op {
            Leaf => {}
            MatMul { a, b, ta, tb } => {
                if wanted(a) {
                    let da = if ta { var(b).matmul_ex(g, tb, true)? } else { g.matmul_ex(var(b), false, !tb)? };
                    out.push((a, da));
                }
                if wanted(b) {
                    let db = if tb { g.matmul_ex(var(a), true, ta)? } else { var(a).matmul_ex(g, !ta, false)? };
                    out.push((b, db));
                }
            }
            Add(a, b) => {
                if wanted(a) {
                    out.push((a, g));
                }
                if wanted(b) {
                    out.push((b, g));
                }
            }
            Sub(a, b) => {
                if wanted(a) {
                    out.push((a, g));
                }
                if wanted(b) {
                    out.push((b, g.scale(-1.0)?));
                }
            }
            Mul(a, b) => {
                if wanted(a) {
                    out.push((a, g.mul(var(b))?));
                }
                if wanted(b) {
                    out.push((b, g.mul(var(a))?));
                }
            }
            Div(a, b) => {
                if wanted(a) {
                    out.push((a, g.div(var(b))?));
                }
                if wanted(b) {
                    out.push((b, g.mul(y)?.div(var(b))?.scale(-1.0)?));
                }
            }
            Scale(a, c) => {
                if wanted(a) {
                    out.push((a, g.scale(c)?));
                }
            }
            AddScalar(a, _) => {
                if wanted(a) {
                    out.push((a, g));
                }
            }
            BroadcastRows(a, _) => {
                if wanted(a) {
                    out.push((a, g.sum_rows()?));
                }
            }
            BroadcastCols(a, _) => {
                if wanted(a) {
                    out.push((a, g.sum_cols()?));
                }
            }
            SumRows(a) => {
                if wanted(a) {
                    out.push((a, g.broadcast_rows(var(a).rows())?));
                }
            }
            SumCols(a) => {
                if wanted(a) {
                    out.push((a, g.broadcast_cols(var(a).cols())?));
                }
            }
            Fill(a, _) => {
                if wanted(a) {
                    let s = g.sum()?;
                    out.push((a, s.reshape(&var(a).shape())?));
                }
            }
            Sum(a) => {
                if wanted(a) {
                    out.push((a, g.fill(&var(a).shape())?));
                }
            }
            SumSq(a) => {
                if wanted(a) {
                    let gs = g.scale(2.0)?.fill(&var(a).shape())?;
                    out.push((a, gs.mul(var(a))?));
                }
            }
            Sqrt(a) => {
                if wanted(a) {
                    out.push((a, g.scale(0.5)?.div(y)?));
                }
            }
            Softplus(a, beta) => {
                if wanted(a) {
                    out.push((a, g.mul(var(a).sigmoid(beta)?)?));
                }
            }
            Sigmoid(a, beta) => {
                if wanted(a) {
                    out.push((a, g.mul(sigmoid_slope(y, beta)?)?));
                }
            }
            Reshape(a, _) => {
                if wanted(a) {
                    out.push((a, g.reshape(&var(a).shape())?));
                }
            }
        }
        Ok(out)
    }
}

/// `β·s·(1 − s)` for a recorded sigmoid output `s`.
fn sigmoid_slope(s: Var<'_>, beta: f64) -> Result<Var<'_>> {
    let one_minus = s.scale(-1.0)?.add_scalar(1.0)?;
    s.mul(one_minus)?.scale(beta)
}

fn add_opt<'t>(a: Option<Var<'t>>, b: Option<Var<'t>>) -> Result<Option<Var<'t>>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.add(b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zero when the output does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => match self.shapes.get(v.id) {
                Some(shape) => Tensor::zeros(shape),
                None => Tensor::zeros(&v.shape()),
            },
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    fn check_same_tape(&self, other: &Var<'t>) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::contract("operands recorded on different tapes"));
        }
        Ok(())
    }

    fn binary(self, other: Var<'t>, op: Op) -> Result<Var<'t>> {
        self.check_same_tape(&other)?;
        self.tape.push(op)
    }

    /// `op(self) · op(other)` where `op` transposes when the flag is set.
    pub fn matmul_ex(self, other: Var<'t>, trans_self: bool, trans_other: bool) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul { a: self.id, b: other.id, ta: trans_self, tb: trans_other })
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_ex(other, false, false)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_ex(other, false, true)
    }

    /// Matrix–vector product `self · x` for a matrix `self` and vector `x`.
    pub fn matvec(self, x: Var<'t>) -> Result<Var<'t>> {
        let xs = x.shape();
        if xs.len() != 1 {
            return Err(Error::shape(format!("matvec needs a vector, got {xs:?}")));
        }
        let col = x.reshape(&[xs[0], 1])?;
        let y = self.matmul(col)?;
        let rows = y.rows();
        y.reshape(&[rows])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Div(self.id, other.id))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.tape.push(Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.tape.push(Op::AddScalar(self.id, c))
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    /// Repeats a vector `n` times as the rows of a matrix.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'t>> {
        self.tape.push(Op::BroadcastRows(self.id, n))
    }

    /// Repeats a vector `m` times as the columns of a matrix.
    pub fn broadcast_cols(self, m: usize) -> Result<Var<'t>> {
        self.tape.push(Op::BroadcastCols(self.id, m))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let n = self.rows();
        self.add(bias.broadcast_rows(n)?)
    }

    /// Column totals of a matrix.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        self.tape.push(Op::SumRows(self.id))
    }

    /// Row totals of a matrix.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        self.tape.push(Op::SumCols(self.id))
    }

    pub fn fill(self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape.push(Op::Fill(self.id, shape.to_vec()))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.tape.push(Op::Sum(self.id))
    }

    pub fn sum_sq(self) -> Result<Var<'t>> {
        self.tape.push(Op::SumSq(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len();
        if n == 0 {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.tape.push(Op::Sqrt(self.id))
    }

    /// `(1/β)·ln(1 + e^{βx})`, elementwise.
    /// Also records `σ(βx)`, which every derivative of the result reuses.
    pub fn softplus(self, beta: f64) -> Result<Var<'t>> {
        let x = self.value();
        let n = x.len();
        let (mut sp, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &v in x.data() {
            let (a, b) = softplus_sigmoid(v, beta);
            sp.push(a);
            s.push(b);
        }
        let shape = x.shape().to_vec();
        if self.tape.cached_sigmoid(self.id, beta).is_none() {
            let sig = self.tape.push_evaluated(Op::Sigmoid(self.id, beta), Tensor::new(shape.clone(), s)?);
            self.tape.sigmoids.borrow_mut().insert((self.id, beta.to_bits()), sig.id);
        }
        Ok(self.tape.push_evaluated(Op::Softplus(self.id, beta), Tensor::new(shape, sp)?))
    }

    /// `1/(1 + e^{−βx})`, elementwise.
    pub fn sigmoid(self, beta: f64) -> Result<Var<'t>> {
        match self.tape.cached_sigmoid(self.id, beta) {
            Some(id) => Ok(self.tape.var(id)),
            None => self.tape.push(Op::Sigmoid(self.id, beta)),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape.push(Op::Reshape(self.id, shape.to_vec()))
    }

    /// Euclidean norm of all entries, `sqrt(Σx² + ε)`.
    pub fn norm(self) -> Result<Var<'t>> {
        if self.value().is_empty() {
            return Err(Error::Domain("norm of an empty vector".into()));
        }
        self.sum_sq()?.add_scalar(NORM_EPS)?.sqrt()
    }

    /// Euclidean norm of every row of a matrix, `sqrt(Σⱼx²ᵢⱼ + ε)`.
    pub fn row_norms(self) -> Result<Var<'t>> {
        if self.cols() == 0 {
            return Err(Error::Domain("norm of an empty vector".into()));
        }
        self.square()?.sum_cols()?.add_scalar(NORM_EPS)?.sqrt()
    }
}

/// `df(z)·u`: records `f(z)` and then its taped tangent.
pub fn jvp<'t, F>(f: F, z: Var<'t>, u: Var<'t>) -> Result<Var<'t>>
where
    F: FnOnce(Var<'t>) -> Result<Var<'t>>,
{
    if u.shape() != z.shape() {
        return Err(Error::shape(format!(
            "jvp: direction shape {:?} differs from point shape {:?}",
            u.shape(),
            z.shape()
        )));
    }
    let y = f(z)?;
    z.tape.jvp_at(y, z, u)
}

/// `uᵀ·dg(x)`: records `g(x)` and then its taped cotangent.
pub fn vjp<'t, F>(g: F, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>>
where
    F: FnOnce(Var<'t>) -> Result<Var<'t>>,
{
    let y = g(x)?;
    x.tape.vjp_at(y, x, u)
}

/// Dense Jacobian of a vector function at `point`, assembled column by column
/// from JVPs with basis tangents. Rows index outputs, columns inputs.
pub fn explicit_jacobian<F>(f: F, point: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let d = point.len();
    if d > MAX_JACOBIAN_INPUT_DIM {
        return Err(Error::contract(format!(
            "explicit_jacobian is limited to {MAX_JACOBIAN_INPUT_DIM} inputs, got {d}"
        )));
    }
    let tape = Tape::new();
    let z = tape.constant(Tensor::vector(point.data().to_vec()));
    let y = f(z)?;
    let out_dim = y.value().len();
    let mut jac = Tensor::zeros(&[out_dim, d]);
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        let col = tape.jvp_at(y, z, tape.constant(Tensor::vector(e)))?;
        let col = col.value();
        for i in 0..out_dim {
            jac.data_mut()[i * d + k] = col.data()[i];
        }
    }
    Ok(jac)
}
