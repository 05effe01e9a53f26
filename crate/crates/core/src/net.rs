//! Feed-forward networks over the tape: architecture, flat parameter vectors,
//! forward/backward passes, masked SGD and the unrolled meta-gradient.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// Inner-loop unroll depth accepted by [`meta_grad`] unless overridden.
pub const DEFAULT_UNROLL_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    RectifiedLinear,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadActivation {
    Identity,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub name: String,
    pub output_dim: usize,
    pub activation: HeadActivation,
}

/// Torso layer sizes (input first) plus the readout heads attached to the last
/// torso layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub heads: Vec<Head>,
}

impl NetworkArch {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, heads: Vec<Head>) -> Result<Self> {
        let arch = Self {
            layer_sizes,
            activation,
            heads,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// 1 -> 40 -> 40 -> 1 rectified-linear regressor.
    pub fn sine_regressor() -> Self {
        Self {
            layer_sizes: vec![1, 40, 40],
            activation: Activation::RectifiedLinear,
            heads: vec![Head {
                name: "out".into(),
                output_dim: 1,
                activation: HeadActivation::Identity,
            }],
        }
    }

    /// Shared 2x100 rectified-linear torso with a softmax policy and a scalar value.
    pub fn actor_critic(obs_dim: usize, n_actions: usize) -> Self {
        Self {
            layer_sizes: vec![obs_dim, 100, 100],
            activation: Activation::RectifiedLinear,
            heads: vec![
                Head {
                    name: "policy".into(),
                    output_dim: n_actions,
                    activation: HeadActivation::Softmax,
                },
                Head {
                    name: "value".into(),
                    output_dim: 1,
                    activation: HeadActivation::Identity,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() {
            return Err(contract("network needs at least one layer"));
        }
        if let Some(i) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(contract(format!("layer {i} has zero width")));
        }
        for h in &self.heads {
            if h.output_dim == 0 {
                return Err(contract(format!("head `{}` has zero outputs", h.name)));
            }
            if h.activation == HeadActivation::Softmax && h.output_dim < 2 {
                return Err(contract(format!(
                    "softmax head `{}` needs at least two outputs",
                    h.name
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn torso_width(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn layout(&self) -> Layout {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |owner, kind, rows, cols| {
            segments.push(Segment {
                owner,
                kind,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            push(Owner::Torso(l), BlockKind::Weight, w[0], w[1]);
            push(Owner::Torso(l), BlockKind::Bias, 1, w[1]);
        }
        let width = self.torso_width();
        for (h, head) in self.heads.iter().enumerate() {
            push(Owner::Head(h), BlockKind::Weight, width, head.output_dim);
            push(Owner::Head(h), BlockKind::Bias, 1, head.output_dim);
        }
        Layout { segments }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Torso(usize),
    Head(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Weight,
    Bias,
}

/// One contiguous block of a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub owner: Owner,
    pub kind: BlockKind,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

/// Disjoint blocks covering `[0, len)`, in torso-then-heads order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<Segment>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.range().end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameters plus the layout that gives them meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(arch: &NetworkArch) -> Self {
        let layout = arch.layout();
        Self {
            values: vec![0.0; layout.len()],
            layout: Arc::new(layout),
        }
    }

    pub fn from_values(arch: &NetworkArch, values: Vec<f64>) -> Result<Self> {
        let layout = arch.layout();
        if values.len() != layout.len() {
            return Err(Error::Shape {
                location: "parameter vector".into(),
                expected: format!("{} parameters", layout.len()),
                actual: format!("{} parameters", values.len()),
            });
        }
        Ok(Self {
            values,
            layout: Arc::new(layout),
        })
    }

    /// Every weight and bias drawn from `N(0, std)`.
    pub fn gaussian<R: Rng + ?Sized>(arch: &NetworkArch, std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut p.values {
                *v = normal.sample(rng);
            }
        }
        p
    }

    /// Weights from `N(0, 2 / fan_in)`, biases zero.
    pub fn he_normal<R: Rng + ?Sized>(arch: &NetworkArch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let layout = Arc::clone(&p.layout);
        for seg in &layout.segments {
            if seg.kind == BlockKind::Weight {
                let normal =
                    Normal::new(0.0, (2.0 / seg.rows as f64).sqrt()).expect("positive std");
                for v in &mut p.values[seg.range()] {
                    *v = normal.sample(rng);
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn block(&self, seg: &Segment) -> Matrix {
        Matrix::new(seg.rows, seg.cols, self.values[seg.range()].to_vec()).expect("segment shape")
    }

    fn check_arch(&self, arch: &NetworkArch) -> Result<()> {
        let expected = arch.param_count();
        if self.values.len() != expected || *self.layout != arch.layout() {
            return Err(Error::Shape {
                location: "parameter vector".into(),
                expected: format!("{expected} parameters in the architecture's layout"),
                actual: format!("{} parameters", self.values.len()),
            });
        }
        Ok(())
    }
}

/// Per-coordinate learnability gate; `false` freezes a parameter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask(pub Vec<bool>);

impl Mask {
    pub fn all(len: usize, learnable: bool) -> Self {
        Self(vec![learnable; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parameter blocks bound as tape nodes, one per layout segment.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
    pub layout: Arc<Layout>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ParamVector) -> Self {
        let vars = params
            .layout
            .segments
            .iter()
            .map(|seg| tape.leaf(params.block(seg)))
            .collect();
        Self {
            vars,
            layout: Arc::clone(&params.layout),
        }
    }

    /// Reads the current values of the bound blocks back into a flat vector.
    pub fn collect(&self, tape: &Tape, grads: &[Var]) -> ParamVector {
        let mut values = vec![0.0; self.layout.len()];
        for (seg, g) in self.layout.segments.iter().zip(grads) {
            values[seg.range()].copy_from_slice(tape.value(*g).data());
        }
        ParamVector {
            values,
            layout: Arc::clone(&self.layout),
        }
    }
}

/// Pre- and post-activation nodes of one readout head.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub pre: Var,
    pub out: Var,
}

/// Records the network on `tape` for a batch `x` of shape `batch x input_dim`.
pub fn forward_on(
    tape: &mut Tape,
    arch: &NetworkArch,
    params: &BoundParams,
    x: Var,
) -> Result<Vec<HeadVars>> {
    let (_, in_dim) = tape.value(x).shape();
    if in_dim != arch.input_dim() {
        return Err(Error::Shape {
            location: "layer 0 (input)".into(),
            expected: format!("{} features", arch.input_dim()),
            actual: format!("{in_dim} features"),
        });
    }
    if params.layout.len() != arch.param_count() {
        return Err(Error::Shape {
            location: "parameter vector".into(),
            expected: format!("{} parameters", arch.param_count()),
            actual: format!("{} parameters", params.layout.len()),
        });
    }
    let mut h = x;
    let n_torso = arch.layer_sizes.len() - 1;
    for l in 0..n_torso {
        let w = params.vars[2 * l];
        let b = params.vars[2 * l + 1];
        let z = tape
            .matmul(h, w, false, false)
            .map_err(|e| locate(e, &format!("torso layer {}", l + 1)))?;
        let z = tape.add_row(z, b)?;
        h = match arch.activation {
            Activation::RectifiedLinear => tape.relu(z),
            Activation::Identity => z,
        };
    }
    let mut out = Vec::with_capacity(arch.heads.len());
    for (i, head) in arch.heads.iter().enumerate() {
        let w = params.vars[2 * n_torso + 2 * i];
        let b = params.vars[2 * n_torso + 2 * i + 1];
        let z = tape
            .matmul(h, w, false, false)
            .map_err(|e| locate(e, &format!("head `{}`", head.name)))?;
        let pre = tape.add_row(z, b)?;
        let post = match head.activation {
            HeadActivation::Identity => pre,
            HeadActivation::Softmax => {
                let ls = tape.log_softmax(pre);
                tape.exp(ls)
            }
        };
        out.push(HeadVars { pre, out: post });
    }
    Ok(out)
}

fn locate(e: Error, at: &str) -> Error {
    match e {
        Error::Shape {
            expected, actual, ..
        } => Error::Shape {
            location: at.into(),
            expected,
            actual,
        },
        other => other,
    }
}

/// A recorded forward pass: the tape, where the parameters live on it, and the
/// head outputs.
#[derive(Clone, Debug)]
pub struct Recording {
    pub tape: Tape,
    pub params: BoundParams,
    pub input: Var,
    pub heads: Vec<HeadVars>,
}

impl Recording {
    pub fn head_values(&self) -> Vec<Vec<f64>> {
        self.heads
            .iter()
            .map(|h| self.tape.value(h.out).data().to_vec())
            .collect()
    }
}

/// Forward pass on a single input vector, returning per-head outputs and the tape.
pub fn forward(
    arch: &NetworkArch,
    params: &ParamVector,
    input: &[f64],
) -> Result<(Vec<Vec<f64>>, Recording)> {
    let rec = forward_batch(arch, params, &Matrix::row(input))?;
    Ok((rec.head_values(), rec))
}

/// Forward pass on a `batch x input_dim` matrix.
pub fn forward_batch(
    arch: &NetworkArch,
    params: &ParamVector,
    inputs: &Matrix,
) -> Result<Recording> {
    arch.validate()?;
    params.check_arch(arch)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let x = tape.leaf(inputs.clone());
    let heads = forward_on(&mut tape, arch, &bound, x)?;
    Ok(Recording {
        tape,
        params: bound,
        input: x,
        heads,
    })
}

/// Gradient of the scalar `loss` node with respect to the recorded parameters.
pub fn backward(rec: &mut Recording, loss: Var) -> Result<ParamVector> {
    let grads = rec.tape.grad(loss, &rec.params.vars)?;
    Ok(rec.params.collect(&rec.tape, &grads))
}

/// Mean squared error between a `batch x 1` prediction node and targets.
pub fn mse_on(tape: &mut Tape, pred: Var, targets: &[f64]) -> Result<Var> {
    let y = tape.leaf(Matrix::column(targets));
    let diff = tape.sub(pred, y)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean_all(sq))
}

/// `params - lr * grad`, leaving coordinates with a `false` mask bit untouched.
pub fn sgd_step(
    params: &ParamVector,
    grad: &ParamVector,
    lr: f64,
    mask: Option<&Mask>,
) -> Result<ParamVector> {
    if grad.len() != params.len() || grad.layout != params.layout {
        return Err(Error::Shape {
            location: "sgd step".into(),
            expected: format!("gradient with {} parameters", params.len()),
            actual: format!("{} values", grad.len()),
        });
    }
    if let Some(m) = mask {
        if m.len() != params.len() {
            return Err(Error::Shape {
                location: "plasticity mask".into(),
                expected: format!("{} bits", params.len()),
                actual: format!("{} bits", m.len()),
            });
        }
    }
    if let Some(index) = grad.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let values = params
        .values
        .iter()
        .zip(&grad.values)
        .enumerate()
        .map(|(i, (&p, &g))| match mask {
            Some(m) if !m.0[i] => p,
            _ => p - lr * g,
        })
        .collect();
    Ok(params.with_values(values))
}

/// K-shot regression data for one task: train split drives the inner steps,
/// validation split scores the adapted parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSplit {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub val_x: Vec<f64>,
    pub val_y: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unroll {
    pub alpha: f64,
    pub n_inner: usize,
    pub limit: usize,
}

impl Unroll {
    pub fn new(alpha: f64, n_inner: usize) -> Self {
        Self {
            alpha,
            n_inner,
            limit: DEFAULT_UNROLL_LIMIT,
        }
    }
}

/// Validation loss of one task after `unroll.n_inner` differentiable SGD steps,
/// recorded on `tape` starting from `params`.
pub fn adapted_loss_on(
    tape: &mut Tape,
    arch: &NetworkArch,
    params: &BoundParams,
    split: &RegressionSplit,
    unroll: Unroll,
) -> Result<Var> {
    let train_x = tape.leaf(Matrix::column(&split.train_x));
    let mut current = params.clone();
    for _ in 0..unroll.n_inner {
        let heads = forward_on(tape, arch, &current, train_x)?;
        let loss = mse_on(tape, heads[0].out, &split.train_y)?;
        let grads = tape.grad(loss, &current.vars)?;
        let mut next = Vec::with_capacity(grads.len());
        for (p, g) in current.vars.iter().zip(grads) {
            let step = tape.scale(g, unroll.alpha);
            next.push(tape.sub(*p, step)?);
        }
        current = BoundParams {
            vars: next,
            layout: Arc::clone(&current.layout),
        };
    }
    let val_x = tape.leaf(Matrix::column(&split.val_x));
    let heads = forward_on(tape, arch, &current, val_x)?;
    mse_on(tape, heads[0].out, &split.val_y)
}

/// Derivative of the mean adapted validation loss with respect to the initial
/// parameters, differentiating through every inner update.
pub fn meta_grad(
    arch: &NetworkArch,
    params: &ParamVector,
    tasks: &[RegressionSplit],
    unroll: Unroll,
) -> Result<ParamVector> {
    if unroll.n_inner == 0 {
        return Err(contract("meta-gradient needs at least one inner step"));
    }
    if unroll.n_inner > unroll.limit {
        return Err(contract(format!(
            "{} inner steps exceed the unroll limit of {}",
            unroll.n_inner, unroll.limit
        )));
    }
    if tasks.is_empty() {
        return Err(contract("meta-gradient needs at least one task"));
    }
    params.check_arch(arch)?;
    let mut total = vec![0.0; params.len()];
    for split in tasks {
        let g = task_meta_grad(arch, params, split, unroll)?;
        for (t, v) in total.iter_mut().zip(&g.values) {
            *t += v;
        }
    }
    let n = tasks.len() as f64;
    Ok(params.with_values(total.into_iter().map(|v| v / n).collect()))
}

fn task_meta_grad(
    arch: &NetworkArch,
    params: &ParamVector,
    split: &RegressionSplit,
    unroll: Unroll,
) -> Result<ParamVector> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let loss = adapted_loss_on(&mut tape, arch, &bound, split, unroll)?;
    let grads = tape.grad(loss, &bound.vars)?;
    Ok(bound.collect(&tape, &grads))
}

/// Tape-free evaluation used on hot paths (acting in an environment). Agrees
/// with [`forward`] to rounding.
pub fn infer(arch: &NetworkArch, params: &ParamVector, input: &[f64]) -> Vec<Vec<f64>> {
    let mut buf = InferBuffers::default();
    infer_into(arch, params, input, &mut buf);
    buf.heads
}

/// Scratch space for [`infer_into`], reused across calls.
#[derive(Clone, Debug, Default)]
pub struct InferBuffers {
    a: Vec<f64>,
    b: Vec<f64>,
    pub heads: Vec<Vec<f64>>,
}

pub fn infer_into(arch: &NetworkArch, params: &ParamVector, input: &[f64], buf: &mut InferBuffers) {
    let segs = &params.layout.segments;
    let v = &params.values;
    buf.a.clear();
    buf.a.extend_from_slice(input);
    let n_torso = arch.layer_sizes.len() - 1;
    for l in 0..n_torso {
        let (w, b) = (&segs[2 * l], &segs[2 * l + 1]);
        dense(&buf.a, &v[w.range()], &v[b.range()], w.cols, &mut buf.b);
        if arch.activation == Activation::RectifiedLinear {
            for x in &mut buf.b {
                if *x <= 0.0 {
                    *x = 0.0;
                }
            }
        }
        std::mem::swap(&mut buf.a, &mut buf.b);
    }
    buf.heads.resize(arch.heads.len(), Vec::new());
    for (i, head) in arch.heads.iter().enumerate() {
        let (w, b) = (&segs[2 * n_torso + 2 * i], &segs[2 * n_torso + 2 * i + 1]);
        let out = &mut buf.heads[i];
        dense(&buf.a, &v[w.range()], &v[b.range()], w.cols, out);
        if head.activation == HeadActivation::Softmax {
            softmax_in_place(out);
        }
    }
}

fn dense(x: &[f64], w: &[f64], b: &[f64], cols: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(b);
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}
