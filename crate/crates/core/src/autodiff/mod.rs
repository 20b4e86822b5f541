//! Minimal reverse-mode differentiation over dense arrays.
//!
//! A `Tape` records every operation in execution order; `backward` walks the
//! record once in reverse and accumulates adjoints. The operator set is
//! exactly what the networks need: grouped 1D convolution, leaky ReLU,
//! elementwise add, scalar multiply, reductions, channel concatenation,
//! L1 and logit-BCE losses, seeded additive noise, and two layout helpers
//! (row repetition for kernel sharing, reshape).
//!
//! Tapes are single-owner; distinct tapes may run on distinct threads.

mod gradcheck;
mod scalar;
mod tensor;

#[cfg(test)]
mod tests;

pub use gradcheck::{check_gradients, skip_none, GradCheckReport, DEFAULT_STEP};
pub use scalar::{real, Real};
pub use tensor::Tensor;

use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("backward target is a detached leaf with no recorded history")]
    DetachedLoss,
    #[error("stride {stride} does not divide the padded span {span} evenly")]
    StrideMismatch { stride: usize, span: usize },
    #[error("invalid convolution spec: {0}")]
    BadConvSpec(String),
}

/// Grouped 1D convolution geometry. Padding is symmetric and counted in
/// frames; `kernel` must be odd whenever the caller needs shape
/// preservation with `padding = (kernel - 1) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 spec whose output length equals its input length.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, groups: usize) -> Self {
        debug_assert!(kernel % 2 == 1);
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            groups,
            padding: (kernel - 1) / 2,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return Err(TensorError::BadConvSpec(
                "kernel, stride and groups must be positive".into(),
            ));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(TensorError::BadConvSpec(format!(
                "channels ({} in, {} out) not divisible by groups ({})",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
        ]
    }

    pub fn output_frames(&self, input_frames: usize) -> Result<usize, TensorError> {
        let span = (input_frames + 2 * self.padding)
            .checked_sub(self.kernel)
            .ok_or_else(|| {
                TensorError::ShapeMismatch(format!(
                    "input of {} frames (+2x{} padding) shorter than kernel {}",
                    input_frames, self.padding, self.kernel
                ))
            })?;
        if span % self.stride != 0 {
            return Err(TensorError::StrideMismatch {
                stride: self.stride,
                span,
            });
        }
        Ok(1 + span / self.stride)
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<R> {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    LeakyRelu {
        input: Var,
        slope: R,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: R,
    },
    Mean {
        input: Var,
    },
    Sum {
        input: Var,
    },
    ConcatChannels {
        lhs: Var,
        rhs: Var,
    },
    L1Loss {
        lhs: Var,
        rhs: Var,
    },
    BceWithLogits {
        logits: Var,
        target_real: bool,
    },
    AddNoise {
        input: Var,
    },
    RepeatRows {
        input: Var,
        times: usize,
    },
    Reshape {
        input: Var,
    },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
}

/// Recording of one forward computation.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<R> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, name: &'static str) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a constant or parameter.
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy a value back onto the tape as a fresh constant, cutting the
    /// gradient path to its history.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.leaf(value)
    }

    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var, TensorError> {
        spec.validate()?;
        let x = self.value(input);
        let w = self.value(weight);
        if x.rank() != 2 || x.shape()[0] != spec.in_channels {
            return Err(TensorError::ShapeMismatch(format!(
                "conv1d input shape {:?}, expected [{} x frames]",
                x.shape(),
                spec.in_channels
            )));
        }
        let wshape = spec.weight_shape();
        if w.shape() != wshape {
            return Err(TensorError::ShapeMismatch(format!(
                "conv1d weight shape {:?}, expected {:?}",
                w.shape(),
                wshape
            )));
        }
        if let Some(b) = bias {
            let bt = self.value(b);
            if bt.shape() != [spec.out_channels] {
                return Err(TensorError::ShapeMismatch(format!(
                    "conv1d bias shape {:?}, expected [{}]",
                    bt.shape(),
                    spec.out_channels
                )));
            }
        }
        let t_out = spec.output_frames(x.cols())?;
        let y = conv1d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &spec,
            t_out,
        );
        self.push(
            y,
            Op::Conv1d {
                input,
                weight,
                bias,
                spec,
            },
            "conv1d",
        )
    }

    pub fn leaky_relu(&mut self, input: Var, slope: R) -> Result<Var, TensorError> {
        let y = self
            .value(input)
            .map(|v| if v > R::ZERO { v } else { v * slope });
        self.push(y, Op::LeakyRelu { input, slope }, "leaky_relu")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        self.leaky_relu(input, R::ZERO)
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "add of {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(a.shape(), data).expect("same shape");
        self.push(value, Op::Add { lhs, rhs }, "add")
    }

    pub fn scale(&mut self, input: Var, factor: R) -> Result<Var, TensorError> {
        let y = self.value(input).map(|v| v * factor);
        self.push(y, Op::Scale { input, factor }, "scale")
    }

    pub fn mean(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let n = real::<R>(x.numel() as f64);
        let s: R = x.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean { input }, "mean")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let s: R = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { input }, "sum")
    }

    pub fn concat_channels(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
            return Err(TensorError::ShapeMismatch(format!(
                "concat_channels of {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let shape = [a.rows() + b.rows(), a.cols()];
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        let value = Tensor::from_vec(&shape, data).expect("sized above");
        self.push(value, Op::ConcatChannels { lhs, rhs }, "concat_channels")
    }

    /// Mean absolute difference over all elements.
    pub fn l1_loss(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "l1_loss of {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let n = real::<R>(a.numel() as f64);
        let s: R = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        self.push(Tensor::scalar(s / n), Op::L1Loss { lhs, rhs }, "l1_loss")
    }

    /// Mean binary cross entropy against a constant real/fake target,
    /// computed in softplus form: `softplus(-z)` for real targets,
    /// `softplus(z)` for fake ones.
    pub fn bce_with_logits(&mut self, logits: Var, target_real: bool) -> Result<Var, TensorError> {
        let z = self.value(logits);
        let n = real::<R>(z.numel() as f64);
        let s: R = z
            .data()
            .iter()
            .map(|&v| softplus(if target_real { -v } else { v }))
            .sum();
        self.push(
            Tensor::scalar(s / n),
            Op::BceWithLogits {
                logits,
                target_real,
            },
            "bce_with_logits",
        )
    }

    /// Add zero-mean Gaussian noise drawn from `seed`; the noise is a
    /// constant in backward. Identical seeds give bit-identical noise.
    pub fn gaussian_noise(&mut self, input: Var, std: f64, seed: u64) -> Result<Var, TensorError> {
        debug_assert!(std >= 0.0);
        let x = self.value(input);
        let mut rng = Rng::seed_from(seed);
        let value = if std == 0.0 {
            x.clone()
        } else {
            let noise = rng.gaussian_vec(x.numel(), std);
            let data = x
                .data()
                .iter()
                .zip(&noise)
                .map(|(&v, &e)| v + real::<R>(e))
                .collect();
            Tensor::from_vec(x.shape(), data).expect("same shape")
        };
        self.push(value, Op::AddNoise { input }, "gaussian_noise")
    }

    /// Repeat each row of a rank-2 tensor `times` times consecutively.
    /// Backward sums the adjoints of each repeated group.
    pub fn repeat_rows(&mut self, input: Var, times: usize) -> Result<Var, TensorError> {
        if times == 0 {
            return Err(TensorError::ShapeMismatch("repeat_rows times = 0".into()));
        }
        let x = self.value(input);
        if x.rank() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "repeat_rows input shape {:?}, expected rank 2",
                x.shape()
            )));
        }
        let (r, c) = (x.rows(), x.cols());
        let mut data = Vec::with_capacity(r * times * c);
        for i in 0..r {
            for _ in 0..times {
                data.extend_from_slice(x.row(i));
            }
        }
        let value = Tensor::from_vec(&[r * times, c], data).expect("sized above");
        self.push(value, Op::RepeatRows { input, times }, "repeat_rows")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(input).reshaped(shape)?;
        self.push(value, Op::Reshape { input }, "reshape")
    }

    /// Reverse sweep from a scalar loss. Consumes the tape; every node
    /// reachable from the loss receives its accumulated adjoint.
    pub fn backward(self, loss: Var) -> Result<Gradients<R>, TensorError> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                numel: loss_node.value.numel(),
            });
        }
        if matches!(loss_node.op, Op::Leaf) {
            return Err(TensorError::DetachedLoss);
        }

        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.nodes[loss.0].value.shape(), R::ONE));

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    // Keep leaf adjoints for the caller.
                    grads[idx] = Some(gout);
                }
                Op::Conv1d {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let (gx, gw, gb) = conv1d_backward(
                        &gout,
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        spec,
                    );
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, gb);
                    }
                    grads[idx] = None;
                }
                Op::LeakyRelu { input, slope } => {
                    let x = &self.nodes[input.0].value;
                    let data = x
                        .data()
                        .iter()
                        .zip(gout.data())
                        .map(|(&v, &g)| if v > R::ZERO { g } else { g * *slope })
                        .collect();
                    let gx = Tensor::from_vec(x.shape(), data).expect("same shape");
                    accumulate(&mut grads, *input, gx);
                }
                Op::Add { lhs, rhs } => {
                    accumulate(&mut grads, *lhs, gout.clone());
                    accumulate(&mut grads, *rhs, gout);
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    accumulate(&mut grads, *input, gout.map(|g| g * f));
                }
                Op::Mean { input } => {
                    let shape = self.nodes[input.0].value.shape();
                    let n = real::<R>(self.nodes[input.0].value.numel() as f64);
                    let g = gout.scalar_value() / n;
                    accumulate(&mut grads, *input, Tensor::filled(shape, g));
                }
                Op::Sum { input } => {
                    let shape = self.nodes[input.0].value.shape();
                    let g = gout.scalar_value();
                    accumulate(&mut grads, *input, Tensor::filled(shape, g));
                }
                Op::ConcatChannels { lhs, rhs } => {
                    let a = &self.nodes[lhs.0].value;
                    let b = &self.nodes[rhs.0].value;
                    let split = a.numel();
                    let ga = Tensor::from_vec(a.shape(), gout.data()[..split].to_vec())
                        .expect("split sizes");
                    let gb = Tensor::from_vec(b.shape(), gout.data()[split..].to_vec())
                        .expect("split sizes");
                    accumulate(&mut grads, *lhs, ga);
                    accumulate(&mut grads, *rhs, gb);
                }
                Op::L1Loss { lhs, rhs } => {
                    // Subgradient 0 at ties.
                    let a = &self.nodes[lhs.0].value;
                    let b = &self.nodes[rhs.0].value;
                    let g = gout.scalar_value() / real::<R>(a.numel() as f64);
                    let signs: Vec<R> = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&x, &y)| {
                            if x > y {
                                g
                            } else if x < y {
                                -g
                            } else {
                                R::ZERO
                            }
                        })
                        .collect();
                    let ga = Tensor::from_vec(a.shape(), signs.clone()).expect("same shape");
                    let gb = Tensor::from_vec(b.shape(), signs.into_iter().map(|v| -v).collect())
                        .expect("same shape");
                    accumulate(&mut grads, *lhs, ga);
                    accumulate(&mut grads, *rhs, gb);
                }
                Op::BceWithLogits {
                    logits,
                    target_real,
                } => {
                    let z = &self.nodes[logits.0].value;
                    let g = gout.scalar_value() / real::<R>(z.numel() as f64);
                    let data = z
                        .data()
                        .iter()
                        .map(|&v| {
                            let s = sigmoid(v);
                            if *target_real {
                                (s - R::ONE) * g
                            } else {
                                s * g
                            }
                        })
                        .collect();
                    let gz = Tensor::from_vec(z.shape(), data).expect("same shape");
                    accumulate(&mut grads, *logits, gz);
                }
                Op::AddNoise { input } => {
                    accumulate(&mut grads, *input, gout);
                }
                Op::RepeatRows { input, times } => {
                    let x = &self.nodes[input.0].value;
                    let (r, c) = (x.rows(), x.cols());
                    let mut gx = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        for j in 0..*times {
                            let src = gout.row(i * times + j).to_vec();
                            for (d, s) in gx.row_mut(i).iter_mut().zip(&src) {
                                *d += *s;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::Reshape { input } => {
                    let shape = self.nodes[input.0].value.shape().to_vec();
                    let gx = gout.reshaped(&shape).expect("same numel");
                    accumulate(&mut grads, *input, gx);
                }
            }
        }

        Ok(Gradients { grads })
    }
}

/// Adjoints produced by one backward sweep, addressed by `Var`.
#[derive(Debug)]
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<R>> {
        self.grads[var.0].take()
    }
}

fn accumulate<R: Real>(grads: &mut [Option<Tensor<R>>], var: Var, delta: Tensor<R>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (d, s) in existing.data_mut().iter_mut().zip(delta.data()) {
                *d += *s;
            }
        }
        slot => *slot = Some(delta),
    }
}

#[inline]
fn softplus<R: Real>(t: R) -> R {
    // max(t, 0) + ln(1 + exp(-|t|)); never overflows.
    t.maximum(R::ZERO) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<R: Real>(z: R) -> R {
    if z >= R::ZERO {
        R::ONE / (R::ONE + (-z).exp())
    } else {
        let e = z.exp();
        e / (R::ONE + e)
    }
}

/// Dot product with eight explicit accumulators. The reassociation is
/// fixed in code, so results stay reproducible run to run while the lanes
/// vectorize.
fn dot_lanes<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [R::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (xa, xb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = R::ZERO;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let folded = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    folded + tail
}

fn sum_lanes<R: Real>(a: &[R]) -> R {
    let mut acc = [R::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let xa = &a[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l];
        }
    }
    let mut tail = R::ZERO;
    for i in chunks * 8..a.len() {
        tail += a[i];
    }
    let folded = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    folded + tail
}

/// Input rows copied into a zero-padded buffer, so every kernel tap reads
/// in bounds and the hot loops stay branch-free.
fn pad_rows<R: Real>(x: &Tensor<R>, pad: usize) -> (Vec<R>, usize) {
    let (c, t) = (x.rows(), x.cols());
    let width = t + 2 * pad;
    let mut out = vec![R::ZERO; c * width];
    for ci in 0..c {
        out[ci * width + pad..ci * width + pad + t].copy_from_slice(x.row(ci));
    }
    (out, width)
}

const CONV_CHUNK: usize = 32;

fn conv1d_forward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    bias: Option<&Tensor<R>>,
    spec: &ConvSpec,
    t_out: usize,
) -> Tensor<R> {
    let t_in = x.cols();
    let k = spec.kernel;
    let pad = spec.padding;
    let ci_per_g = spec.in_channels / spec.groups;
    let co_per_g = spec.out_channels / spec.groups;
    let mut y = Tensor::zeros(&[spec.out_channels, t_out]);

    if spec.stride == 1 {
        let (xpad, width) = pad_rows(x, pad);
        let mut acc = [R::ZERO; CONV_CHUNK];
        for co in 0..spec.out_channels {
            let g = co / co_per_g;
            let bv = bias.map_or(R::ZERO, |b| b.data()[co]);
            let yrow = y.row_mut(co);
            let mut t0 = 0;
            while t0 < t_out {
                let lanes = CONV_CHUNK.min(t_out - t0);
                let chunk = &mut acc[..lanes];
                chunk.fill(bv);
                for ci_local in 0..ci_per_g {
                    let ci = g * ci_per_g + ci_local;
                    let xrow = &xpad[ci * width..(ci + 1) * width];
                    let wrow = &w.data()[(co * ci_per_g + ci_local) * k..][..k];
                    for (dk, &wv) in wrow.iter().enumerate() {
                        let xs = &xrow[t0 + dk..t0 + dk + lanes];
                        for (a, &xv) in chunk.iter_mut().zip(xs) {
                            *a += wv * xv;
                        }
                    }
                }
                yrow[t0..t0 + lanes].copy_from_slice(chunk);
                t0 += lanes;
            }
        }
        return y;
    }

    for co in 0..spec.out_channels {
        let g = co / co_per_g;
        if let Some(b) = bias {
            let bv = b.data()[co];
            for v in y.row_mut(co) {
                *v = bv;
            }
        }
        for ci_local in 0..ci_per_g {
            let ci = g * ci_per_g + ci_local;
            let xrow = x.row(ci);
            let wbase = (co * ci_per_g + ci_local) * k;
            let wrow = &w.data()[wbase..wbase + k];
            let yrow = y.row_mut(co);
            for (t, yv) in yrow.iter_mut().enumerate() {
                let base = t * spec.stride;
                let mut acc = R::ZERO;
                for (dk, &wv) in wrow.iter().enumerate() {
                    let s = base + dk;
                    if s >= pad && s - pad < t_in {
                        acc += wv * xrow[s - pad];
                    }
                }
                *yv += acc;
            }
        }
    }
    y
}

fn conv1d_backward<R: Real>(
    gout: &Tensor<R>,
    x: &Tensor<R>,
    w: &Tensor<R>,
    spec: &ConvSpec,
) -> (Tensor<R>, Tensor<R>, Tensor<R>) {
    let t_in = x.cols();
    let t_out = gout.cols();
    let k = spec.kernel;
    let pad = spec.padding;
    let ci_per_g = spec.in_channels / spec.groups;
    let co_per_g = spec.out_channels / spec.groups;

    let mut gx = Tensor::zeros(&[spec.in_channels, t_in]);
    let mut gw = Tensor::zeros(&spec.weight_shape());
    let mut gb = Tensor::zeros(&[spec.out_channels]);

    if spec.stride == 1 {
        let (xpad, width) = pad_rows(x, pad);
        // adjoint of the padded input; pad cells are discarded afterwards
        let mut gxpad = vec![R::ZERO; spec.in_channels * width];
        for co in 0..spec.out_channels {
            let g = co / co_per_g;
            let gy = gout.row(co);
            gb.data_mut()[co] = sum_lanes(gy);
            for ci_local in 0..ci_per_g {
                let ci = g * ci_per_g + ci_local;
                let xrow = &xpad[ci * width..(ci + 1) * width];
                let gxrow = &mut gxpad[ci * width..(ci + 1) * width];
                let wbase = (co * ci_per_g + ci_local) * k;
                for dk in 0..k {
                    let wv = w.data()[wbase + dk];
                    gw.data_mut()[wbase + dk] += dot_lanes(gy, &xrow[dk..dk + t_out]);
                    let gs = &mut gxrow[dk..dk + t_out];
                    for (gxv, &gv) in gs.iter_mut().zip(gy) {
                        *gxv += wv * gv;
                    }
                }
            }
        }
        for ci in 0..spec.in_channels {
            gx.row_mut(ci)
                .copy_from_slice(&gxpad[ci * width + pad..ci * width + pad + t_in]);
        }
        return (gx, gw, gb);
    }

    for co in 0..spec.out_channels {
        let g = co / co_per_g;
        let gy = gout.row(co);
        gb.data_mut()[co] = gy.iter().copied().sum();
        for ci_local in 0..ci_per_g {
            let ci = g * ci_per_g + ci_local;
            let wbase = (co * ci_per_g + ci_local) * k;
            let xrow = x.row(ci);
            for (t, &gv) in gy.iter().enumerate() {
                let base = t * spec.stride;
                for dk in 0..k {
                    let s = base + dk;
                    if s >= pad && s - pad < t_in {
                        gw.data_mut()[wbase + dk] += gv * xrow[s - pad];
                        gx.row_mut(ci)[s - pad] += w.data()[wbase + dk] * gv;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}
