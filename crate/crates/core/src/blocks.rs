//! Residual building blocks.
//!
//! The axial block splits its work into a long temporal convolution applied
//! per frequency band (depthwise, optionally with kernels shared across
//! channel groups) followed by a frequency-axis convolution that mixes all
//! channels at each time step. The conventional block is the two-conv
//! residual unit used by the discriminator. Everything here is
//! shape-preserving: stride 1, odd kernels, symmetric padding.

use crate::autodiff::{ConvSpec, Real, Tape, Tensor, TensorError, Var};
use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("kernel sizes must be odd for shape preservation, got {0}")]
    EvenKernel(usize),
    #[error("channels {channels} not divisible by lightweight share {share}")]
    ShareMismatch { channels: usize, share: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemporalMode {
    Depthwise,
    Lightweight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualMode {
    /// One skip connection around the whole block.
    Once,
    /// Skips around each of the two convolutions.
    Twice,
}

#[derive(Clone, Debug)]
pub struct AxialBlockConfig {
    pub channels: usize,
    pub temporal_kernel: usize,
    pub temporal_mode: TemporalMode,
    /// Channels sharing one kernel in lightweight mode.
    pub lightweight_share: usize,
    pub freq_kernel: usize,
    pub activation_slope: f64,
    pub residual_mode: ResidualMode,
}

impl AxialBlockConfig {
    pub fn new(channels: usize) -> Self {
        AxialBlockConfig {
            channels,
            temporal_kernel: 17,
            temporal_mode: TemporalMode::Depthwise,
            lightweight_share: 1,
            freq_kernel: 3,
            activation_slope: 0.01,
            residual_mode: ResidualMode::Once,
        }
    }

    pub fn validate(&self) -> Result<(), BlockError> {
        if self.temporal_kernel.is_multiple_of(2) {
            return Err(BlockError::EvenKernel(self.temporal_kernel));
        }
        if self.freq_kernel.is_multiple_of(2) {
            return Err(BlockError::EvenKernel(self.freq_kernel));
        }
        if self.temporal_mode == TemporalMode::Lightweight
            && !self.channels.is_multiple_of(self.lightweight_share)
        {
            return Err(BlockError::ShareMismatch {
                channels: self.channels,
                share: self.lightweight_share,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ConvBlockConfig {
    pub channels: usize,
    pub kernel: usize,
    pub activation_slope: f64,
}

impl ConvBlockConfig {
    pub fn new(channels: usize) -> Self {
        ConvBlockConfig {
            channels,
            kernel: 5,
            activation_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), BlockError> {
        if self.kernel.is_multiple_of(2) {
            return Err(BlockError::EvenKernel(self.kernel));
        }
        Ok(())
    }
}

/// Weight/bias pair of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<R> {
    pub weight: Tensor<R>,
    pub bias: Tensor<R>,
}

impl<R: Real> ConvParams<R> {
    /// Uniform init in +-sqrt(1/fan_in), fan_in = in_channels_per_group * kernel.
    pub fn init(out_channels: usize, in_per_group: usize, kernel: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / (in_per_group * kernel) as f64).sqrt();
        ConvParams {
            weight: Tensor::from_fn(&[out_channels, in_per_group, kernel], |_| {
                R::from_f64(rng.uniform(-bound, bound))
            }),
            bias: Tensor::from_fn(&[out_channels], |_| R::from_f64(rng.uniform(-bound, bound))),
        }
    }

    pub fn zeros(out_channels: usize, in_per_group: usize, kernel: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(&[out_channels, in_per_group, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TemporalParams<R> {
    Depthwise(ConvParams<R>),
    Lightweight {
        /// One kernel row per channel group: `[channels / share, kernel]`.
        kernels: Tensor<R>,
        bias: Tensor<R>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxialBlockParams<R> {
    pub temporal: TemporalParams<R>,
    pub freq: ConvParams<R>,
}

impl<R: Real> AxialBlockParams<R> {
    pub fn init(cfg: &AxialBlockConfig, rng: &mut Rng) -> Self {
        let c = cfg.channels;
        let temporal = match cfg.temporal_mode {
            TemporalMode::Depthwise => {
                TemporalParams::Depthwise(ConvParams::init(c, 1, cfg.temporal_kernel, rng))
            }
            TemporalMode::Lightweight => {
                let bound = (1.0 / cfg.temporal_kernel as f64).sqrt();
                TemporalParams::Lightweight {
                    kernels: Tensor::from_fn(
                        &[c / cfg.lightweight_share, cfg.temporal_kernel],
                        |_| R::from_f64(rng.uniform(-bound, bound)),
                    ),
                    bias: Tensor::from_fn(&[c], |_| R::from_f64(rng.uniform(-bound, bound))),
                }
            }
        };
        AxialBlockParams {
            temporal,
            freq: ConvParams::init(c, c, cfg.freq_kernel, rng),
        }
    }

    pub fn zeros(cfg: &AxialBlockConfig) -> Self {
        let c = cfg.channels;
        let temporal = match cfg.temporal_mode {
            TemporalMode::Depthwise => {
                TemporalParams::Depthwise(ConvParams::zeros(c, 1, cfg.temporal_kernel))
            }
            TemporalMode::Lightweight => TemporalParams::Lightweight {
                kernels: Tensor::zeros(&[c / cfg.lightweight_share, cfg.temporal_kernel]),
                bias: Tensor::zeros(&[c]),
            },
        };
        AxialBlockParams {
            temporal,
            freq: ConvParams::zeros(c, c, cfg.freq_kernel),
        }
    }

    pub fn for_each<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<R>)) {
        match &self.temporal {
            TemporalParams::Depthwise(p) => {
                f(format!("{prefix}.temporal.weight"), &p.weight);
                f(format!("{prefix}.temporal.bias"), &p.bias);
            }
            TemporalParams::Lightweight { kernels, bias } => {
                f(format!("{prefix}.temporal.kernels"), kernels);
                f(format!("{prefix}.temporal.bias"), bias);
            }
        }
        f(format!("{prefix}.freq.weight"), &self.freq.weight);
        f(format!("{prefix}.freq.bias"), &self.freq.bias);
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<R>)) {
        match &mut self.temporal {
            TemporalParams::Depthwise(p) => {
                f(format!("{prefix}.temporal.weight"), &mut p.weight);
                f(format!("{prefix}.temporal.bias"), &mut p.bias);
            }
            TemporalParams::Lightweight { kernels, bias } => {
                f(format!("{prefix}.temporal.kernels"), kernels);
                f(format!("{prefix}.temporal.bias"), bias);
            }
        }
        f(format!("{prefix}.freq.weight"), &mut self.freq.weight);
        f(format!("{prefix}.freq.bias"), &mut self.freq.bias);
    }

    pub fn bind(&self, tape: &mut Tape<R>) -> BoundAxialBlock {
        let temporal = match &self.temporal {
            TemporalParams::Depthwise(p) => BoundTemporal::Depthwise {
                weight: tape.leaf(p.weight.clone()),
                bias: tape.leaf(p.bias.clone()),
            },
            TemporalParams::Lightweight { kernels, bias } => BoundTemporal::Lightweight {
                kernels: tape.leaf(kernels.clone()),
                bias: tape.leaf(bias.clone()),
            },
        };
        BoundAxialBlock {
            temporal,
            freq_weight: tape.leaf(self.freq.weight.clone()),
            freq_bias: tape.leaf(self.freq.bias.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlockParams<R> {
    pub conv1: ConvParams<R>,
    pub conv2: ConvParams<R>,
}

impl<R: Real> ConvBlockParams<R> {
    pub fn init(cfg: &ConvBlockConfig, rng: &mut Rng) -> Self {
        ConvBlockParams {
            conv1: ConvParams::init(cfg.channels, cfg.channels, cfg.kernel, rng),
            conv2: ConvParams::init(cfg.channels, cfg.channels, cfg.kernel, rng),
        }
    }

    pub fn zeros(cfg: &ConvBlockConfig) -> Self {
        ConvBlockParams {
            conv1: ConvParams::zeros(cfg.channels, cfg.channels, cfg.kernel),
            conv2: ConvParams::zeros(cfg.channels, cfg.channels, cfg.kernel),
        }
    }
}

/// Tape handles of one bound axial block.
#[derive(Clone, Copy, Debug)]
pub enum BoundTemporal {
    Depthwise { weight: Var, bias: Var },
    Lightweight { kernels: Var, bias: Var },
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAxialBlock {
    pub temporal: BoundTemporal,
    pub freq_weight: Var,
    pub freq_bias: Var,
}

/// Convolve channel `c` with kernel `floor(c / share)`: kernel sharing
/// reduces the parameter count from `kernel * channels` to
/// `kernel * channels / share`.
pub fn lightweight_temporal_conv<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    kernels: Var,
    bias: Option<Var>,
    cfg: &AxialBlockConfig,
) -> Result<Var, TensorError> {
    let c = cfg.channels;
    let share = cfg.lightweight_share;
    if !c.is_multiple_of(share) {
        return Err(TensorError::ShapeMismatch(format!(
            "channels {c} not divisible by share {share}"
        )));
    }
    let expanded = tape.repeat_rows(kernels, share)?;
    let weight = tape.reshape(expanded, &[c, 1, cfg.temporal_kernel])?;
    tape.conv1d(x, weight, bias, ConvSpec::same(c, c, cfg.temporal_kernel, c))
}

fn temporal_conv<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    block: &BoundAxialBlock,
    cfg: &AxialBlockConfig,
) -> Result<Var, TensorError> {
    match block.temporal {
        BoundTemporal::Depthwise { weight, bias } => {
            let c = cfg.channels;
            tape.conv1d(
                x,
                weight,
                Some(bias),
                ConvSpec::same(c, c, cfg.temporal_kernel, c),
            )
        }
        BoundTemporal::Lightweight { kernels, bias } => {
            lightweight_temporal_conv(tape, x, kernels, Some(bias), cfg)
        }
    }
}

/// Axial residual block: temporal convolution per frequency band, leaky
/// ReLU, channel-mixing frequency convolution, plus the skip(s). Output
/// shape equals input shape for any frame count.
pub fn axial_block_forward<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    block: &BoundAxialBlock,
    cfg: &AxialBlockConfig,
) -> Result<Var, TensorError> {
    let c = cfg.channels;
    let slope = R::from_f64(cfg.activation_slope);
    let freq_spec = ConvSpec::same(c, c, cfg.freq_kernel, 1);
    match cfg.residual_mode {
        ResidualMode::Once => {
            let h = temporal_conv(tape, x, block, cfg)?;
            let a = tape.leaky_relu(h, slope)?;
            let f = tape.conv1d(a, block.freq_weight, Some(block.freq_bias), freq_spec)?;
            tape.add(x, f)
        }
        ResidualMode::Twice => {
            let h = temporal_conv(tape, x, block, cfg)?;
            let x1 = tape.add(x, h)?;
            let a = tape.leaky_relu(x1, slope)?;
            let f = tape.conv1d(a, block.freq_weight, Some(block.freq_bias), freq_spec)?;
            tape.add(x1, f)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundConvBlock {
    pub conv1_weight: Var,
    pub conv1_bias: Var,
    pub conv2_weight: Var,
    pub conv2_bias: Var,
}

/// Conventional residual block: `x + conv(leaky_relu(conv(x)))`, both
/// convolutions full (groups = 1) and shape-preserving.
pub fn conv_residual_block_forward<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    block: &BoundConvBlock,
    cfg: &ConvBlockConfig,
) -> Result<Var, TensorError> {
    let c = cfg.channels;
    let spec = ConvSpec::same(c, c, cfg.kernel, 1);
    let h = tape.conv1d(x, block.conv1_weight, Some(block.conv1_bias), spec)?;
    let a = tape.leaky_relu(h, R::from_f64(cfg.activation_slope))?;
    let f = tape.conv1d(a, block.conv2_weight, Some(block.conv2_bias), spec)?;
    tape.add(x, f)
}

/// Input span that influences one output element of a stack of temporal
/// convolutions, expressed in samples, milliseconds and hertz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceptiveField {
    pub samples: usize,
    pub milliseconds: f64,
    pub hertz: f64,
}

/// One block spans `(kernel - 1) * hop + window` samples; each additional
/// stacked block widens the span by another `(kernel - 1) * hop`.
pub fn receptive_field(
    temporal_kernel: usize,
    blocks: usize,
    hop: usize,
    window: usize,
    sample_rate: u32,
) -> ReceptiveField {
    assert!(temporal_kernel > 0 && blocks > 0 && hop > 0 && window > 0 && sample_rate > 0);
    let samples = window + blocks * (temporal_kernel - 1) * hop;
    let milliseconds = samples as f64 / sample_rate as f64 * 1000.0;
    ReceptiveField {
        samples,
        milliseconds,
        hertz: 1000.0 / milliseconds,
    }
}
