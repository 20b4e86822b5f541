//! Generator and discriminator assembly.
//!
//! The generator is prenet (1x1) -> N axial blocks -> postnet (1x1) -> ReLU,
//! preserving `channels x frames` end to end; the final ReLU keeps outputs
//! valid magnitudes. The discriminator adds Gaussian noise in training mode,
//! runs prenet -> M conventional residual blocks -> 1-channel postnet, and
//! emits one logit per input frame plus the per-block feature maps. Every
//! discriminator convolution is spectrally normalized: weights are divided
//! by a power-iteration estimate of their largest singular value, which is
//! treated as a constant in backward.

use crate::autodiff::{real, ConvSpec, Gradients, Real, Tape, Tensor, TensorError, Var};
use crate::blocks::{
    axial_block_forward, conv_residual_block_forward, AxialBlockConfig, AxialBlockParams,
    BoundAxialBlock, BoundConvBlock, ConvBlockConfig, ConvParams, ResidualMode, TemporalMode,
};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub num_blocks: usize,
    pub temporal_kernel: usize,
    pub temporal_mode: TemporalMode,
    pub lightweight_share: usize,
    pub freq_kernel: usize,
    pub activation_slope: f64,
    pub residual_mode: ResidualMode,
    /// Static multiplier applied to the raw magnitude input.
    pub input_scale: f64,
}

impl GeneratorConfig {
    pub fn new(channels: usize) -> Self {
        GeneratorConfig {
            channels,
            num_blocks: 7,
            temporal_kernel: 17,
            temporal_mode: TemporalMode::Depthwise,
            lightweight_share: 1,
            freq_kernel: 3,
            activation_slope: 0.01,
            residual_mode: ResidualMode::Once,
            input_scale: 1.0,
        }
    }

    pub fn block_config(&self) -> AxialBlockConfig {
        AxialBlockConfig {
            channels: self.channels,
            temporal_kernel: self.temporal_kernel,
            temporal_mode: self.temporal_mode,
            lightweight_share: self.lightweight_share,
            freq_kernel: self.freq_kernel,
            activation_slope: self.activation_slope,
            residual_mode: self.residual_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<R> {
    pub cfg: GeneratorConfig,
    pub prenet: ConvParams<R>,
    pub blocks: Vec<AxialBlockParams<R>>,
    pub postnet: ConvParams<R>,
}

impl<R: Real> GeneratorParams<R> {
    pub fn init(cfg: &GeneratorConfig, rng: &mut Rng) -> Self {
        let c = cfg.channels;
        let block_cfg = cfg.block_config();
        GeneratorParams {
            cfg: cfg.clone(),
            prenet: ConvParams::init(c, c, 1, rng),
            blocks: (0..cfg.num_blocks)
                .map(|_| AxialBlockParams::init(&block_cfg, rng))
                .collect(),
            postnet: ConvParams::init(c, c, 1, rng),
        }
    }

    /// Exact identity map on nonnegative inputs: identity 1x1 pre/postnet,
    /// zero blocks, final ReLU a no-op on nonnegative data.
    pub fn identity(cfg: &GeneratorConfig) -> Self {
        let c = cfg.channels;
        let block_cfg = cfg.block_config();
        let identity_conv = ConvParams {
            weight: Tensor::from_fn(&[c, c, 1], |i| {
                if i / c == i % c {
                    R::ONE
                } else {
                    R::ZERO
                }
            }),
            bias: Tensor::zeros(&[c]),
        };
        GeneratorParams {
            cfg: cfg.clone(),
            prenet: identity_conv.clone(),
            blocks: (0..cfg.num_blocks)
                .map(|_| AxialBlockParams::zeros(&block_cfg))
                .collect(),
            postnet: identity_conv,
        }
    }

    pub fn for_each<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<R>)) {
        f("prenet.weight".into(), &self.prenet.weight);
        f("prenet.bias".into(), &self.prenet.bias);
        for (i, b) in self.blocks.iter().enumerate() {
            b.for_each(&format!("block{i}"), f);
        }
        f("postnet.weight".into(), &self.postnet.weight);
        f("postnet.bias".into(), &self.postnet.bias);
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<R>)) {
        f("prenet.weight".into(), &mut self.prenet.weight);
        f("prenet.bias".into(), &mut self.prenet.bias);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.for_each_mut(&format!("block{i}"), f);
        }
        f("postnet.weight".into(), &mut self.postnet.weight);
        f("postnet.bias".into(), &mut self.postnet.bias);
    }

    pub fn bind(&self, tape: &mut Tape<R>) -> BoundGenerator {
        let prenet_weight = tape.leaf(self.prenet.weight.clone());
        let prenet_bias = tape.leaf(self.prenet.bias.clone());
        let mut leaves = vec![prenet_weight, prenet_bias];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let bound = b.bind(tape);
            match bound.temporal {
                crate::blocks::BoundTemporal::Depthwise { weight, bias }
                | crate::blocks::BoundTemporal::Lightweight {
                    kernels: weight,
                    bias,
                } => {
                    leaves.push(weight);
                    leaves.push(bias);
                }
            }
            leaves.push(bound.freq_weight);
            leaves.push(bound.freq_bias);
            blocks.push(bound);
        }
        let postnet_weight = tape.leaf(self.postnet.weight.clone());
        let postnet_bias = tape.leaf(self.postnet.bias.clone());
        leaves.push(postnet_weight);
        leaves.push(postnet_bias);
        BoundGenerator {
            prenet_weight,
            prenet_bias,
            blocks,
            postnet_weight,
            postnet_bias,
            leaves,
        }
    }

    /// Gradients in `for_each` order; parameters untouched by the loss get
    /// zero-filled slots.
    pub fn grad_vec(&self, bound: &BoundGenerator, grads: &mut Gradients<R>) -> Vec<Tensor<R>> {
        let mut shapes = Vec::new();
        self.for_each(&mut |_, t| shapes.push(t.shape().to_vec()));
        debug_assert_eq!(shapes.len(), bound.leaves.len());
        bound
            .leaves
            .iter()
            .zip(&shapes)
            .map(|(&v, shape)| grads.take(v).unwrap_or_else(|| Tensor::zeros(shape)))
            .collect()
    }
}

/// Tape handles of one bound generator.
pub struct BoundGenerator {
    pub prenet_weight: Var,
    pub prenet_bias: Var,
    pub blocks: Vec<BoundAxialBlock>,
    pub postnet_weight: Var,
    pub postnet_bias: Var,
    /// Trainable leaves in `for_each` order.
    pub leaves: Vec<Var>,
}

/// `relu(postnet(blocks(prenet(x * input_scale))))`; output is nonnegative
/// and shape equals input shape for any frame count.
pub fn generator_forward<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    params: &GeneratorParams<R>,
    bound: &BoundGenerator,
) -> Result<Var, TensorError> {
    let cfg = &params.cfg;
    let c = cfg.channels;
    let got = tape.value(x).shape().to_vec();
    if got.len() != 2 || got[0] != c {
        return Err(TensorError::ShapeMismatch(format!(
            "generator expects [{c} x frames], got {got:?}"
        )));
    }
    let block_cfg = cfg.block_config();
    let point = ConvSpec::same(c, c, 1, 1);

    let mut h = if cfg.input_scale == 1.0 {
        x
    } else {
        tape.scale(x, real::<R>(cfg.input_scale))?
    };
    h = tape.conv1d(h, bound.prenet_weight, Some(bound.prenet_bias), point)?;
    for block in &bound.blocks {
        h = axial_block_forward(tape, h, block, &block_cfg)?;
    }
    h = tape.conv1d(h, bound.postnet_weight, Some(bound.postnet_bias), point)?;
    tape.relu(h)
}

/// Power-iteration state for one weight matrix, viewed as
/// `[out_channels x everything_else]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNormState<R> {
    /// Left singular vector estimate, unit norm.
    pub u: Tensor<R>,
    /// Power iterations performed per refresh.
    pub iterations: usize,
}

impl<R: Real> SpectralNormState<R> {
    pub fn init(out_channels: usize, rng: &mut Rng) -> Self {
        let mut u = Tensor::from_fn(&[out_channels], |_| R::from_f64(rng.gaussian()));
        normalize(u.data_mut());
        SpectralNormState { u, iterations: 1 }
    }
}

const SIGMA_FLOOR: f64 = 1e-12;

fn normalize<R: Real>(v: &mut [R]) -> R {
    let norm = v
        .iter()
        .map(|&x| x * x)
        .sum::<R>()
        .sqrt()
        .maximum(real(SIGMA_FLOOR));
    for x in v.iter_mut() {
        *x /= norm;
    }
    norm
}

/// `W^T u` in the flattened `[rows x cols]` view.
fn matvec_t<R: Real>(w: &Tensor<R>, rows: usize, cols: usize, u: &[R]) -> Vec<R> {
    let data = w.data();
    let mut v = vec![R::ZERO; cols];
    for (r, &uv) in u.iter().enumerate().take(rows) {
        let row = &data[r * cols..(r + 1) * cols];
        for (vv, &wv) in v.iter_mut().zip(row) {
            *vv += wv * uv;
        }
    }
    v
}

fn matvec<R: Real>(w: &Tensor<R>, rows: usize, cols: usize, v: &[R]) -> Vec<R> {
    let data = w.data();
    (0..rows)
        .map(|r| {
            let row = &data[r * cols..(r + 1) * cols];
            row.iter().zip(v).map(|(&a, &b)| a * b).sum()
        })
        .collect()
}

fn flat_dims<R: Real>(w: &Tensor<R>) -> (usize, usize) {
    let rows = w.shape()[0];
    (rows, w.numel() / rows)
}

/// Run the configured power-iteration count (updating `u` in place),
/// estimate the largest singular value, and return `(W / sigma, sigma)`.
/// The estimate is floored so a zero matrix stays harmless.
pub fn spectral_normalize<R: Real>(
    w: &Tensor<R>,
    state: &mut SpectralNormState<R>,
) -> (Tensor<R>, R) {
    let sigma = sn_advance(w, state);
    (w.map(|v| v / sigma), sigma)
}

/// Advance the persistent `u` by `state.iterations` power iterations and
/// return the singular-value estimate.
pub fn sn_advance<R: Real>(w: &Tensor<R>, state: &mut SpectralNormState<R>) -> R {
    let (rows, cols) = flat_dims(w);
    debug_assert_eq!(state.u.numel(), rows);
    let mut sigma = real::<R>(SIGMA_FLOOR);
    for _ in 0..state.iterations.max(1) {
        let mut v = matvec_t(w, rows, cols, state.u.data());
        normalize(&mut v);
        let mut wu = matvec(w, rows, cols, &v);
        sigma = normalize(&mut wu);
        state.u.data_mut().copy_from_slice(&wu);
    }
    sigma.maximum(real(SIGMA_FLOOR))
}

/// Singular-value estimate from the current `u` without advancing it:
/// `sigma = |W^T u|`.
pub fn sn_estimate<R: Real>(w: &Tensor<R>, state: &SpectralNormState<R>) -> R {
    let (rows, cols) = flat_dims(w);
    let v = matvec_t(w, rows, cols, state.u.data());
    v.iter()
        .map(|&x| x * x)
        .sum::<R>()
        .sqrt()
        .maximum(real(SIGMA_FLOOR))
}

/// Convolution layer with spectral-norm auxiliary state.
#[derive(Clone, Debug, PartialEq)]
pub struct SnConvParams<R> {
    pub weight: Tensor<R>,
    pub bias: Tensor<R>,
    pub sn: SpectralNormState<R>,
}

impl<R: Real> SnConvParams<R> {
    fn init(
        out_channels: usize,
        in_per_group: usize,
        kernel: usize,
        sn_iterations: usize,
        rng: &mut Rng,
    ) -> Self {
        let conv = ConvParams::init(out_channels, in_per_group, kernel, rng);
        let mut sn = SpectralNormState::init(out_channels, rng);
        sn.iterations = sn_iterations;
        SnConvParams {
            weight: conv.weight,
            bias: conv.bias,
            sn,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub num_blocks: usize,
    pub kernel: usize,
    pub activation_slope: f64,
    pub noise_std: f64,
    pub sn_iterations: usize,
}

impl DiscriminatorConfig {
    pub fn new(channels: usize) -> Self {
        DiscriminatorConfig {
            channels,
            num_blocks: 5,
            kernel: 5,
            activation_slope: 0.2,
            noise_std: 0.01,
            sn_iterations: 1,
        }
    }

    fn block_config(&self) -> ConvBlockConfig {
        ConvBlockConfig {
            channels: self.channels,
            kernel: self.kernel,
            activation_slope: self.activation_slope,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnConvBlockParams<R> {
    pub conv1: SnConvParams<R>,
    pub conv2: SnConvParams<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<R> {
    pub cfg: DiscriminatorConfig,
    pub prenet: SnConvParams<R>,
    pub blocks: Vec<SnConvBlockParams<R>>,
    pub postnet: SnConvParams<R>,
}

impl<R: Real> DiscriminatorParams<R> {
    pub fn init(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Self {
        let c = cfg.channels;
        let it = cfg.sn_iterations;
        DiscriminatorParams {
            cfg: cfg.clone(),
            prenet: SnConvParams::init(c, c, 1, it, rng),
            blocks: (0..cfg.num_blocks)
                .map(|_| SnConvBlockParams {
                    conv1: SnConvParams::init(c, c, cfg.kernel, it, rng),
                    conv2: SnConvParams::init(c, c, cfg.kernel, it, rng),
                })
                .collect(),
            postnet: SnConvParams::init(1, c, 1, it, rng),
        }
    }

    fn sn_convs_mut(&mut self) -> Vec<&mut SnConvParams<R>> {
        let mut convs = vec![&mut self.prenet];
        for b in &mut self.blocks {
            convs.push(&mut b.conv1);
            convs.push(&mut b.conv2);
        }
        convs.push(&mut self.postnet);
        convs
    }

    fn sn_convs(&self) -> Vec<&SnConvParams<R>> {
        let mut convs = vec![&self.prenet];
        for b in &self.blocks {
            convs.push(&b.conv1);
            convs.push(&b.conv2);
        }
        convs.push(&self.postnet);
        convs
    }

    /// Advance every layer's power iteration once and return the sigma
    /// estimates, in layer order. Called once per optimization step.
    pub fn sn_refresh(&mut self) -> Vec<R> {
        self.sn_convs_mut()
            .into_iter()
            .map(|c| {
                let w = c.weight.clone();
                sn_advance(&w, &mut c.sn)
            })
            .collect()
    }

    /// Sigma estimates from the current state, without advancing it.
    pub fn sn_sigmas(&self) -> Vec<R> {
        self.sn_convs()
            .into_iter()
            .map(|c| sn_estimate(&c.weight, &c.sn))
            .collect()
    }

    pub fn for_each<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<R>)) {
        f("prenet.weight".into(), &self.prenet.weight);
        f("prenet.bias".into(), &self.prenet.bias);
        for (i, b) in self.blocks.iter().enumerate() {
            f(format!("block{i}.conv1.weight"), &b.conv1.weight);
            f(format!("block{i}.conv1.bias"), &b.conv1.bias);
            f(format!("block{i}.conv2.weight"), &b.conv2.weight);
            f(format!("block{i}.conv2.bias"), &b.conv2.bias);
        }
        f("postnet.weight".into(), &self.postnet.weight);
        f("postnet.bias".into(), &self.postnet.bias);
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<R>)) {
        f("prenet.weight".into(), &mut self.prenet.weight);
        f("prenet.bias".into(), &mut self.prenet.bias);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(format!("block{i}.conv1.weight"), &mut b.conv1.weight);
            f(format!("block{i}.conv1.bias"), &mut b.conv1.bias);
            f(format!("block{i}.conv2.weight"), &mut b.conv2.weight);
            f(format!("block{i}.conv2.bias"), &mut b.conv2.bias);
        }
        f("postnet.weight".into(), &mut self.postnet.weight);
        f("postnet.bias".into(), &mut self.postnet.bias);
    }

    /// Auxiliary (non-trainable) spectral-norm vectors, in layer order.
    pub fn for_each_aux<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<R>)) {
        f("prenet.sn_u".into(), &self.prenet.sn.u);
        for (i, b) in self.blocks.iter().enumerate() {
            f(format!("block{i}.conv1.sn_u"), &b.conv1.sn.u);
            f(format!("block{i}.conv2.sn_u"), &b.conv2.sn.u);
        }
        f("postnet.sn_u".into(), &self.postnet.sn.u);
    }

    pub fn for_each_aux_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<R>)) {
        f("prenet.sn_u".into(), &mut self.prenet.sn.u);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(format!("block{i}.conv1.sn_u"), &mut b.conv1.sn.u);
            f(format!("block{i}.conv2.sn_u"), &mut b.conv2.sn.u);
        }
        f("postnet.sn_u".into(), &mut self.postnet.sn.u);
    }

    /// Push leaves and divide every weight by its sigma. The divisions are
    /// recorded, so weight gradients are scaled back automatically while
    /// sigma itself stays constant.
    pub fn bind(
        &self,
        tape: &mut Tape<R>,
        sigmas: &[R],
    ) -> Result<BoundDiscriminator, TensorError> {
        assert_eq!(sigmas.len(), 2 + 2 * self.blocks.len());
        let mut leaves = Vec::new();
        let mut s = sigmas.iter().copied();
        let bind_conv = |tape: &mut Tape<R>,
                             conv: &SnConvParams<R>,
                             leaves: &mut Vec<Var>,
                             sigma: R|
         -> Result<(Var, Var), TensorError> {
            let w = tape.leaf(conv.weight.clone());
            let b = tape.leaf(conv.bias.clone());
            leaves.push(w);
            leaves.push(b);
            let w_sn = tape.scale(w, R::ONE / sigma)?;
            Ok((w_sn, b))
        };

        let (prenet_weight, prenet_bias) =
            bind_conv(tape, &self.prenet, &mut leaves, s.next().unwrap())?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (w1, b1) = bind_conv(tape, &b.conv1, &mut leaves, s.next().unwrap())?;
            let (w2, b2) = bind_conv(tape, &b.conv2, &mut leaves, s.next().unwrap())?;
            blocks.push(BoundConvBlock {
                conv1_weight: w1,
                conv1_bias: b1,
                conv2_weight: w2,
                conv2_bias: b2,
            });
        }
        let (postnet_weight, postnet_bias) =
            bind_conv(tape, &self.postnet, &mut leaves, s.next().unwrap())?;
        Ok(BoundDiscriminator {
            prenet_weight,
            prenet_bias,
            blocks,
            postnet_weight,
            postnet_bias,
            leaves,
        })
    }

    pub fn grad_vec(
        &self,
        bound: &BoundDiscriminator,
        grads: &mut Gradients<R>,
    ) -> Vec<Tensor<R>> {
        let mut shapes = Vec::new();
        self.for_each(&mut |_, t| shapes.push(t.shape().to_vec()));
        debug_assert_eq!(shapes.len(), bound.leaves.len());
        bound
            .leaves
            .iter()
            .zip(&shapes)
            .map(|(&v, shape)| grads.take(v).unwrap_or_else(|| Tensor::zeros(shape)))
            .collect()
    }
}

pub struct BoundDiscriminator {
    pub prenet_weight: Var,
    pub prenet_bias: Var,
    pub blocks: Vec<BoundConvBlock>,
    pub postnet_weight: Var,
    pub postnet_bias: Var,
    /// Trainable leaves in `for_each` order (raw weights, not normalized).
    pub leaves: Vec<Var>,
}

/// Per-frame logits plus the intermediate block outputs used for feature
/// matching.
pub struct DiscriminatorOutput {
    pub logits: Var,
    pub features: Vec<Var>,
}

/// Forward pass. In training mode, Gaussian noise (derived from
/// `noise_seed`) is added to the input; evaluation is deterministic.
pub fn discriminator_forward<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    params: &DiscriminatorParams<R>,
    bound: &BoundDiscriminator,
    noise_seed: u64,
    training: bool,
) -> Result<DiscriminatorOutput, TensorError> {
    let cfg = &params.cfg;
    let c = cfg.channels;
    let got = tape.value(x).shape().to_vec();
    if got.len() != 2 || got[0] != c {
        return Err(TensorError::ShapeMismatch(format!(
            "discriminator expects [{c} x frames], got {got:?}"
        )));
    }
    let block_cfg = cfg.block_config();

    let mut h = if training && cfg.noise_std > 0.0 {
        tape.gaussian_noise(x, cfg.noise_std, noise_seed)?
    } else {
        x
    };
    h = tape.conv1d(
        h,
        bound.prenet_weight,
        Some(bound.prenet_bias),
        ConvSpec::same(c, c, 1, 1),
    )?;
    let mut features = Vec::with_capacity(bound.blocks.len());
    for block in &bound.blocks {
        h = conv_residual_block_forward(tape, h, block, &block_cfg)?;
        features.push(h);
    }
    let logits = tape.conv1d(
        h,
        bound.postnet_weight,
        Some(bound.postnet_bias),
        ConvSpec::same(c, 1, 1, 1),
    )?;
    Ok(DiscriminatorOutput { logits, features })
}
