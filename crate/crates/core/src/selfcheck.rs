//! Built-in verification suites, runnable from the command line and reused
//! by the integration tests: finite-difference gradient checks for every
//! operator and for the full downscaled two-generator objective, a power
//! iteration check against an independent Jacobi eigensolver, dynamic
//! time warping against exhaustive path enumeration, and a generator
//! shape-preservation sweep at both desk and full channel counts.

use crate::autodiff::{check_gradients, skip_none, ConvSpec, Tape, Tensor, Var, DEFAULT_STEP};
use crate::blocks::BoundConvBlock;
use crate::dsp::MelSpectrogram;
use crate::eval::dtw_align;
use crate::losses::{
    discriminator_objective, generator_objective, DiscPair, GenPair, LossFlags, LossWeights,
};
use crate::networks::{
    discriminator_forward, generator_forward, sn_advance, BoundDiscriminator, BoundGenerator,
    DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams, SpectralNormState,
};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

const OP_TOL: f64 = 1e-4;
const COMPOSITION_TOL: f64 = 1e-3;

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

fn fd_result(
    name: &str,
    tol: f64,
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, crate::autodiff::TensorError>,
) -> CheckResult {
    match check_gradients(inputs, build, DEFAULT_STEP, &skip_none) {
        Ok(report) => CheckResult::new(
            name,
            report.passes(tol),
            format!(
                "max rel err {:.3e} over {} coordinates (tol {tol:.0e})",
                report.max_rel_err, report.checked
            ),
        ),
        Err(e) => CheckResult::new(name, false, format!("builder failed: {e}")),
    }
}

/// Finite-difference checks for each differentiable operator.
pub fn gradient_suite() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0xAD01);
    let mut results = Vec::new();

    let spec = ConvSpec {
        in_channels: 3,
        out_channels: 4,
        kernel: 3,
        stride: 1,
        groups: 1,
        padding: 1,
    };
    let inputs = vec![
        random_tensor(&[3, 6], -1.0, 1.0, &mut rng),
        random_tensor(&[4, 3, 3], -1.0, 1.0, &mut rng),
        random_tensor(&[4], -1.0, 1.0, &mut rng),
    ];
    results.push(fd_result("gradcheck conv1d", OP_TOL, &inputs, &move |tape, v| {
        let y = tape.conv1d(v[0], v[1], Some(v[2]), spec)?;
        tape.mean(y)
    }));

    let spec = ConvSpec {
        in_channels: 4,
        out_channels: 4,
        kernel: 3,
        stride: 2,
        groups: 2,
        padding: 1,
    };
    let inputs = vec![
        random_tensor(&[4, 7], -1.0, 1.0, &mut rng),
        random_tensor(&[4, 2, 3], -1.0, 1.0, &mut rng),
        random_tensor(&[4], -1.0, 1.0, &mut rng),
    ];
    results.push(fd_result(
        "gradcheck conv1d grouped strided",
        OP_TOL,
        &inputs,
        &move |tape, v| {
            let y = tape.conv1d(v[0], v[1], Some(v[2]), spec)?;
            tape.mean(y)
        },
    ));

    let x = random_tensor(&[4, 5], -2.0, 2.0, &mut rng);
    results.push(fd_result("gradcheck leaky_relu", OP_TOL, std::slice::from_ref(&x), &|tape, v| {
        let y = tape.leaky_relu(v[0], 0.01)?;
        tape.mean(y)
    }));
    results.push(fd_result("gradcheck relu", OP_TOL, std::slice::from_ref(&x), &|tape, v| {
        let y = tape.relu(v[0])?;
        tape.sum(y)
    }));

    let a = random_tensor(&[3, 4], 0.5, 1.5, &mut rng);
    let b = random_tensor(&[3, 4], -1.5, -0.5, &mut rng);
    results.push(fd_result("gradcheck l1_loss", OP_TOL, &[a.clone(), b.clone()], &|tape, v| {
        tape.l1_loss(v[0], v[1])
    }));
    results.push(fd_result("gradcheck add+scale", OP_TOL, &[a.clone(), b.clone()], &|tape, v| {
        let s = tape.add(v[0], v[1])?;
        let sc = tape.scale(s, -1.7)?;
        tape.mean(sc)
    }));

    let z = random_tensor(&[1, 9], -3.0, 3.0, &mut rng);
    results.push(fd_result("gradcheck bce real", OP_TOL, std::slice::from_ref(&z), &|tape, v| {
        tape.bce_with_logits(v[0], true)
    }));
    results.push(fd_result("gradcheck bce fake", OP_TOL, std::slice::from_ref(&z), &|tape, v| {
        tape.bce_with_logits(v[0], false)
    }));

    results.push(fd_result("gradcheck gaussian_noise", OP_TOL, std::slice::from_ref(&x), &|tape, v| {
        let noisy = tape.gaussian_noise(v[0], 0.05, 1234)?;
        tape.mean(noisy)
    }));

    let k = random_tensor(&[2, 5], -1.0, 1.0, &mut rng);
    let c = random_tensor(&[4, 3], -1.0, 1.0, &mut rng);
    let d = random_tensor(&[2, 3], -1.0, 1.0, &mut rng);
    results.push(fd_result(
        "gradcheck concat+repeat_rows",
        OP_TOL,
        &[c, d],
        &|tape, v| {
            let rep = tape.repeat_rows(v[1], 2)?;
            let cat = tape.concat_channels(v[0], rep)?;
            let act = tape.leaky_relu(cat, 0.2)?;
            tape.mean(act)
        },
    ));
    results.push(fd_result("gradcheck sum+reshape", OP_TOL, &[k], &|tape, v| {
        let r = tape.reshape(v[0], &[5, 2])?;
        tape.sum(r)
    }));

    results.extend(composition_checks());
    results
}

fn tiny_gen_config() -> GeneratorConfig {
    GeneratorConfig {
        channels: 8,
        num_blocks: 3,
        temporal_kernel: 5,
        freq_kernel: 3,
        ..GeneratorConfig::new(8)
    }
}

fn tiny_disc_config() -> DiscriminatorConfig {
    DiscriminatorConfig {
        channels: 8,
        num_blocks: 3,
        kernel: 3,
        ..DiscriminatorConfig::new(8)
    }
}

fn gen_tensor_count(cfg: &GeneratorConfig) -> usize {
    4 + 4 * cfg.num_blocks
}

fn disc_tensor_count(cfg: &DiscriminatorConfig) -> usize {
    4 + 4 * cfg.num_blocks
}

fn bind_gen_from_vars(cfg: &GeneratorConfig, vars: &[Var]) -> BoundGenerator {
    let mut it = vars.iter().copied();
    let prenet_weight = it.next().unwrap();
    let prenet_bias = it.next().unwrap();
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for _ in 0..cfg.num_blocks {
        let weight = it.next().unwrap();
        let bias = it.next().unwrap();
        let freq_weight = it.next().unwrap();
        let freq_bias = it.next().unwrap();
        blocks.push(crate::blocks::BoundAxialBlock {
            temporal: crate::blocks::BoundTemporal::Depthwise { weight, bias },
            freq_weight,
            freq_bias,
        });
    }
    let postnet_weight = it.next().unwrap();
    let postnet_bias = it.next().unwrap();
    BoundGenerator {
        prenet_weight,
        prenet_bias,
        blocks,
        postnet_weight,
        postnet_bias,
        leaves: vars.to_vec(),
    }
}

fn bind_disc_from_vars(
    tape: &mut Tape<f64>,
    cfg: &DiscriminatorConfig,
    vars: &[Var],
    sigmas: &[f64],
) -> Result<BoundDiscriminator, crate::autodiff::TensorError> {
    let mut it = vars.iter().copied();
    let mut sg = sigmas.iter().copied();
    let norm = |tape: &mut Tape<f64>, w: Var, s: f64| tape.scale(w, 1.0 / s);
    let w = it.next().unwrap();
    let prenet_bias = it.next().unwrap();
    let prenet_weight = norm(tape, w, sg.next().unwrap())?;
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for _ in 0..cfg.num_blocks {
        let w1 = it.next().unwrap();
        let b1 = it.next().unwrap();
        let w1 = norm(tape, w1, sg.next().unwrap())?;
        let w2 = it.next().unwrap();
        let b2 = it.next().unwrap();
        let w2 = norm(tape, w2, sg.next().unwrap())?;
        blocks.push(BoundConvBlock {
            conv1_weight: w1,
            conv1_bias: b1,
            conv2_weight: w2,
            conv2_bias: b2,
        });
    }
    let w = it.next().unwrap();
    let postnet_bias = it.next().unwrap();
    let postnet_weight = norm(tape, w, sg.next().unwrap())?;
    Ok(BoundDiscriminator {
        prenet_weight,
        prenet_bias,
        blocks,
        postnet_weight,
        postnet_bias,
        leaves: vars.to_vec(),
    })
}

fn params_to_tensors(gen: &GeneratorParams<f64>) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    gen.for_each(&mut |_, t| out.push(t.clone()));
    out
}

fn disc_to_tensors(disc: &DiscriminatorParams<f64>) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    disc.for_each(&mut |_, t| out.push(t.clone()));
    out
}

/// Finite differences through the whole downscaled pipeline, probing
/// exactly the gradients the optimizer applies.
///
/// The generator objective is checked with respect to every parameter of
/// both generators (discriminators and inputs held fixed): the
/// feature-matching targets are detached constants by definition, so
/// their dependence on the data and discriminator weights is deliberately
/// outside the recorded gradient. The discriminator update path is
/// checked separately through its own objective with respect to every
/// discriminator parameter.
fn composition_checks() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0xC0C0);
    let gcfg = tiny_gen_config();
    let dcfg = tiny_disc_config();
    let gen_xy = GeneratorParams::<f64>::init(&gcfg, &mut rng);
    let gen_yx = GeneratorParams::<f64>::init(&gcfg, &mut rng);
    let mut disc_x = DiscriminatorParams::<f64>::init(&dcfg, &mut rng);
    let mut disc_y = DiscriminatorParams::<f64>::init(&dcfg, &mut rng);
    let sig_x = disc_x.sn_refresh();
    let sig_y = disc_y.sn_refresh();

    let t = 6;
    let x = random_tensor(&[8, t], 0.0, 2.0, &mut rng);
    let y = random_tensor(&[8, t], 0.0, 2.0, &mut rng);

    let mut inputs = params_to_tensors(&gen_xy);
    inputs.extend(params_to_tensors(&gen_yx));
    let n_gen = gen_tensor_count(&gcfg);
    let weights = LossWeights::default();
    let flags = LossFlags::default();

    // frozen fake for the discriminator check, synthesized up front
    let fake_x = {
        let mut tape = Tape::new();
        let yv = tape.leaf(y.clone());
        let bound = gen_yx.bind(&mut tape);
        let f = generator_forward(&mut tape, yv, &gen_yx, &bound).unwrap();
        tape.value(f).clone()
    };

    let gen_check = {
        let gcfg = gcfg.clone();
        let (x, y) = (x.clone(), y.clone());
        let (gen_xy, gen_yx) = (gen_xy.clone(), gen_yx.clone());
        let (disc_x, disc_y) = (disc_x.clone(), disc_y.clone());
        let (sig_x, sig_y) = (sig_x.clone(), sig_y.clone());
        fd_result(
            "gradcheck generator objective composition",
            COMPOSITION_TOL,
            &inputs,
            &move |tape, vars| {
                let xv = tape.leaf(x.clone());
                let yv = tape.leaf(y.clone());
                let bg_xy = bind_gen_from_vars(&gcfg, &vars[..n_gen]);
                let bg_yx = bind_gen_from_vars(&gcfg, &vars[n_gen..2 * n_gen]);
                let bd_x = push_disc(tape, &disc_x, &sig_x)?;
                let bd_y = push_disc(tape, &disc_y, &sig_y)?;
                let out = generator_objective(
                    tape,
                    xv,
                    yv,
                    &GenPair {
                        params: &gen_xy,
                        bound: &bg_xy,
                    },
                    &GenPair {
                        params: &gen_yx,
                        bound: &bg_yx,
                    },
                    &DiscPair {
                        params: &disc_x,
                        bound: &bd_x,
                    },
                    &DiscPair {
                        params: &disc_y,
                        bound: &bd_y,
                    },
                    &weights,
                    &flags,
                    [0xFEED, 0xBEEF],
                )?;
                Ok(out.total)
            },
        )
    };

    // discriminator update path: real sample towards 1, frozen fake
    // towards 0, every discriminator parameter probed
    let disc_inputs = disc_to_tensors(&disc_x);
    let n_disc = disc_tensor_count(&dcfg);
    let disc_check = {
        let dcfg = dcfg.clone();
        let disc_x = disc_x.clone();
        let sig_x = sig_x.clone();
        let x = x.clone();
        fd_result(
            "gradcheck discriminator objective composition",
            COMPOSITION_TOL,
            &disc_inputs,
            &move |tape, vars| {
                let xv = tape.leaf(x.clone());
                let fv = tape.leaf(fake_x.clone());
                let bd_x = bind_disc_from_vars(tape, &dcfg, &vars[..n_disc], &sig_x)?;
                discriminator_objective(
                    tape,
                    xv,
                    fv,
                    &DiscPair {
                        params: &disc_x,
                        bound: &bd_x,
                    },
                    [0xAB, 0xCD],
                )
            },
        )
    };

    vec![gen_check, disc_check]
}

/// Push the discriminator's parameters as fixed leaves (already divided
/// by the given sigmas).
fn push_disc(
    tape: &mut Tape<f64>,
    disc: &DiscriminatorParams<f64>,
    sigmas: &[f64],
) -> Result<BoundDiscriminator, crate::autodiff::TensorError> {
    disc.bind(tape, sigmas)
}

/// Largest singular value via a cyclic Jacobi eigensolver on `W^T W`;
/// independent of the power-iteration path it cross-checks.
pub fn jacobi_sigma_max(w: &Tensor<f64>) -> f64 {
    let rows = w.shape()[0];
    let cols = w.numel() / rows;
    let n = cols;
    // a = W^T W, symmetric n x n
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for r in 0..rows {
                acc += w.data()[r * cols + i] * w.data()[r * cols + j];
            }
            a[i * n + j] = acc;
        }
    }
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut lambda_max = 0.0f64;
    for i in 0..n {
        lambda_max = lambda_max.max(a[i * n + i]);
    }
    lambda_max.max(0.0).sqrt()
}

/// Power-iteration sigma against the Jacobi oracle on random matrices:
/// the estimate must land within 1e-3 relative and the normalized weight
/// must have unit spectral norm to the same tolerance.
pub fn spectral_norm_suite() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0xB9D88);
    let mut worst_sigma = 0.0f64;
    let mut worst_unit = 0.0f64;
    let trials = 100;
    for _ in 0..trials {
        let w = Tensor::from_fn(&[16, 16], |_| rng.gaussian());
        let mut state = SpectralNormState::<f64>::init(16, &mut rng);
        state.iterations = 50;
        let sigma = sn_advance(&w, &mut state);
        let oracle = jacobi_sigma_max(&w);
        worst_sigma = worst_sigma.max((sigma - oracle).abs() / oracle);

        let w_sn = w.map(|v| v / sigma);
        let sigma_sn = jacobi_sigma_max(&w_sn);
        worst_unit = worst_unit.max((sigma_sn - 1.0).abs());
    }
    vec![
        CheckResult::new(
            "spectral norm sigma vs eigensolver oracle",
            worst_sigma <= 1e-3,
            format!("worst rel err {worst_sigma:.3e} over {trials} random 16x16 matrices"),
        ),
        CheckResult::new(
            "normalized weight has unit spectral norm",
            worst_unit <= 1e-3,
            format!("worst |sigma(W_sn) - 1| = {worst_unit:.3e}"),
        ),
    ]
}

fn random_mel(t: usize, d: usize, rng: &mut Rng) -> MelSpectrogram {
    MelSpectrogram {
        logmel: Tensor::from_fn(&[d, t], |_| rng.uniform(-2.0, 2.0)),
    }
}

fn dtw_enumerate(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
    fn dist(a: &MelSpectrogram, i: usize, b: &MelSpectrogram, j: usize) -> f64 {
        let (fa, fb) = (a.frame(i), b.frame(j));
        fa.iter()
            .zip(&fb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
    fn explore(a: &MelSpectrogram, b: &MelSpectrogram, i: usize, j: usize) -> f64 {
        let here = dist(a, i, b, j);
        if i + 1 == a.frames() && j + 1 == b.frames() {
            return here;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.frames() && j + 1 < b.frames() {
            best = best.min(explore(a, b, i + 1, j + 1));
        }
        if i + 1 < a.frames() {
            best = best.min(explore(a, b, i + 1, j));
        }
        if j + 1 < b.frames() {
            best = best.min(explore(a, b, i, j + 1));
        }
        here + best
    }
    explore(a, b, 0, 0)
}

/// Dynamic program vs exhaustive path enumeration on every shape up to
/// 6 x 6 frames.
pub fn dtw_suite() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0xD1D0);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for ta in 1..=6 {
        for tb in 1..=6 {
            for _ in 0..4 {
                let a = random_mel(ta, 3, &mut rng);
                let b = random_mel(tb, 3, &mut rng);
                let got = match dtw_align(&a, &b) {
                    Ok(r) => r.total_cost,
                    Err(e) => {
                        return vec![CheckResult::new(
                            "dtw vs exhaustive enumeration",
                            false,
                            format!("alignment failed: {e}"),
                        )]
                    }
                };
                let want = dtw_enumerate(&a, &b);
                worst = worst.max((got - want).abs());
                cases += 1;
            }
        }
    }
    vec![CheckResult::new(
        "dtw vs exhaustive enumeration",
        worst <= 1e-10,
        format!("worst abs diff {worst:.3e} over {cases} shapes up to 6x6"),
    )]
}

/// Generators preserve `channels x frames` for arbitrary frame counts, at
/// desk and full scale, and outputs stay nonnegative.
pub fn shape_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();
    for (label, channels, blocks) in [("desk-scale", 65usize, 3usize), ("full-scale", 513, 7)] {
        let cfg = GeneratorConfig {
            channels,
            num_blocks: blocks,
            ..GeneratorConfig::new(channels)
        };
        let mut rng = Rng::seed_from(0x5A5A);
        let params = GeneratorParams::<f32>::init(&cfg, &mut rng);
        let mut ok = true;
        let mut detail = String::new();
        for t in [1usize, 16, 128, 301, 500] {
            let x = Tensor::from_fn(&[channels, t], |_| rng.uniform(-1.0, 1.0) as f32);
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let bound = params.bind(&mut tape);
            match generator_forward(&mut tape, xv, &params, &bound) {
                Ok(y) => {
                    let shape_ok = tape.value(y).shape() == [channels, t];
                    let nonneg = tape.value(y).data().iter().all(|&v| v >= 0.0);
                    if !shape_ok || !nonneg {
                        ok = false;
                        detail = format!("T={t}: shape_ok={shape_ok}, nonneg={nonneg}");
                        break;
                    }
                }
                Err(e) => {
                    ok = false;
                    detail = format!("T={t}: forward failed: {e}");
                    break;
                }
            }
        }
        if ok {
            detail = format!("{channels} channels, {blocks} blocks, T in {{1,16,128,301,500}}");
        }
        results.push(CheckResult::new(
            format!("generator shape preservation ({label})"),
            ok,
            detail,
        ));
    }
    results
}

/// Feature pipeline consistency probe used alongside the other suites: a
/// noise-free discriminator forward is deterministic.
fn determinism_probe() -> CheckResult {
    let dcfg = tiny_disc_config();
    let mut rng = Rng::seed_from(0xDE7E);
    let mut params = DiscriminatorParams::<f64>::init(&dcfg, &mut rng);
    let sig = params.sn_refresh();
    let x = random_tensor(&[8, 12], 0.0, 1.0, &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let bound = params.bind(&mut tape, &sig).unwrap();
        let out = discriminator_forward(&mut tape, xv, &params, &bound, 0, false).unwrap();
        tape.value(out.logits).data().to_vec()
    };
    let equal = run() == run();
    CheckResult::new(
        "evaluation-mode forward determinism",
        equal,
        "two noise-free forwards are bit-identical",
    )
}

/// Every suite, in a stable order.
pub fn run_all() -> Vec<CheckResult> {
    let mut results = gradient_suite();
    results.extend(spectral_norm_suite());
    results.extend(dtw_suite());
    results.extend(shape_suite());
    results.push(determinism_probe());
    results
}
