//! Two-pair adversarial training loop.
//!
//! Each step updates the discriminators on real/fake pairs (fakes held
//! constant), then updates both generators jointly on the weighted total
//! objective. Per-sample tapes are independent, so the batch fans out
//! across threads; every random draw (crops, noise seeds) comes from the
//! single persisted stream before dispatch and gradients reduce in sample
//! order, which keeps runs bit-reproducible regardless of thread count.

mod checkpoint;

pub use checkpoint::{checkpoint_load, checkpoint_save, CheckpointError};

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::config::RunConfig;
use crate::dataset::SpectrogramDataset;
use crate::losses::{
    discriminator_objective, generator_objective, DiscPair, GenPair, LossReport,
};
use crate::networks::{generator_forward, DiscriminatorParams, GeneratorParams};
use crate::rng::Rng;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}; diagnostic checkpoint at {checkpoint}")]
    NonFinite { step: u64, checkpoint: String },
    #[error("corpus item {index} has {frames} frames, below the {crop} frame crop")]
    ItemTooShort {
        index: usize,
        frames: usize,
        crop: usize,
    },
    #[error("corpus item {index} contains negative or non-finite magnitudes")]
    BadMagnitudes { index: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("dataset bins {got} do not match the configured {expected}")]
    BinMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Preprocessed spectrograms of one identity, every item long enough to
/// crop and nonnegative throughout.
#[derive(Clone, Debug)]
pub struct CorpusDataset {
    pub items: Vec<Tensor<f32>>,
}

impl CorpusDataset {
    pub fn new(items: Vec<Tensor<f32>>, crop_frames: usize) -> Result<Self, TrainError> {
        if items.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        for (index, item) in items.iter().enumerate() {
            if item.cols() < crop_frames {
                return Err(TrainError::ItemTooShort {
                    index,
                    frames: item.cols(),
                    crop: crop_frames,
                });
            }
            if !item.data().iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(TrainError::BadMagnitudes { index });
            }
        }
        Ok(CorpusDataset { items })
    }

    /// Usable items from a stored dataset; items shorter than the crop are
    /// dropped and counted.
    pub fn from_dataset(
        ds: &SpectrogramDataset,
        crop_frames: usize,
        expected_bins: usize,
    ) -> Result<(Self, usize), TrainError> {
        if ds.bins() != expected_bins {
            return Err(TrainError::BinMismatch {
                got: ds.bins(),
                expected: expected_bins,
            });
        }
        let mut kept = Vec::new();
        let mut skipped = 0;
        for item in &ds.items {
            if item.spec.cols() >= crop_frames {
                kept.push(item.spec.clone());
            } else {
                skipped += 1;
            }
        }
        Ok((CorpusDataset::new(kept, crop_frames)?, skipped))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn from_config(cfg: &RunConfig) -> Self {
        AdamHyper {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// First/second moment estimates per parameter tensor plus the shared
/// step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub moments: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl AdamState {
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        AdamState {
            t: 0,
            moments: shapes
                .iter()
                .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
                .collect(),
        }
    }

    fn for_params<'a, P>(
        params: &'a P,
        walk: impl FnOnce(&'a P, &mut dyn FnMut(String, &'a Tensor<f32>)),
    ) -> Self {
        let mut shapes = Vec::new();
        walk(params, &mut |_, t| shapes.push(t.shape().to_vec()));
        AdamState::new(&shapes)
    }
}

/// One bias-corrected moment update of a single parameter tensor.
/// `t` is the post-increment step count.
pub fn adam_update(
    param: &mut Tensor<f32>,
    grad: &Tensor<f32>,
    m: &mut Tensor<f32>,
    v: &mut Tensor<f32>,
    t: u64,
    lr: f64,
    hyper: &AdamHyper,
) {
    debug_assert_eq!(param.shape(), grad.shape());
    let b1 = hyper.beta1 as f32;
    let b2 = hyper.beta2 as f32;
    let bc1 = (1.0 - hyper.beta1.powi(t as i32)) as f32;
    let bc2 = (1.0 - hyper.beta2.powi(t as i32)) as f32;
    let lr = lr as f32;
    let eps = hyper.eps as f32;
    for i in 0..param.numel() {
        let g = grad.data()[i];
        let mi = b1 * m.data()[i] + (1.0 - b1) * g;
        let vi = b2 * v.data()[i] + (1.0 - b2) * g * g;
        m.data_mut()[i] = mi;
        v.data_mut()[i] = vi;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        param.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Apply one optimizer step over all tensors of a network, walked in
/// binding order.
fn adam_apply(
    opt: &mut AdamState,
    grads: &[Tensor<f32>],
    lr: f64,
    hyper: &AdamHyper,
    walk: impl FnOnce(&mut dyn FnMut(String, &mut Tensor<f32>)),
) {
    opt.t += 1;
    let t = opt.t;
    let moments = &mut opt.moments;
    let mut idx = 0;
    walk(&mut |_, param| {
        let (m, v) = &mut moments[idx];
        adam_update(param, &grads[idx], m, v, t, lr, hyper);
        idx += 1;
    });
    debug_assert_eq!(idx, grads.len());
}

/// Step-annealed learning rate: `base * factor^(epoch / every)`.
pub fn lr_schedule_with(epoch: usize, base: f64, factor: f64, every: usize) -> f64 {
    base * factor.powi((epoch / every) as i32)
}

/// Default schedule: tenfold decay every 50 epochs.
pub fn lr_schedule(epoch: usize, base: f64) -> f64 {
    lr_schedule_with(epoch, base, 0.1, 50)
}

/// Uniform crops: `batch_size` independent item/offset draws per identity,
/// X and Y independent. All randomness comes from `rng` in a fixed order.
pub fn sample_batch(
    ds_x: &CorpusDataset,
    ds_y: &CorpusDataset,
    batch_size: usize,
    crop_frames: usize,
    rng: &mut Rng,
) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    let mut draw = |ds: &CorpusDataset| -> Vec<Tensor<f32>> {
        (0..batch_size)
            .map(|_| {
                let item = &ds.items[rng.next_below(ds.len() as u64) as usize];
                let max_start = item.cols() - crop_frames;
                let start = rng.next_below(max_start as u64 + 1) as usize;
                crop(item, start, crop_frames)
            })
            .collect()
    };
    let xs = draw(ds_x);
    let ys = draw(ds_y);
    (xs, ys)
}

fn crop(item: &Tensor<f32>, start: usize, frames: usize) -> Tensor<f32> {
    let rows = item.rows();
    let mut out = Tensor::zeros(&[rows, frames]);
    for r in 0..rows {
        out.row_mut(r)
            .copy_from_slice(&item.row(r)[start..start + frames]);
    }
    out
}

/// Everything the loop needs to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub cfg: RunConfig,
    pub gen_xy: GeneratorParams<f32>,
    pub gen_yx: GeneratorParams<f32>,
    pub disc_x: DiscriminatorParams<f32>,
    pub disc_y: DiscriminatorParams<f32>,
    pub opt_gen_xy: AdamState,
    pub opt_gen_yx: AdamState,
    pub opt_disc_x: AdamState,
    pub opt_disc_y: AdamState,
    pub epoch: u64,
    pub global_step: u64,
    pub rng: Rng,
}

impl TrainState {
    pub fn init(cfg: &RunConfig) -> Self {
        let mut rng = Rng::seed_from(cfg.seed);
        let gcfg = cfg.generator_config();
        let dcfg = cfg.discriminator_config();
        let gen_xy = GeneratorParams::init(&gcfg, &mut rng);
        let gen_yx = GeneratorParams::init(&gcfg, &mut rng);
        let disc_x = DiscriminatorParams::init(&dcfg, &mut rng);
        let disc_y = DiscriminatorParams::init(&dcfg, &mut rng);
        let opt_gen_xy = AdamState::for_params(&gen_xy, |p, f| p.for_each(f));
        let opt_gen_yx = AdamState::for_params(&gen_yx, |p, f| p.for_each(f));
        let opt_disc_x = AdamState::for_params(&disc_x, |p, f| p.for_each(f));
        let opt_disc_y = AdamState::for_params(&disc_y, |p, f| p.for_each(f));
        TrainState {
            cfg: cfg.clone(),
            gen_xy,
            gen_yx,
            disc_x,
            disc_y,
            opt_gen_xy,
            opt_gen_yx,
            opt_disc_x,
            opt_disc_y,
            epoch: 0,
            global_step: 0,
            rng,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        lr_schedule_with(
            self.epoch as usize,
            self.cfg.learning_rate,
            self.cfg.anneal_factor,
            self.cfg.anneal_every,
        )
    }
}

/// Index-preserving parallel map over batch samples. Falls back to a
/// serial loop on single-core hosts; output order never depends on
/// scheduling.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<R>> = items.iter().map(|_| None).collect();
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        for (chunk_idx, (item_chunk, slot_chunk)) in
            items.chunks(chunk).zip(slots.chunks_mut(chunk)).enumerate()
        {
            let f = &f;
            scope.spawn(move || {
                let base = chunk_idx * chunk;
                for (off, (item, slot)) in item_chunk.iter().zip(slot_chunk).enumerate() {
                    *slot = Some(f(base + off, item));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

fn sum_into(acc: &mut [Tensor<f32>], delta: &[Tensor<f32>]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        for (av, dv) in a.data_mut().iter_mut().zip(d.data()) {
            *av += *dv;
        }
    }
}

fn scale_all(acc: &mut [Tensor<f32>], factor: f32) {
    for t in acc.iter_mut() {
        for v in t.data_mut() {
            *v *= factor;
        }
    }
}

struct DPhaseOut {
    grads_dx: Vec<Tensor<f32>>,
    grads_dy: Vec<Tensor<f32>>,
    adv_d_x: f64,
    adv_d_y: f64,
}

/// Discriminator pass for one sample pair: fakes are synthesized and
/// detached, so no gradient reaches the generators.
fn d_phase_sample(
    state: &TrainState,
    sig_x: &[f32],
    sig_y: &[f32],
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    seeds: &[u64; 4],
) -> Result<DPhaseOut, TensorError> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let yv = tape.leaf(y.clone());
    let bg_xy = state.gen_xy.bind(&mut tape);
    let bg_yx = state.gen_yx.bind(&mut tape);
    let bd_x = state.disc_x.bind(&mut tape, sig_x)?;
    let bd_y = state.disc_y.bind(&mut tape, sig_y)?;

    let fake_y = generator_forward(&mut tape, xv, &state.gen_xy, &bg_xy)?;
    let fake_x = generator_forward(&mut tape, yv, &state.gen_yx, &bg_yx)?;
    let fake_y = tape.detach(fake_y);
    let fake_x = tape.detach(fake_x);

    let d_x = DiscPair {
        params: &state.disc_x,
        bound: &bd_x,
    };
    let d_y = DiscPair {
        params: &state.disc_y,
        bound: &bd_y,
    };
    let loss_x = discriminator_objective(&mut tape, xv, fake_x, &d_x, [seeds[0], seeds[1]])?;
    let loss_y = discriminator_objective(&mut tape, yv, fake_y, &d_y, [seeds[2], seeds[3]])?;
    let adv_d_x = tape.value(loss_x).scalar_value() as f64;
    let adv_d_y = tape.value(loss_y).scalar_value() as f64;

    let total = tape.add(loss_x, loss_y)?;
    let mut grads = tape.backward(total)?;
    Ok(DPhaseOut {
        grads_dx: state.disc_x.grad_vec(&bd_x, &mut grads),
        grads_dy: state.disc_y.grad_vec(&bd_y, &mut grads),
        adv_d_x,
        adv_d_y,
    })
}

struct GPhaseOut {
    grads_gxy: Vec<Tensor<f32>>,
    grads_gyx: Vec<Tensor<f32>>,
    adv_g: f64,
    cyc: f64,
    id: f64,
}

fn g_phase_sample(
    state: &TrainState,
    sig_x: &[f32],
    sig_y: &[f32],
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    seeds: &[u64; 2],
) -> Result<GPhaseOut, TensorError> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let yv = tape.leaf(y.clone());
    let bg_xy = state.gen_xy.bind(&mut tape);
    let bg_yx = state.gen_yx.bind(&mut tape);
    let bd_x = state.disc_x.bind(&mut tape, sig_x)?;
    let bd_y = state.disc_y.bind(&mut tape, sig_y)?;

    let vars = generator_objective(
        &mut tape,
        xv,
        yv,
        &GenPair {
            params: &state.gen_xy,
            bound: &bg_xy,
        },
        &GenPair {
            params: &state.gen_yx,
            bound: &bg_yx,
        },
        &DiscPair {
            params: &state.disc_x,
            bound: &bd_x,
        },
        &DiscPair {
            params: &state.disc_y,
            bound: &bd_y,
        },
        &state.cfg.loss_weights(),
        &state.cfg.loss_flags(),
        [seeds[0], seeds[1]],
    )?;
    let adv_g = tape.value(vars.adv_g).scalar_value() as f64;
    let cyc = tape.value(vars.cyc).scalar_value() as f64;
    let id = tape.value(vars.id).scalar_value() as f64;

    let mut grads = tape.backward(vars.total)?;
    Ok(GPhaseOut {
        grads_gxy: state.gen_xy.grad_vec(&bg_xy, &mut grads),
        grads_gyx: state.gen_yx.grad_vec(&bg_yx, &mut grads),
        adv_g,
        cyc,
        id,
    })
}

/// One optimization step: discriminators first (`d_per_g` rounds), then
/// both generators jointly. Returns the batch-averaged loss summary.
pub fn train_step(
    state: &mut TrainState,
    batch_x: &[Tensor<f32>],
    batch_y: &[Tensor<f32>],
) -> Result<LossReport, TrainError> {
    assert_eq!(batch_x.len(), batch_y.len());
    let batch = batch_x.len();
    let lr = state.learning_rate();
    let hyper = AdamHyper::from_config(&state.cfg);
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = batch_x
        .iter()
        .cloned()
        .zip(batch_y.iter().cloned())
        .collect();

    let mut adv_d_x = 0.0;
    let mut adv_d_y = 0.0;
    for _ in 0..state.cfg.d_per_g {
        // one power-iteration advance per step round, before fan-out
        let sig_x = state.disc_x.sn_refresh();
        let sig_y = state.disc_y.sn_refresh();
        let seeds: Vec<[u64; 4]> = (0..batch)
            .map(|_| std::array::from_fn(|_| state.rng.next_u64()))
            .collect();

        let outs = par_map(&pairs, |i, (x, y)| {
            d_phase_sample(state, &sig_x, &sig_y, x, y, &seeds[i])
        });
        let mut outs_ok = Vec::with_capacity(batch);
        for o in outs {
            outs_ok.push(o?);
        }

        let mut grads_dx = outs_ok[0].grads_dx.clone();
        let mut grads_dy = outs_ok[0].grads_dy.clone();
        adv_d_x = outs_ok[0].adv_d_x;
        adv_d_y = outs_ok[0].adv_d_y;
        for o in &outs_ok[1..] {
            sum_into(&mut grads_dx, &o.grads_dx);
            sum_into(&mut grads_dy, &o.grads_dy);
            adv_d_x += o.adv_d_x;
            adv_d_y += o.adv_d_y;
        }
        scale_all(&mut grads_dx, 1.0 / batch as f32);
        scale_all(&mut grads_dy, 1.0 / batch as f32);
        adv_d_x /= batch as f64;
        adv_d_y /= batch as f64;

        adam_apply(&mut state.opt_disc_x, &grads_dx, lr, &hyper, |f| {
            state.disc_x.for_each_mut(f)
        });
        adam_apply(&mut state.opt_disc_y, &grads_dy, lr, &hyper, |f| {
            state.disc_y.for_each_mut(f)
        });
    }

    // Updated discriminator weights, sigma re-estimated without advancing
    // the persistent power-iteration vectors.
    let sig_x = state.disc_x.sn_sigmas();
    let sig_y = state.disc_y.sn_sigmas();
    let seeds: Vec<[u64; 2]> = (0..batch)
        .map(|_| std::array::from_fn(|_| state.rng.next_u64()))
        .collect();

    let outs = par_map(&pairs, |i, (x, y)| {
        g_phase_sample(state, &sig_x, &sig_y, x, y, &seeds[i])
    });
    let mut outs_ok = Vec::with_capacity(batch);
    for o in outs {
        outs_ok.push(o?);
    }

    let mut grads_gxy = outs_ok[0].grads_gxy.clone();
    let mut grads_gyx = outs_ok[0].grads_gyx.clone();
    let (mut adv_g, mut cyc, mut id) = (outs_ok[0].adv_g, outs_ok[0].cyc, outs_ok[0].id);
    for o in &outs_ok[1..] {
        sum_into(&mut grads_gxy, &o.grads_gxy);
        sum_into(&mut grads_gyx, &o.grads_gyx);
        adv_g += o.adv_g;
        cyc += o.cyc;
        id += o.id;
    }
    scale_all(&mut grads_gxy, 1.0 / batch as f32);
    scale_all(&mut grads_gyx, 1.0 / batch as f32);
    adv_g /= batch as f64;
    cyc /= batch as f64;
    id /= batch as f64;

    adam_apply(&mut state.opt_gen_xy, &grads_gxy, lr, &hyper, |f| {
        state.gen_xy.for_each_mut(f)
    });
    adam_apply(&mut state.opt_gen_yx, &grads_gyx, lr, &hyper, |f| {
        state.gen_yx.for_each_mut(f)
    });

    state.global_step += 1;
    Ok(LossReport::from_components(
        adv_d_x,
        adv_d_y,
        adv_g,
        cyc,
        id,
        &state.cfg.loss_weights(),
    ))
}

/// Run a fixed number of steps, appending each report. Used by the
/// synthetic end-to-end checks and by the epoch loop.
pub fn train_steps(
    state: &mut TrainState,
    ds_x: &CorpusDataset,
    ds_y: &CorpusDataset,
    steps: usize,
    reports: &mut Vec<LossReport>,
) -> Result<(), TrainError> {
    for _ in 0..steps {
        let (bx, by) = sample_batch(
            ds_x,
            ds_y,
            state.cfg.batch_size,
            state.cfg.crop_frames,
            &mut state.rng,
        );
        let report = train_step(state, &bx, &by)?;
        reports.push(report);
    }
    Ok(())
}

/// Steps per epoch: one pass over the smaller corpus, uniform sampling
/// with replacement.
pub fn steps_per_epoch(ds_x: &CorpusDataset, ds_y: &CorpusDataset, batch_size: usize) -> usize {
    ds_x.len().min(ds_y.len()).div_ceil(batch_size).max(1)
}

/// Full training run with CSV logging, periodic checkpoints, a config
/// echo beside them, and a diagnostic checkpoint on non-finite losses.
pub fn run_training(
    state: &mut TrainState,
    ds_x: &CorpusDataset,
    ds_y: &CorpusDataset,
    out_dir: &Path,
    mut progress: impl FnMut(u64, &LossReport),
) -> Result<(), TrainError> {
    std::fs::create_dir_all(out_dir)?;
    state
        .cfg
        .save(&out_dir.join("config.cfg"))
        .map_err(|e| std::io::Error::other(e.to_string()))?;

    let log_path = out_dir.join("train_log.csv");
    let fresh_log = state.global_step == 0 || !log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;
    if fresh_log {
        writeln!(log, "{}", LossReport::csv_header())?;
    }

    let per_epoch = steps_per_epoch(ds_x, ds_y, state.cfg.batch_size);
    let total_epochs = state.cfg.epochs as u64;
    while state.epoch < total_epochs {
        for _ in 0..per_epoch {
            let (bx, by) = sample_batch(
                ds_x,
                ds_y,
                state.cfg.batch_size,
                state.cfg.crop_frames,
                &mut state.rng,
            );
            let report = match train_step(state, &bx, &by) {
                Ok(r) => r,
                Err(TrainError::Tensor(TensorError::NonFinite { .. })) => {
                    let diag = out_dir.join("diag_nonfinite.ckpt");
                    checkpoint_save(state, &diag)?;
                    return Err(TrainError::NonFinite {
                        step: state.global_step,
                        checkpoint: diag.display().to_string(),
                    });
                }
                Err(e) => return Err(e),
            };
            writeln!(log, "{}", report.csv_line(state.global_step))?;
            progress(state.global_step, &report);
        }
        state.epoch += 1;
        if state.epoch.is_multiple_of(state.cfg.checkpoint_every as u64) && state.epoch < total_epochs {
            checkpoint_save(state, &out_dir.join(format!("ckpt_epoch{}.ckpt", state.epoch)))?;
        }
    }
    log.flush()?;
    checkpoint_save(state, &out_dir.join("final.ckpt"))?;
    Ok(())
}
