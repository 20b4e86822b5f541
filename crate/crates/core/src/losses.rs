//! The composite objective: per-frame adversarial terms in plain BCE form,
//! cycle consistency augmented with discriminator feature matching, the
//! identity penalty extended to transformed inputs, and the lambda-weighted
//! total. Flags reduce the cycle and identity terms to their plain forms
//! and switch the generator's adversarial term between the non-saturating
//! default and the literal minimax form.

use crate::autodiff::{real, Real, Tape, TensorError, Var};
use crate::networks::{
    discriminator_forward, generator_forward, BoundDiscriminator, BoundGenerator,
    DiscriminatorParams, GeneratorParams,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 1.0,
            lambda_cyc: 10.0,
            lambda_id: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossFlags {
    /// Add discriminator feature-matching terms to the cycle loss.
    pub feature_matching: bool,
    /// Apply the identity penalty to transformed inputs as well.
    pub extended_identity: bool,
    /// Use the literal minimax generator term instead of the
    /// non-saturating form.
    pub saturating_adversarial: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        LossFlags {
            feature_matching: true,
            extended_identity: true,
            saturating_adversarial: false,
        }
    }
}

/// Scalar summary of one optimization step, written to the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub adv_d_x: f64,
    pub adv_d_y: f64,
    pub adv_g: f64,
    pub cyc: f64,
    pub id: f64,
    pub total: f64,
}

impl LossReport {
    pub fn from_components(adv_d_x: f64, adv_d_y: f64, adv_g: f64, cyc: f64, id: f64, w: &LossWeights) -> Self {
        LossReport {
            adv_d_x,
            adv_d_y,
            adv_g,
            cyc,
            id,
            total: w.lambda_adv * adv_g + w.lambda_cyc * cyc + w.lambda_id * id,
        }
    }

    pub fn csv_header() -> &'static str {
        "step,adv_d_x,adv_d_y,adv_g,cyc,id,total"
    }

    pub fn csv_line(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            self.adv_d_x, self.adv_d_y, self.adv_g, self.cyc, self.id, self.total
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvSide {
    Discriminator,
    Generator,
}

/// Adversarial loss over per-frame logits.
///
/// Discriminator side: `bce(real, 1) + bce(fake, 0)`. Generator side
/// (non-saturating): `bce(fake, 1)`; with `saturating`, the literal
/// `-bce(fake, 0)`. Real logits are ignored on the generator side.
pub fn adversarial_loss<R: Real>(
    tape: &mut Tape<R>,
    d_real_logits: Var,
    d_fake_logits: Var,
    side: AdvSide,
    saturating: bool,
) -> Result<Var, TensorError> {
    match side {
        AdvSide::Discriminator => {
            let on_real = tape.bce_with_logits(d_real_logits, true)?;
            let on_fake = tape.bce_with_logits(d_fake_logits, false)?;
            tape.add(on_real, on_fake)
        }
        AdvSide::Generator => {
            if saturating {
                let fooled = tape.bce_with_logits(d_fake_logits, false)?;
                tape.scale(fooled, -R::ONE)
            } else {
                tape.bce_with_logits(d_fake_logits, true)
            }
        }
    }
}

/// Generator parameters plus their handles on the active tape.
pub struct GenPair<'a, R: Real> {
    pub params: &'a GeneratorParams<R>,
    pub bound: &'a BoundGenerator,
}

impl<'a, R: Real> GenPair<'a, R> {
    pub fn forward(&self, tape: &mut Tape<R>, x: Var) -> Result<Var, TensorError> {
        generator_forward(tape, x, self.params, self.bound)
    }
}

/// Discriminator parameters plus their handles on the active tape.
pub struct DiscPair<'a, R: Real> {
    pub params: &'a DiscriminatorParams<R>,
    pub bound: &'a BoundDiscriminator,
}

impl<'a, R: Real> DiscPair<'a, R> {
    pub fn forward(
        &self,
        tape: &mut Tape<R>,
        x: Var,
        noise_seed: u64,
        training: bool,
    ) -> Result<crate::networks::DiscriminatorOutput, TensorError> {
        discriminator_forward(tape, x, self.params, self.bound, noise_seed, training)
    }
}

/// Mean over blocks of the L1 distance between the feature maps of
/// `probe` and the detached feature maps of `target`. Both forwards run
/// noise-free so the targets are deterministic constants.
fn feature_match_term<R: Real>(
    tape: &mut Tape<R>,
    disc: &DiscPair<R>,
    probe: Var,
    target: Var,
) -> Result<Var, TensorError> {
    let probe_out = disc.forward(tape, probe, 0, false)?;
    let target_out = disc.forward(tape, target, 0, false)?;
    let blocks = probe_out.features.len();
    let mut acc: Option<Var> = None;
    for (pf, tf) in probe_out.features.iter().zip(&target_out.features) {
        let frozen = tape.detach(*tf);
        let term = tape.l1_loss(*pf, frozen)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let sum = acc.expect("feature list is never empty");
    tape.scale(sum, real::<R>(1.0 / blocks as f64))
}

/// Round-trip reconstruction penalty, optionally with feature matching:
/// `L1(G_yx(G_xy(x)), x) + L1(G_xy(G_yx(y)), y)` plus, when enabled, the
/// per-block feature distances of each cycled sample against its original
/// under the matching discriminator.
#[allow(clippy::too_many_arguments)]
pub fn cycle_loss<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    y: Var,
    g_xy: &GenPair<R>,
    g_yx: &GenPair<R>,
    d_x: &DiscPair<R>,
    d_y: &DiscPair<R>,
    feature_matching: bool,
) -> Result<Var, TensorError> {
    let fake_y = g_xy.forward(tape, x)?;
    let fake_x = g_yx.forward(tape, y)?;
    let cycled_x = g_yx.forward(tape, fake_y)?;
    let cycled_y = g_xy.forward(tape, fake_x)?;
    cycle_loss_from_parts(
        tape,
        x,
        y,
        cycled_x,
        cycled_y,
        d_x,
        d_y,
        feature_matching,
    )
}

/// Same as [`cycle_loss`] but reusing already-computed cycled samples.
#[allow(clippy::too_many_arguments)]
pub fn cycle_loss_from_parts<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    y: Var,
    cycled_x: Var,
    cycled_y: Var,
    d_x: &DiscPair<R>,
    d_y: &DiscPair<R>,
    feature_matching: bool,
) -> Result<Var, TensorError> {
    let rec_x = tape.l1_loss(cycled_x, x)?;
    let rec_y = tape.l1_loss(cycled_y, y)?;
    let mut total = tape.add(rec_x, rec_y)?;
    if feature_matching {
        let fm_x = feature_match_term(tape, d_x, cycled_x, x)?;
        let fm_y = feature_match_term(tape, d_y, cycled_y, y)?;
        total = tape.add(total, fm_x)?;
        total = tape.add(total, fm_y)?;
    }
    Ok(total)
}

/// Identity penalty: each generator should leave native-domain inputs
/// alone, and with `extended`, leave its own outputs alone too. Gradients
/// flow through both applications of the doubled terms.
pub fn identity_loss<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    y: Var,
    g_xy: &GenPair<R>,
    g_yx: &GenPair<R>,
    extended: bool,
) -> Result<Var, TensorError> {
    let fake_y = g_xy.forward(tape, x)?;
    let fake_x = g_yx.forward(tape, y)?;
    identity_loss_from_parts(tape, x, y, fake_y, fake_x, g_xy, g_yx, extended)
}

/// Same as [`identity_loss`] but reusing already-computed transforms.
#[allow(clippy::too_many_arguments)]
pub fn identity_loss_from_parts<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    y: Var,
    fake_y: Var,
    fake_x: Var,
    g_xy: &GenPair<R>,
    g_yx: &GenPair<R>,
    extended: bool,
) -> Result<Var, TensorError> {
    let id_y = g_xy.forward(tape, y)?;
    let id_x = g_yx.forward(tape, x)?;
    let on_y = tape.l1_loss(id_y, y)?;
    let on_x = tape.l1_loss(id_x, x)?;
    let mut total = tape.add(on_y, on_x)?;
    if extended {
        let re_y = g_xy.forward(tape, fake_y)?;
        let re_x = g_yx.forward(tape, fake_x)?;
        let on_fake_y = tape.l1_loss(re_y, fake_y)?;
        let on_fake_x = tape.l1_loss(re_x, fake_x)?;
        total = tape.add(total, on_fake_y)?;
        total = tape.add(total, on_fake_x)?;
    }
    Ok(total)
}

/// `lambda_adv * adv_g + lambda_cyc * cyc + lambda_id * id`.
pub fn total_generator_loss<R: Real>(
    tape: &mut Tape<R>,
    adv_g: Var,
    cyc: Var,
    id: Var,
    w: &LossWeights,
) -> Result<Var, TensorError> {
    let a = tape.scale(adv_g, real::<R>(w.lambda_adv))?;
    let c = tape.scale(cyc, real::<R>(w.lambda_cyc))?;
    let i = tape.scale(id, real::<R>(w.lambda_id))?;
    let ac = tape.add(a, c)?;
    tape.add(ac, i)
}

/// Scalar handles of one generator-side objective evaluation.
pub struct GeneratorLossVars {
    pub adv_g: Var,
    pub cyc: Var,
    pub id: Var,
    pub total: Var,
}

/// Full generator objective for one `(x, y)` pair, sharing the generator
/// forwards between the cycle, identity and adversarial paths.
/// `noise_seeds` feed the two noisy adversarial discriminator forwards.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    y: Var,
    g_xy: &GenPair<R>,
    g_yx: &GenPair<R>,
    d_x: &DiscPair<R>,
    d_y: &DiscPair<R>,
    weights: &LossWeights,
    flags: &LossFlags,
    noise_seeds: [u64; 2],
) -> Result<GeneratorLossVars, TensorError> {
    let fake_y = g_xy.forward(tape, x)?;
    let fake_x = g_yx.forward(tape, y)?;
    let cycled_x = g_yx.forward(tape, fake_y)?;
    let cycled_y = g_xy.forward(tape, fake_x)?;

    let d_fake_y = d_y.forward(tape, fake_y, noise_seeds[0], true)?;
    let d_fake_x = d_x.forward(tape, fake_x, noise_seeds[1], true)?;
    let adv_y = adversarial_loss(
        tape,
        d_fake_y.logits,
        d_fake_y.logits,
        AdvSide::Generator,
        flags.saturating_adversarial,
    )?;
    let adv_x = adversarial_loss(
        tape,
        d_fake_x.logits,
        d_fake_x.logits,
        AdvSide::Generator,
        flags.saturating_adversarial,
    )?;
    let adv_g = tape.add(adv_y, adv_x)?;

    let cyc = cycle_loss_from_parts(
        tape,
        x,
        y,
        cycled_x,
        cycled_y,
        d_x,
        d_y,
        flags.feature_matching,
    )?;
    let id = identity_loss_from_parts(
        tape,
        x,
        y,
        fake_y,
        fake_x,
        g_xy,
        g_yx,
        flags.extended_identity,
    )?;
    let total = total_generator_loss(tape, adv_g, cyc, id, weights)?;
    Ok(GeneratorLossVars {
        adv_g,
        cyc,
        id,
        total,
    })
}

/// Discriminator objective for one sample pair: real towards 1, detached
/// fake towards 0, both forwards noisy (training mode).
pub fn discriminator_objective<R: Real>(
    tape: &mut Tape<R>,
    real_input: Var,
    fake_input_detached: Var,
    disc: &DiscPair<R>,
    noise_seeds: [u64; 2],
) -> Result<Var, TensorError> {
    let on_real = disc.forward(tape, real_input, noise_seeds[0], true)?;
    let on_fake = disc.forward(tape, fake_input_detached, noise_seeds[1], true)?;
    adversarial_loss(
        tape,
        on_real.logits,
        on_fake.logits,
        AdvSide::Discriminator,
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::networks::{DiscriminatorConfig, GeneratorConfig};
    use crate::rng::Rng;
    use std::f64::consts::LN_2;

    fn tiny_gen_cfg() -> GeneratorConfig {
        let mut cfg = GeneratorConfig::new(6);
        cfg.num_blocks = 2;
        cfg.temporal_kernel = 5;
        cfg
    }

    fn tiny_disc_cfg() -> DiscriminatorConfig {
        let mut cfg = DiscriminatorConfig::new(6);
        cfg.num_blocks = 3;
        cfg.kernel = 3;
        cfg
    }

    fn nonneg_input(c: usize, t: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::seed_from(seed);
        Tensor::from_fn(&[c, t], |_| rng.uniform(0.0, 2.0))
    }

    #[test]
    fn zero_logits_give_ln2_losses() {
        let mut tape = Tape::<f64>::new();
        let real = tape.leaf(Tensor::zeros(&[1, 10]));
        let fake = tape.leaf(Tensor::zeros(&[1, 10]));
        let d = adversarial_loss(&mut tape, real, fake, AdvSide::Discriminator, false).unwrap();
        assert!((tape.value(d).scalar_value() - 2.0 * LN_2).abs() < 1e-14);
        let g = adversarial_loss(&mut tape, real, fake, AdvSide::Generator, false).unwrap();
        assert!((tape.value(g).scalar_value() - LN_2).abs() < 1e-14);
    }

    #[test]
    fn confident_discriminator_loss_vanishes() {
        let mut tape = Tape::new();
        let real = tape.leaf(Tensor::filled(&[1, 4], 40.0));
        let fake = tape.leaf(Tensor::filled(&[1, 4], -40.0));
        let d = adversarial_loss(&mut tape, real, fake, AdvSide::Discriminator, false).unwrap();
        assert!(tape.value(d).scalar_value() < 1e-15);
    }

    #[test]
    fn adversarial_loss_matches_scalar_softplus_oracle() {
        let mut rng = Rng::seed_from(70);
        let real = Tensor::from_fn(&[1, 9], |_| rng.uniform(-4.0, 4.0));
        let fake = Tensor::from_fn(&[1, 9], |_| rng.uniform(-4.0, 4.0));
        let softplus = |t: f64| t.max(0.0) + (-t.abs()).exp().ln_1p();
        let want_d = real.data().iter().map(|&z| softplus(-z)).sum::<f64>() / 9.0
            + fake.data().iter().map(|&z| softplus(z)).sum::<f64>() / 9.0;
        let want_g = fake.data().iter().map(|&z| softplus(-z)).sum::<f64>() / 9.0;
        let want_g_sat = -fake.data().iter().map(|&z| softplus(z)).sum::<f64>() / 9.0;

        let mut tape = Tape::new();
        let rv = tape.leaf(real);
        let fv = tape.leaf(fake);
        let d = adversarial_loss(&mut tape, rv, fv, AdvSide::Discriminator, false).unwrap();
        let g = adversarial_loss(&mut tape, rv, fv, AdvSide::Generator, false).unwrap();
        let g_sat = adversarial_loss(&mut tape, rv, fv, AdvSide::Generator, true).unwrap();
        assert!((tape.value(d).scalar_value() - want_d).abs() < 1e-12);
        assert!((tape.value(g).scalar_value() - want_g).abs() < 1e-12);
        assert!((tape.value(g_sat).scalar_value() - want_g_sat).abs() < 1e-12);
    }

    struct Nets {
        g_xy: GeneratorParams<f64>,
        g_yx: GeneratorParams<f64>,
        d_x: DiscriminatorParams<f64>,
        d_y: DiscriminatorParams<f64>,
        sig_x: Vec<f64>,
        sig_y: Vec<f64>,
    }

    fn random_nets(seed: u64) -> Nets {
        let mut rng = Rng::seed_from(seed);
        let gcfg = tiny_gen_cfg();
        let dcfg = tiny_disc_cfg();
        let g_xy = GeneratorParams::init(&gcfg, &mut rng);
        let g_yx = GeneratorParams::init(&gcfg, &mut rng);
        let mut d_x = DiscriminatorParams::init(&dcfg, &mut rng);
        let mut d_y = DiscriminatorParams::init(&dcfg, &mut rng);
        let sig_x = d_x.sn_refresh();
        let sig_y = d_y.sn_refresh();
        Nets {
            g_xy,
            g_yx,
            d_x,
            d_y,
            sig_x,
            sig_y,
        }
    }

    fn identity_nets(seed: u64) -> Nets {
        let mut nets = random_nets(seed);
        let gcfg = tiny_gen_cfg();
        nets.g_xy = GeneratorParams::identity(&gcfg);
        nets.g_yx = GeneratorParams::identity(&gcfg);
        nets
    }

    /// Evaluate cycle and identity losses on fresh tapes.
    fn eval_losses(nets: &Nets, x: &Tensor<f64>, y: &Tensor<f64>, flags: &LossFlags) -> (f64, f64) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(y.clone());
        let bg_xy = nets.g_xy.bind(&mut tape);
        let bg_yx = nets.g_yx.bind(&mut tape);
        let bd_x = nets.d_x.bind(&mut tape, &nets.sig_x).unwrap();
        let bd_y = nets.d_y.bind(&mut tape, &nets.sig_y).unwrap();
        let g_xy = GenPair {
            params: &nets.g_xy,
            bound: &bg_xy,
        };
        let g_yx = GenPair {
            params: &nets.g_yx,
            bound: &bg_yx,
        };
        let d_x = DiscPair {
            params: &nets.d_x,
            bound: &bd_x,
        };
        let d_y = DiscPair {
            params: &nets.d_y,
            bound: &bd_y,
        };
        let cyc = cycle_loss(
            &mut tape,
            xv,
            yv,
            &g_xy,
            &g_yx,
            &d_x,
            &d_y,
            flags.feature_matching,
        )
        .unwrap();
        let id = identity_loss(&mut tape, xv, yv, &g_xy, &g_yx, flags.extended_identity).unwrap();
        (
            tape.value(cyc).scalar_value(),
            tape.value(id).scalar_value(),
        )
    }

    #[test]
    fn identity_generators_zero_the_cycle_and_identity_terms() {
        let nets = identity_nets(71);
        let x = nonneg_input(6, 7, 72);
        let y = nonneg_input(6, 7, 73);
        let (cyc, id) = eval_losses(&nets, &x, &y, &LossFlags::default());
        assert_eq!(cyc, 0.0);
        assert_eq!(id, 0.0);
    }

    #[test]
    fn disabling_feature_matching_recovers_the_plain_cycle_loss() {
        let nets = random_nets(74);
        let x = nonneg_input(6, 5, 75);
        let y = nonneg_input(6, 5, 76);
        let flags_off = LossFlags {
            feature_matching: false,
            ..Default::default()
        };
        let (cyc_off, _) = eval_losses(&nets, &x, &y, &flags_off);

        // plain form recomputed from raw generator round trips
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(y.clone());
        let bg_xy = nets.g_xy.bind(&mut tape);
        let bg_yx = nets.g_yx.bind(&mut tape);
        let g_xy = GenPair {
            params: &nets.g_xy,
            bound: &bg_xy,
        };
        let g_yx = GenPair {
            params: &nets.g_yx,
            bound: &bg_yx,
        };
        let fake_y = g_xy.forward(&mut tape, xv).unwrap();
        let fake_x = g_yx.forward(&mut tape, yv).unwrap();
        let cycled_x = g_yx.forward(&mut tape, fake_y).unwrap();
        let cycled_y = g_xy.forward(&mut tape, fake_x).unwrap();
        let l1x = tape.l1_loss(cycled_x, xv).unwrap();
        let l1y = tape.l1_loss(cycled_y, yv).unwrap();
        let want = tape.add(l1x, l1y).unwrap();
        assert!((cyc_off - tape.value(want).scalar_value()).abs() < 1e-12);

        let (cyc_on, _) = eval_losses(&nets, &x, &y, &LossFlags::default());
        assert!(cyc_on >= cyc_off);
    }

    #[test]
    fn disabling_extension_recovers_the_plain_identity_loss() {
        let nets = random_nets(77);
        let x = nonneg_input(6, 5, 78);
        let y = nonneg_input(6, 5, 79);
        let flags_off = LossFlags {
            extended_identity: false,
            ..Default::default()
        };
        let (_, id_off) = eval_losses(&nets, &x, &y, &flags_off);

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(y.clone());
        let bg_xy = nets.g_xy.bind(&mut tape);
        let bg_yx = nets.g_yx.bind(&mut tape);
        let g_xy = GenPair {
            params: &nets.g_xy,
            bound: &bg_xy,
        };
        let g_yx = GenPair {
            params: &nets.g_yx,
            bound: &bg_yx,
        };
        let id_y = g_xy.forward(&mut tape, yv).unwrap();
        let id_x = g_yx.forward(&mut tape, xv).unwrap();
        let a = tape.l1_loss(id_y, yv).unwrap();
        let b = tape.l1_loss(id_x, xv).unwrap();
        let want = tape.add(a, b).unwrap();
        assert!((id_off - tape.value(want).scalar_value()).abs() < 1e-12);
    }

    #[test]
    fn losses_match_a_from_scratch_recomposition() {
        let nets = random_nets(80);
        let x = nonneg_input(6, 4, 81);
        let y = nonneg_input(6, 4, 82);
        let (cyc, id) = eval_losses(&nets, &x, &y, &LossFlags::default());

        // from-scratch recomputation with plain tensor arithmetic
        let fwd = |p: &GeneratorParams<f64>, input: &Tensor<f64>| -> Tensor<f64> {
            let mut tape = Tape::new();
            let iv = tape.leaf(input.clone());
            let b = p.bind(&mut tape);
            let o = generator_forward(&mut tape, iv, p, &b).unwrap();
            tape.value(o).clone()
        };
        let disc_features = |p: &DiscriminatorParams<f64>,
                             sig: &[f64],
                             input: &Tensor<f64>|
         -> Vec<Tensor<f64>> {
            let mut tape = Tape::new();
            let iv = tape.leaf(input.clone());
            let b = p.bind(&mut tape, sig).unwrap();
            let o = discriminator_forward(&mut tape, iv, p, &b, 0, false).unwrap();
            o.features.iter().map(|&f| tape.value(f).clone()).collect()
        };
        let l1 = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / a.numel() as f64
        };

        let fake_y = fwd(&nets.g_xy, &x);
        let fake_x = fwd(&nets.g_yx, &y);
        let cycled_x = fwd(&nets.g_yx, &fake_y);
        let cycled_y = fwd(&nets.g_xy, &fake_x);
        let mut want_cyc = l1(&cycled_x, &x) + l1(&cycled_y, &y);
        let fc = disc_features(&nets.d_x, &nets.sig_x, &cycled_x);
        let fr = disc_features(&nets.d_x, &nets.sig_x, &x);
        want_cyc += fc.iter().zip(&fr).map(|(a, b)| l1(a, b)).sum::<f64>() / fc.len() as f64;
        let gc = disc_features(&nets.d_y, &nets.sig_y, &cycled_y);
        let gr = disc_features(&nets.d_y, &nets.sig_y, &y);
        want_cyc += gc.iter().zip(&gr).map(|(a, b)| l1(a, b)).sum::<f64>() / gc.len() as f64;
        assert!((cyc - want_cyc).abs() < 1e-10, "{cyc} vs {want_cyc}");

        let want_id = l1(&fwd(&nets.g_xy, &y), &y)
            + l1(&fwd(&nets.g_yx, &x), &x)
            + l1(&fwd(&nets.g_xy, &fake_y), &fake_y)
            + l1(&fwd(&nets.g_yx, &fake_x), &fake_x);
        assert!((id - want_id).abs() < 1e-10, "{id} vs {want_id}");
    }

    #[test]
    fn total_is_the_exact_weighted_sum() {
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let adv = tape.leaf(Tensor::scalar(0.7));
        let cyc = tape.leaf(Tensor::scalar(0.2));
        let id = tape.leaf(Tensor::scalar(0.1));
        let total = total_generator_loss(&mut tape, adv, cyc, id, &w).unwrap();
        assert_eq!(tape.value(total).scalar_value(), 0.7 + 2.0 + 0.1);

        let zero = LossWeights {
            lambda_adv: 0.0,
            lambda_cyc: 0.0,
            lambda_id: 0.0,
        };
        let total = total_generator_loss(&mut tape, adv, cyc, id, &zero).unwrap();
        assert_eq!(tape.value(total).scalar_value(), 0.0);

        let only_adv = LossWeights {
            lambda_adv: 1.0,
            lambda_cyc: 0.0,
            lambda_id: 0.0,
        };
        let total = total_generator_loss(&mut tape, adv, cyc, id, &only_adv).unwrap();
        assert_eq!(tape.value(total).scalar_value(), 0.7);
    }

    #[test]
    fn swapping_domains_leaves_the_total_invariant() {
        let nets = random_nets(83);
        let x = nonneg_input(6, 5, 84);
        let y = nonneg_input(6, 5, 85);
        let flags = LossFlags::default();
        let weights = LossWeights::default();

        let run = |x: &Tensor<f64>,
                   y: &Tensor<f64>,
                   g_xy: &GeneratorParams<f64>,
                   g_yx: &GeneratorParams<f64>,
                   d_x: &DiscriminatorParams<f64>,
                   sig_x: &[f64],
                   d_y: &DiscriminatorParams<f64>,
                   sig_y: &[f64]|
         -> f64 {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let yv = tape.leaf(y.clone());
            let bg_xy = g_xy.bind(&mut tape);
            let bg_yx = g_yx.bind(&mut tape);
            let bd_x = d_x.bind(&mut tape, sig_x).unwrap();
            let bd_y = d_y.bind(&mut tape, sig_y).unwrap();
            let vars = generator_objective(
                &mut tape,
                xv,
                yv,
                &GenPair {
                    params: g_xy,
                    bound: &bg_xy,
                },
                &GenPair {
                    params: g_yx,
                    bound: &bg_yx,
                },
                &DiscPair {
                    params: d_x,
                    bound: &bd_x,
                },
                &DiscPair {
                    params: d_y,
                    bound: &bd_y,
                },
                &weights,
                &flags,
                [111, 111],
            )
            .unwrap();
            tape.value(vars.total).scalar_value()
        };

        let forward = run(
            &x, &y, &nets.g_xy, &nets.g_yx, &nets.d_x, &nets.sig_x, &nets.d_y, &nets.sig_y,
        );
        let swapped = run(
            &y, &x, &nets.g_yx, &nets.g_xy, &nets.d_y, &nets.sig_y, &nets.d_x, &nets.sig_x,
        );
        assert!((forward - swapped).abs() < 1e-12, "{forward} vs {swapped}");
    }

    #[test]
    fn report_total_identity_is_exact() {
        let w = LossWeights::default();
        let r = LossReport::from_components(0.3, 0.4, 1.25, 0.5, 0.125, &w);
        assert_eq!(r.total, w.lambda_adv * 1.25 + w.lambda_cyc * 0.5 + w.lambda_id * 0.125);
        assert_eq!(LossReport::csv_header().split(',').count(), 7);
        assert_eq!(r.csv_line(12).split(',').count(), 7);
    }

    #[test]
    fn losses_stay_finite_for_extreme_logits() {
        let mut tape = Tape::new();
        let real = tape.leaf(Tensor::filled(&[1, 3], 500.0));
        let fake = tape.leaf(Tensor::filled(&[1, 3], -500.0));
        let d = adversarial_loss(&mut tape, real, fake, AdvSide::Discriminator, false).unwrap();
        assert!(tape.value(d).scalar_value().is_finite());
        let g = adversarial_loss(&mut tape, fake, real, AdvSide::Generator, false).unwrap();
        assert!(tape.value(g).scalar_value().is_finite());
    }
}
