//! Built-in synthetic two-speaker corpus, so the full pipeline can be
//! exercised without external recordings. Each "speaker" is a harmonic
//! stack: speaker A sits on a low fundamental with a dark spectral
//! envelope, speaker B on a higher fundamental with a bright one, which
//! puts their spectral centroids far apart.

use crate::config::RunConfig;
use crate::dataset::{DatasetItem, SpectrogramDataset};
use crate::dsp::{preprocess, stft_magnitude, DspError, StftConfig, Waveform};
use crate::rng::Rng;
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct ToySpeaker {
    pub f0_low: f64,
    pub f0_high: f64,
    pub envelope_center: f64,
    pub envelope_width: f64,
}

pub const SPEAKER_A: ToySpeaker = ToySpeaker {
    f0_low: 200.0,
    f0_high: 260.0,
    envelope_center: 1200.0,
    envelope_width: 900.0,
};

pub const SPEAKER_B: ToySpeaker = ToySpeaker {
    f0_low: 330.0,
    f0_high: 420.0,
    envelope_center: 5200.0,
    envelope_width: 1800.0,
};

/// Desk-scale configuration used with the synthetic corpus: 65 bins,
/// 3 blocks per side, 64-frame crops, batch 8.
pub fn toy_config() -> RunConfig {
    RunConfig {
        seed: 42,
        learning_rate: 5.0e-4,
        lambda_cyc: 15.0,
        ..RunConfig::desk_scale()
    }
}

/// One harmonic-stack utterance with per-harmonic random phase, a slow
/// amplitude wobble and a jittered fundamental.
pub fn synth_utterance(speaker: &ToySpeaker, samples: usize, sample_rate: u32, rng: &mut Rng) -> Waveform {
    let sr = sample_rate as f64;
    let f0 = rng.uniform(speaker.f0_low, speaker.f0_high);
    let am_rate = rng.uniform(2.0, 5.0);
    let am_phase = rng.uniform(0.0, std::f64::consts::TAU);
    let mut partials = Vec::new();
    let mut h = 1.0;
    while h * f0 < 10_000.0 {
        let f = h * f0;
        let d = (f - speaker.envelope_center) / speaker.envelope_width;
        let amp = (-d * d).exp();
        if amp > 1e-3 {
            partials.push((f, amp, rng.uniform(0.0, std::f64::consts::TAU)));
        }
        h += 1.0;
    }
    let data: Vec<f64> = (0..samples)
        .map(|i| {
            let t = i as f64 / sr;
            let am = 1.0 + 0.3 * (std::f64::consts::TAU * am_rate * t + am_phase).sin();
            let s: f64 = partials
                .iter()
                .map(|&(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin())
                .sum();
            0.5 * am * s
        })
        .collect();
    let peak = data.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-9);
    let normalized = data.iter().map(|&v| v / peak * 0.9).collect();
    Waveform {
        samples: normalized,
        sample_rate,
    }
}

/// Preprocessed spectrogram corpus of one synthetic speaker.
pub fn build_corpus(
    speaker: &ToySpeaker,
    count: usize,
    cfg: &RunConfig,
    rng: &mut Rng,
    label: &str,
) -> Result<SpectrogramDataset, DspError> {
    let stft: StftConfig = cfg.stft_config();
    let items = (0..count)
        .map(|i| {
            // 128..=196 frames at the desk-scale hop
            let frames = 128 + rng.next_below(69) as usize;
            let samples = stft.samples_for(frames);
            let wave = synth_utterance(speaker, samples, cfg.sample_rate, rng);
            let prepped = preprocess(&wave, None, &stft)?;
            let spec = stft_magnitude(&prepped, &stft)?;
            Ok(DatasetItem {
                name: format!("{label}{i:03}"),
                spec: Tensor::from_f64_tensor(&spec.mag),
            })
        })
        .collect::<Result<Vec<_>, DspError>>()?;
    Ok(SpectrogramDataset {
        stft,
        sample_rate: cfg.sample_rate,
        items,
    })
}

/// Train and held-out corpora for both synthetic speakers.
pub struct ToyCorpora {
    pub train_a: SpectrogramDataset,
    pub train_b: SpectrogramDataset,
    pub eval_a: SpectrogramDataset,
    pub eval_b: SpectrogramDataset,
}

pub fn toy_corpora(
    cfg: &RunConfig,
    train_per_speaker: usize,
    eval_per_speaker: usize,
    seed: u64,
) -> Result<ToyCorpora, DspError> {
    let mut rng = Rng::seed_from(seed);
    Ok(ToyCorpora {
        train_a: build_corpus(&SPEAKER_A, train_per_speaker, cfg, &mut rng, "a_train_")?,
        train_b: build_corpus(&SPEAKER_B, train_per_speaker, cfg, &mut rng, "b_train_")?,
        eval_a: build_corpus(&SPEAKER_A, eval_per_speaker, cfg, &mut rng, "a_eval_")?,
        eval_b: build_corpus(&SPEAKER_B, eval_per_speaker, cfg, &mut rng, "b_eval_")?,
    })
}
