//! Waveform <-> spectrogram boundary: ingestion, short-time Fourier
//! analysis, Griffin-Lim synthesis, and mel filterbank features.
//!
//! Analysis uses a periodic Hann window with no center padding, so frame
//! `t` covers samples `[t * hop, t * hop + window)` and a signal of `N`
//! samples yields `1 + floor((N - window) / hop)` frames. Synthesis is
//! windowed overlap-add divided by the summed squared window envelope.
//! All arithmetic here runs in `f64`; the model side converts to `f32` at
//! the dataset boundary.

use crate::autodiff::Tensor;
use crate::rng::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;
/// Peak amplitude after normalization.
pub const PEAK_TARGET: f64 = 0.95;
/// Leading-silence threshold relative to peak (-40 dBFS).
pub const SILENCE_THRESHOLD: f64 = 0.01;
/// Mel energy floor before the log.
pub const LOG_MEL_FLOOR: f64 = 1e-5;
/// Overlap-add envelope floor.
const OLA_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty waveform")]
    EmptyInput,
    #[error("waveform is empty after silence trimming")]
    EmptyAfterTrim,
    #[error("waveform of {len} samples is shorter than one window ({window})")]
    TooShort { len: usize, window: usize },
    #[error("f_max {f_max} Hz exceeds the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { f_max: f64, nyquist: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("non-finite sample values")]
    NonFinite,
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("WAV I/O: {0}")]
    Wav(#[from] hound::Error),
}

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::BadConfig("sample_rate must be positive".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(DspError::NonFinite);
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Analysis geometry: window length, hop, Hann taper.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_length: 1024,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, hop: usize) -> Result<Self, DspError> {
        if window_length == 0 || !window_length.is_multiple_of(2) {
            return Err(DspError::BadConfig(format!(
                "window_length must be positive and even, got {window_length}"
            )));
        }
        if hop == 0 || hop > window_length {
            return Err(DspError::BadConfig(format!(
                "hop must be in 1..={window_length}, got {hop}"
            )));
        }
        Ok(StftConfig { window_length, hop })
    }

    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// `1 + floor((n - window) / hop)`; zero when the signal is shorter
    /// than one window.
    pub fn frames_for(&self, n: usize) -> usize {
        if n < self.window_length {
            0
        } else {
            1 + (n - self.window_length) / self.hop
        }
    }

    /// Exact sample count that yields `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        debug_assert!(frames > 0);
        self.window_length + (frames - 1) * self.hop
    }

    /// Periodic Hann taper.
    pub fn hann(&self) -> Vec<f64> {
        let n = self.window_length;
        (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect()
    }
}

/// Linear magnitude spectrogram, `bins x frames`, all entries >= 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub mag: Tensor<f64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn new(mag: Tensor<f64>, config: StftConfig) -> Result<Self, DspError> {
        if mag.rank() != 2 || mag.rows() != config.bins() {
            return Err(DspError::ShapeMismatch(format!(
                "magnitude shape {:?}, expected [{} x frames]",
                mag.shape(),
                config.bins()
            )));
        }
        if !mag.data().iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(DspError::ShapeMismatch(
                "magnitudes must be finite and nonnegative".into(),
            ));
        }
        Ok(Spectrogram { mag, config })
    }

    pub fn bins(&self) -> usize {
        self.mag.rows()
    }

    pub fn frames(&self) -> usize {
        self.mag.cols()
    }
}

/// Triangular mel filterbank, `n_mels x bins`, peak weight 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub weights: Tensor<f64>,
    pub f_min: f64,
    pub f_max: f64,
    /// Center frequency of each filter, strictly increasing.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn bins(&self) -> usize {
        self.weights.cols()
    }
}

/// Log-compressed mel spectrogram, `n_mels x frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub logmel: Tensor<f64>,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.logmel.rows()
    }

    pub fn frames(&self) -> usize {
        self.logmel.cols()
    }

    /// One frame as a contiguous slice.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        (0..self.n_mels()).map(|m| self.logmel.row(m)[t]).collect()
    }
}

fn rms(chunk: &[f64]) -> f64 {
    if chunk.is_empty() {
        return 0.0;
    }
    (chunk.iter().map(|v| v * v).sum::<f64>() / chunk.len() as f64).sqrt()
}

/// Trim leading silence (whole 10 ms windows below -40 dBFS relative to
/// peak), normalize the peak to 0.95, and zero-pad the tail so analysis
/// yields exactly `target_frames` frames (truncating when longer), or the
/// next whole frame count when no target is given.
pub fn preprocess(
    wave: &Waveform,
    target_frames: Option<usize>,
    cfg: &StftConfig,
) -> Result<Waveform, DspError> {
    if wave.is_empty() {
        return Err(DspError::EmptyInput);
    }
    let peak = wave.samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak == 0.0 {
        return Err(DspError::EmptyAfterTrim);
    }

    // Leading-silence trim at 10 ms window granularity.
    let win = (wave.sample_rate as usize / 100).max(1);
    let threshold = SILENCE_THRESHOLD * peak;
    let mut start = None;
    let mut pos = 0;
    while pos < wave.samples.len() {
        let end = (pos + win).min(wave.samples.len());
        if rms(&wave.samples[pos..end]) >= threshold {
            start = Some(pos);
            break;
        }
        pos = end;
    }
    let start = start.ok_or(DspError::EmptyAfterTrim)?;
    let trimmed = &wave.samples[start..];

    // Peak-normalize; an already-normalized signal passes through
    // unchanged so the whole preprocess is idempotent.
    let peak = trimmed.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak == 0.0 {
        return Err(DspError::EmptyAfterTrim);
    }
    let mut samples: Vec<f64> = if peak == PEAK_TARGET {
        trimmed.to_vec()
    } else {
        trimmed.iter().map(|&v| v / peak * PEAK_TARGET).collect()
    };

    // Pad (or truncate, when a target is given) to a whole frame count.
    let target_len = match target_frames {
        Some(frames) => {
            if frames == 0 {
                return Err(DspError::BadConfig("target_frames must be positive".into()));
            }
            cfg.samples_for(frames)
        }
        None => {
            if samples.len() <= cfg.window_length {
                cfg.window_length
            } else {
                let over = samples.len() - cfg.window_length;
                cfg.window_length + over.div_ceil(cfg.hop) * cfg.hop
            }
        }
    };
    if samples.len() > target_len {
        samples.truncate(target_len);
    } else {
        samples.resize(target_len, 0.0);
    }
    Waveform::new(samples, wave.sample_rate)
}

struct StftKernel {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftKernel {
    fn new(cfg: StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        StftKernel {
            cfg,
            window: cfg.hann(),
            forward: planner.plan_fft_forward(cfg.window_length),
            inverse: planner.plan_fft_inverse(cfg.window_length),
        }
    }

    /// Complex half-spectra, one `bins`-length vector per frame.
    fn analyze(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = self.cfg.window_length;
        let bins = self.cfg.bins();
        let frames = self.cfg.frames_for(samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        (0..frames)
            .map(|t| {
                let base = t * self.cfg.hop;
                for i in 0..n {
                    buf[i] = Complex::new(samples[base + i] * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..bins].to_vec()
            })
            .collect()
    }

    /// Least-squares inverse: windowed overlap-add over the frame
    /// reconstructions, divided by the accumulated squared window.
    fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let n = self.cfg.window_length;
        let hop = self.cfg.hop;
        let frames = spectra.len();
        debug_assert!(frames > 0);
        let out_len = self.cfg.samples_for(frames);
        let mut num = vec![0.0f64; out_len];
        let mut den = vec![0.0f64; out_len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for (t, half) in spectra.iter().enumerate() {
            // rebuild the full Hermitian spectrum from the half
            buf[..half.len()].copy_from_slice(half);
            for k in 1..n / 2 {
                buf[n - k] = half[k].conj();
            }
            self.inverse.process(&mut buf);
            let base = t * hop;
            for i in 0..n {
                let frame_val = buf[i].re * scale;
                num[base + i] += frame_val * self.window[i];
                den[base + i] += self.window[i] * self.window[i];
            }
        }
        num.iter()
            .zip(&den)
            .map(|(&v, &d)| v / d.max(OLA_FLOOR))
            .collect()
    }
}

/// Hann-windowed magnitude spectrogram with no center padding.
pub fn stft_magnitude(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram, DspError> {
    if wave.len() < cfg.window_length {
        return Err(DspError::TooShort {
            len: wave.len(),
            window: cfg.window_length,
        });
    }
    let kernel = StftKernel::new(*cfg);
    let spectra = kernel.analyze(&wave.samples);
    let frames = spectra.len();
    let bins = cfg.bins();
    let mut mag = Tensor::zeros(&[bins, frames]);
    for (t, frame) in spectra.iter().enumerate() {
        for (k, c) in frame.iter().enumerate() {
            mag.row_mut(k)[t] = c.norm();
        }
    }
    Spectrogram::new(mag, *cfg)
}

/// Frobenius distance between the analyzed magnitude and the target,
/// relative to the target norm.
fn spectral_convergence(spectra: &[Vec<Complex<f64>>], target: &Spectrogram) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, frame) in spectra.iter().enumerate() {
        for (k, c) in frame.iter().enumerate() {
            let m = target.mag.row(k)[t];
            let d = c.norm() - m;
            num += d * d;
            den += m * m;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Iterative phase reconstruction, returning the waveform and
/// the spectral-convergence error after the initial guess and after each
/// iteration (`iterations + 1` entries).
pub fn griffin_lim_trace(
    mag: &Spectrogram,
    iterations: usize,
    seed: u64,
) -> Result<(Waveform, Vec<f64>), DspError> {
    let cfg = mag.config;
    let frames = mag.frames();
    if frames == 0 {
        return Err(DspError::ShapeMismatch("no frames to invert".into()));
    }
    let kernel = StftKernel::new(cfg);
    let bins = cfg.bins();

    // Deterministic uniform phase init.
    let mut rng = Rng::seed_from(seed);
    let mut spectra: Vec<Vec<Complex<f64>>> = (0..frames)
        .map(|t| {
            (0..bins)
                .map(|k| {
                    let phase = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
                    Complex::from_polar(mag.mag.row(k)[t], phase)
                })
                .collect()
        })
        .collect();

    let mut errors = Vec::with_capacity(iterations + 1);
    let mut samples = kernel.synthesize(&spectra);
    let mut analyzed = kernel.analyze(&samples);
    errors.push(spectral_convergence(&analyzed, mag));

    for _ in 0..iterations {
        // keep the target magnitude, adopt the analyzed phase
        for (frame, target_frame) in spectra.iter_mut().zip(analyzed.iter()) {
            for (k, slot) in frame.iter_mut().enumerate() {
                let m = slot.norm();
                let phase = target_frame[k].arg();
                *slot = Complex::from_polar(m, phase);
            }
        }
        samples = kernel.synthesize(&spectra);
        analyzed = kernel.analyze(&samples);
        errors.push(spectral_convergence(&analyzed, mag));
    }

    let wave = Waveform::new(samples, DEFAULT_SAMPLE_RATE)?;
    Ok((wave, errors))
}

/// Waveform whose analysis magnitude approximates `mag`, after the given
/// number of projection iterations from a seeded random phase.
pub fn griffin_lim(mag: &Spectrogram, iterations: usize, seed: u64) -> Result<Waveform, DspError> {
    griffin_lim_trace(mag, iterations, seed).map(|(wave, _)| wave)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with peak value 1, centers equally spaced on the
/// mel scale between `f_min` and `f_max`.
pub fn mel_matrix(
    n_mels: usize,
    bins: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank, DspError> {
    if n_mels == 0 {
        return Err(DspError::BadConfig("n_mels must be positive".into()));
    }
    if bins < 2 {
        return Err(DspError::BadConfig("need at least 2 bins".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if f_max > nyquist {
        return Err(DspError::AboveNyquist { f_max, nyquist });
    }
    if !(0.0..f_max).contains(&f_min) {
        return Err(DspError::BadConfig(format!(
            "f_min {f_min} must lie in [0, f_max)"
        )));
    }

    let window = 2 * (bins - 1);
    let bin_hz = sample_rate as f64 / window as f64;
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut weights = Tensor::zeros(&[n_mels, bins]);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = weights.row_mut(m);
        for (k, slot) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = if center > left {
                (f - left) / (center - left)
            } else {
                f64::NEG_INFINITY
            };
            let fall = if right > center {
                (right - f) / (right - center)
            } else {
                f64::NEG_INFINITY
            };
            *slot = rise.min(fall).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(DspError::BadConfig(format!(
                "mel filter {m} covers no frequency bin; reduce n_mels or widen the band"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        f_min,
        f_max,
        centers: edges[1..=n_mels].to_vec(),
    })
}

/// `ln(max(weights * mag, floor))`.
pub fn log_mel(
    spec: &Spectrogram,
    fb: &MelFilterbank,
    floor: f64,
) -> Result<MelSpectrogram, DspError> {
    if spec.bins() != fb.bins() {
        return Err(DspError::ShapeMismatch(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.bins(),
            fb.bins()
        )));
    }
    if floor <= 0.0 {
        return Err(DspError::BadConfig("log floor must be positive".into()));
    }
    let frames = spec.frames();
    let n_mels = fb.n_mels();
    let mut logmel = Tensor::zeros(&[n_mels, frames]);
    for m in 0..n_mels {
        let w = fb.weights.row(m);
        for t in 0..frames {
            let mut acc = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                if wk != 0.0 {
                    acc += wk * spec.mag.row(k)[t];
                }
            }
            logmel.row_mut(m)[t] = acc.max(floor).ln();
        }
    }
    Ok(MelSpectrogram { logmel })
}

/// Read a mono WAV (16-bit PCM or 32-bit float), resampling to 22.05 kHz
/// by linear interpolation when needed.
pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DspError::UnsupportedFormat(format!(
            "{} channels; only mono input is supported",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (format, bits) => {
            return Err(DspError::UnsupportedFormat(format!(
                "{format:?} {bits}-bit; expected 16-bit PCM or 32-bit float"
            )))
        }
    };
    let resampled = if spec.sample_rate == DEFAULT_SAMPLE_RATE {
        samples
    } else {
        resample_linear(&samples, spec.sample_rate, DEFAULT_SAMPLE_RATE)
    };
    Waveform::new(resampled, DEFAULT_SAMPLE_RATE)
}

/// Write mono 16-bit PCM at the waveform's sample rate, clamping to
/// `[-1, 1]`.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Linear-interpolation resampler.
pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = from as f64 / to as f64;
    let out_len = ((samples.len() as f64) / ratio).floor() as usize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let a = samples[lo];
            let b = samples[(lo + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}
