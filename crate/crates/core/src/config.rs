//! Run configuration: one flat key=value file covering analysis geometry,
//! model scale, optimization schedule, loss composition and evaluation
//! features. Unknown keys are rejected; every field has a full-scale
//! default (513-bin spectrogram, 7 generator / 5 discriminator blocks,
//! kernels 17/3, lambdas 1/10/1, 200 epochs, batch 16).

use crate::blocks::{ResidualMode, TemporalMode};
use crate::dsp::StftConfig;
use crate::losses::{LossFlags, LossWeights};
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // analysis
    pub window_length: usize,
    pub hop: usize,
    pub sample_rate: u32,
    // model scale
    pub gen_blocks: usize,
    pub disc_blocks: usize,
    pub temporal_kernel: usize,
    pub freq_kernel: usize,
    pub disc_kernel: usize,
    pub temporal_mode: TemporalMode,
    pub lightweight_share: usize,
    pub residual_mode: ResidualMode,
    pub input_scale: f64,
    pub sn_iterations: usize,
    pub noise_std: f64,
    // optimization
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub learning_rate: f64,
    pub anneal_factor: f64,
    pub anneal_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub d_per_g: usize,
    pub checkpoint_every: usize,
    // loss composition
    pub feature_matching: bool,
    pub extended_identity: bool,
    pub saturating_adversarial: bool,
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    // evaluation features
    pub eval_n_mels: usize,
    pub eval_f_min: f64,
    pub eval_f_max: f64,
    pub msd_constant: f64,
    // paths (optional, overridable on the command line)
    pub dataset_x: String,
    pub dataset_y: String,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window_length: 1024,
            hop: 256,
            sample_rate: 22050,
            gen_blocks: 7,
            disc_blocks: 5,
            temporal_kernel: 17,
            freq_kernel: 3,
            disc_kernel: 5,
            temporal_mode: TemporalMode::Depthwise,
            lightweight_share: 1,
            residual_mode: ResidualMode::Once,
            input_scale: 1.0,
            sn_iterations: 1,
            noise_std: 0.01,
            epochs: 200,
            batch_size: 16,
            crop_frames: 128,
            learning_rate: 2.0e-4,
            anneal_factor: 0.1,
            anneal_every: 50,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            d_per_g: 1,
            checkpoint_every: 10,
            feature_matching: true,
            extended_identity: true,
            saturating_adversarial: false,
            lambda_adv: 1.0,
            lambda_cyc: 10.0,
            lambda_id: 1.0,
            eval_n_mels: 40,
            eval_f_min: 0.0,
            eval_f_max: 8000.0,
            msd_constant: 1.0,
            dataset_x: String::new(),
            dataset_y: String::new(),
            out_dir: String::new(),
        }
    }
}

macro_rules! config_fields {
    ($m:ident) => {
        $m!(window_length, usize);
        $m!(hop, usize);
        $m!(sample_rate, u32);
        $m!(gen_blocks, usize);
        $m!(disc_blocks, usize);
        $m!(temporal_kernel, usize);
        $m!(freq_kernel, usize);
        $m!(disc_kernel, usize);
        $m!(temporal_mode, mode);
        $m!(lightweight_share, usize);
        $m!(residual_mode, residual);
        $m!(input_scale, f64);
        $m!(sn_iterations, usize);
        $m!(noise_std, f64);
        $m!(epochs, usize);
        $m!(batch_size, usize);
        $m!(crop_frames, usize);
        $m!(learning_rate, f64);
        $m!(anneal_factor, f64);
        $m!(anneal_every, usize);
        $m!(adam_beta1, f64);
        $m!(adam_beta2, f64);
        $m!(adam_eps, f64);
        $m!(seed, u64);
        $m!(d_per_g, usize);
        $m!(checkpoint_every, usize);
        $m!(feature_matching, bool);
        $m!(extended_identity, bool);
        $m!(saturating_adversarial, bool);
        $m!(lambda_adv, f64);
        $m!(lambda_cyc, f64);
        $m!(lambda_id, f64);
        $m!(eval_n_mels, usize);
        $m!(eval_f_min, f64);
        $m!(eval_f_max, f64);
        $m!(msd_constant, f64);
        $m!(dataset_x, string);
        $m!(dataset_y, string);
        $m!(out_dir, string);
    };
}

fn mode_label(m: TemporalMode) -> &'static str {
    match m {
        TemporalMode::Depthwise => "depthwise",
        TemporalMode::Lightweight => "lightweight",
    }
}

fn residual_label(m: ResidualMode) -> &'static str {
    match m {
        ResidualMode::Once => "once",
        ResidualMode::Twice => "twice",
    }
}

impl RunConfig {
    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Desk-scale preset: 128-sample window (65 bins), 3 blocks on each
    /// side, short crops, and a mel bank coarse enough that every filter
    /// still covers a frequency bin. Full-scale defaults otherwise.
    pub fn desk_scale() -> Self {
        RunConfig {
            window_length: 128,
            hop: 32,
            gen_blocks: 3,
            disc_blocks: 3,
            crop_frames: 64,
            batch_size: 8,
            eval_n_mels: 16,
            ..Default::default()
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($field:ident, usize) => {
                out.push_str(&format!("{}={}\n", stringify!($field), self.$field));
            };
            ($field:ident, u32) => {
                out.push_str(&format!("{}={}\n", stringify!($field), self.$field));
            };
            ($field:ident, u64) => {
                out.push_str(&format!("{}={}\n", stringify!($field), self.$field));
            };
            ($field:ident, f64) => {
                out.push_str(&format!("{}={}\n", stringify!($field), self.$field));
            };
            ($field:ident, bool) => {
                out.push_str(&format!("{}={}\n", stringify!($field), self.$field));
            };
            ($field:ident, mode) => {
                out.push_str(&format!(
                    "{}={}\n",
                    stringify!($field),
                    mode_label(self.$field)
                ));
            };
            ($field:ident, residual) => {
                out.push_str(&format!(
                    "{}={}\n",
                    stringify!($field),
                    residual_label(self.$field)
                ));
            };
            ($field:ident, string) => {
                out.push_str(&format!("{}={}\n", stringify!($field), self.$field));
            };
        }
        config_fields!(emit);
        out
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: lineno + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! apply {
            ($field:ident, usize) => {
                if key == stringify!($field) {
                    self.$field = value.parse().map_err(|_| bad())?;
                    return Ok(());
                }
            };
            ($field:ident, u32) => {
                if key == stringify!($field) {
                    self.$field = value.parse().map_err(|_| bad())?;
                    return Ok(());
                }
            };
            ($field:ident, u64) => {
                if key == stringify!($field) {
                    self.$field = value.parse().map_err(|_| bad())?;
                    return Ok(());
                }
            };
            ($field:ident, f64) => {
                if key == stringify!($field) {
                    self.$field = value.parse().map_err(|_| bad())?;
                    return Ok(());
                }
            };
            ($field:ident, bool) => {
                if key == stringify!($field) {
                    self.$field = match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(bad()),
                    };
                    return Ok(());
                }
            };
            ($field:ident, mode) => {
                if key == stringify!($field) {
                    self.$field = match value {
                        "depthwise" => TemporalMode::Depthwise,
                        "lightweight" => TemporalMode::Lightweight,
                        _ => return Err(bad()),
                    };
                    return Ok(());
                }
            };
            ($field:ident, residual) => {
                if key == stringify!($field) {
                    self.$field = match value {
                        "once" => ResidualMode::Once,
                        "twice" => ResidualMode::Twice,
                        _ => return Err(bad()),
                    };
                    return Ok(());
                }
            };
            ($field:ident, string) => {
                if key == stringify!($field) {
                    self.$field = value.to_string();
                    return Ok(());
                }
            };
        }
        config_fields!(apply);
        Err(ConfigError::UnknownKey(key.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Validation(msg));
        if self.window_length == 0 || !self.window_length.is_multiple_of(2) {
            return fail(format!("window_length must be even, got {}", self.window_length));
        }
        if self.hop == 0 || self.hop > self.window_length {
            return fail(format!("hop must be in 1..=window_length, got {}", self.hop));
        }
        for (name, k) in [
            ("temporal_kernel", self.temporal_kernel),
            ("freq_kernel", self.freq_kernel),
            ("disc_kernel", self.disc_kernel),
        ] {
            if k % 2 == 0 || k == 0 {
                return fail(format!("{name} must be odd and positive, got {k}"));
            }
        }
        if self.temporal_mode == TemporalMode::Lightweight
            && !self.bins().is_multiple_of(self.lightweight_share)
        {
            return fail(format!(
                "lightweight_share {} does not divide {} channels",
                self.lightweight_share,
                self.bins()
            ));
        }
        for (name, v) in [
            ("gen_blocks", self.gen_blocks),
            ("disc_blocks", self.disc_blocks),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("crop_frames", self.crop_frames),
            ("anneal_every", self.anneal_every),
            ("d_per_g", self.d_per_g),
            ("checkpoint_every", self.checkpoint_every),
            ("eval_n_mels", self.eval_n_mels),
            ("sn_iterations", self.sn_iterations),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_id", self.lambda_id),
            ("noise_std", self.noise_std),
            ("msd_constant", self.msd_constant),
        ] {
            if v < 0.0 || !v.is_finite() {
                return fail(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.learning_rate <= 0.0 || self.anneal_factor <= 0.0 {
            return fail("learning_rate and anneal_factor must be positive".into());
        }
        if self.eval_f_max > self.sample_rate as f64 / 2.0 {
            return fail(format!(
                "eval_f_max {} exceeds Nyquist {}",
                self.eval_f_max,
                self.sample_rate as f64 / 2.0
            ));
        }
        Ok(())
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig {
            window_length: self.window_length,
            hop: self.hop,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            channels: self.bins(),
            num_blocks: self.gen_blocks,
            temporal_kernel: self.temporal_kernel,
            temporal_mode: self.temporal_mode,
            lightweight_share: self.lightweight_share,
            freq_kernel: self.freq_kernel,
            activation_slope: 0.01,
            residual_mode: self.residual_mode,
            input_scale: self.input_scale,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            channels: self.bins(),
            num_blocks: self.disc_blocks,
            kernel: self.disc_kernel,
            activation_slope: 0.2,
            noise_std: self.noise_std,
            sn_iterations: self.sn_iterations,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_adv: self.lambda_adv,
            lambda_cyc: self.lambda_cyc,
            lambda_id: self.lambda_id,
        }
    }

    pub fn loss_flags(&self) -> LossFlags {
        LossFlags {
            feature_matching: self.feature_matching,
            extended_identity: self.extended_identity,
            saturating_adversarial: self.saturating_adversarial,
        }
    }

    /// Fingerprint of every field that affects the parameter layout or the
    /// forward semantics; checkpoints refuse to load under a different
    /// fingerprint.
    pub fn model_fingerprint(&self) -> u64 {
        let descriptor = format!(
            "w{}h{}sr{}g{}d{}tk{}fk{}dk{}tm{}ls{}rm{}is{}ns{}",
            self.window_length,
            self.hop,
            self.sample_rate,
            self.gen_blocks,
            self.disc_blocks,
            self.temporal_kernel,
            self.freq_kernel,
            self.disc_kernel,
            mode_label(self.temporal_mode),
            self.lightweight_share,
            residual_label(self.residual_mode),
            self.input_scale,
            self.noise_std,
        );
        fnv1a(descriptor.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_full_scale() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.bins(), 513);
        assert_eq!(cfg.gen_blocks, 7);
        assert_eq!(cfg.disc_blocks, 5);
        assert_eq!(cfg.temporal_kernel, 17);
        assert_eq!(cfg.freq_kernel, 3);
        assert_eq!((cfg.lambda_adv, cfg.lambda_cyc, cfg.lambda_id), (1.0, 10.0, 1.0));
        assert_eq!(cfg.epochs, 200);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.learning_rate, 2.0e-4);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = RunConfig::desk_scale();
        cfg.learning_rate = 3.7e-5;
        cfg.lambda_cyc = 12.25;
        cfg.temporal_mode = TemporalMode::Lightweight;
        cfg.lightweight_share = 5; // 65 bins divisible by 5
        cfg.dataset_x = "corpus/a.ds".into();
        let text = cfg.serialize();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            RunConfig::parse("frobnicate=1\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            RunConfig::parse("epochs=many\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse("epochs\n"),
            Err(ConfigError::Malformed { .. })
        ));
        // comments and blanks are fine
        let cfg = RunConfig::parse("# comment\n\nepochs=3\n").unwrap();
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn validation_catches_geometry_errors() {
        assert!(RunConfig::parse("window_length=1001\n").is_err());
        assert!(RunConfig::parse("temporal_kernel=16\n").is_err());
        assert!(RunConfig::parse("hop=4096\n").is_err());
        assert!(RunConfig::parse("batch_size=0\n").is_err());
        assert!(RunConfig::parse("eval_f_max=20000\n").is_err());
    }

    #[test]
    fn fingerprint_tracks_model_shape_only() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.epochs = 77; // schedule change, same model
        assert_eq!(a.model_fingerprint(), b.model_fingerprint());
        b.gen_blocks = 3;
        assert_ne!(a.model_fingerprint(), b.model_fingerprint());
    }
}
