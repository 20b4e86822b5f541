//! Command-line surface: corpus preparation, training, conversion,
//! evaluation and self-verification. Exit codes: 0 on success, 1 on a
//! validation problem (bad arguments, unreadable or mismatched inputs),
//! 2 on an internal failure.

use axialvc::autodiff::Tape;
use axialvc::config::RunConfig;
use axialvc::dataset::{DatasetItem, SpectrogramDataset};
use axialvc::dsp::{
    griffin_lim, log_mel, mel_matrix, preprocess, read_wav, stft_magnitude, write_wav,
    MelSpectrogram, Spectrogram, Waveform, LOG_MEL_FLOOR,
};
use axialvc::eval::{
    per_utterance_scores, EvalReport, Protocol, TargetStats, UtteranceScore,
};
use axialvc::networks::generator_forward;
use axialvc::selfcheck;
use axialvc::toy::{toy_config, toy_corpora};
use axialvc::training::{checkpoint_load, run_training, CorpusDataset, TrainError, TrainState};
use axialvc::autodiff::Tensor;
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "axialvc",
    about = "Non-parallel voice conversion on linear magnitude spectrograms",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Direction {
    X2y,
    Y2x,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Parallel,
    Nonparallel,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a directory of WAV files into a spectrogram dataset,
    /// or generate the built-in synthetic two-speaker corpus.
    Prepare {
        /// Directory containing mono WAV files (omit with --toy-corpus)
        wav_dir: Option<PathBuf>,
        /// Output dataset file; with --toy-corpus, an output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Generate the synthetic corpus instead of reading WAV files
        #[arg(long)]
        toy_corpus: bool,
        /// Training utterances per synthetic speaker
        #[arg(long, default_value_t = 24)]
        toy_items: usize,
        /// Held-out utterances per synthetic speaker
        #[arg(long, default_value_t = 8)]
        toy_eval_items: usize,
    },
    /// Train the two generator/discriminator pairs.
    Train {
        dataset_x: PathBuf,
        dataset_y: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint interval in epochs
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Convert one WAV through a trained generator.
    Convert {
        checkpoint: PathBuf,
        #[arg(value_enum)]
        direction: Direction,
        input: PathBuf,
        output: PathBuf,
        /// Cross-check: fail if this configuration's analysis geometry
        /// disagrees with the checkpoint's
        #[arg(long)]
        config: Option<PathBuf>,
        /// Phase-initialization seed
        #[arg(long)]
        seed: Option<u64>,
        /// Phase-reconstruction iterations
        #[arg(long, default_value_t = 32)]
        iterations: usize,
    },
    /// Score converted held-out utterances against a target sample.
    Evaluate {
        checkpoint: PathBuf,
        eval_src: PathBuf,
        eval_tgt: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "x2y")]
        direction: Direction,
        /// Override the evaluation features (mel bank, MSD constant) of
        /// the checkpoint's embedded configuration
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the built-in verification suites.
    Selfcheck,
}

enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<axialvc::config::ConfigError> for CliError {
    fn from(e: axialvc::config::ConfigError) -> Self {
        CliError::validation(e)
    }
}

impl From<axialvc::dataset::DatasetError> for CliError {
    fn from(e: axialvc::dataset::DatasetError) -> Self {
        CliError::validation(e)
    }
}

impl From<axialvc::dsp::DspError> for CliError {
    fn from(e: axialvc::dsp::DspError) -> Self {
        CliError::validation(e)
    }
}

impl From<axialvc::training::CheckpointError> for CliError {
    fn from(e: axialvc::training::CheckpointError) -> Self {
        CliError::validation(e)
    }
}

impl From<axialvc::eval::EvalError> for CliError {
    fn from(e: axialvc::eval::EvalError) -> Self {
        CliError::validation(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BinMismatch { .. }
            | TrainError::EmptyCorpus
            | TrainError::ItemTooShort { .. }
            | TrainError::BadMagnitudes { .. } => CliError::validation(e),
            other => CliError::internal(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::validation(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare {
            wav_dir,
            out,
            config,
            seed,
            toy_corpus,
            toy_items,
            toy_eval_items,
        } => {
            if toy_corpus {
                let mut cfg = match config {
                    Some(p) => RunConfig::load(&p)?,
                    None => toy_config(),
                };
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                cmd_prepare_toy(&out, &cfg, toy_items, toy_eval_items)
            } else {
                let dir = wav_dir.ok_or_else(|| {
                    CliError::Validation(
                        "a WAV directory is required unless --toy-corpus is given".into(),
                    )
                })?;
                let cfg = load_config(&config)?;
                cmd_prepare(&dir, &out, &cfg)
            }
        }
        Command::Train {
            dataset_x,
            dataset_y,
            out,
            config,
            seed,
            epochs,
            checkpoint_every,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(c) = checkpoint_every {
                cfg.checkpoint_every = c;
            }
            cfg.validate()?;
            cmd_train(&dataset_x, &dataset_y, &out, &cfg)
        }
        Command::Convert {
            checkpoint,
            direction,
            input,
            output,
            config,
            seed,
            iterations,
        } => cmd_convert(
            &checkpoint,
            direction,
            &input,
            &output,
            &config,
            seed.unwrap_or(0),
            iterations,
        ),
        Command::Evaluate {
            checkpoint,
            eval_src,
            eval_tgt,
            protocol,
            out,
            direction,
            config,
        } => cmd_evaluate(
            &checkpoint,
            &eval_src,
            &eval_tgt,
            protocol,
            &out,
            direction,
            &config,
        ),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

fn cmd_prepare_toy(
    out_dir: &Path,
    cfg: &RunConfig,
    train_items: usize,
    eval_items: usize,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let corpora = toy_corpora(cfg, train_items, eval_items, cfg.seed)?;
    let pairs = [
        ("toy_a.ds", &corpora.train_a),
        ("toy_b.ds", &corpora.train_b),
        ("toy_a_eval.ds", &corpora.eval_a),
        ("toy_b_eval.ds", &corpora.eval_b),
    ];
    for (name, ds) in pairs {
        ds.save(&out_dir.join(name))?;
        println!(
            "wrote {} ({} items, {} frames)",
            out_dir.join(name).display(),
            ds.items.len(),
            ds.total_frames()
        );
    }
    cfg.save(&out_dir.join("toy.cfg"))?;
    println!("wrote {}", out_dir.join("toy.cfg").display());
    Ok(())
}

fn cmd_prepare(wav_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let stft = cfg.stft_config();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(wav_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();

    let mut items = Vec::new();
    let mut total_frames = 0usize;
    for path in &entries {
        let prepared = read_wav(path)
            .and_then(|wave| preprocess(&wave, None, &stft))
            .and_then(|wave| stft_magnitude(&wave, &stft));
        match prepared {
            Ok(spec) => {
                total_frames += spec.frames();
                items.push(DatasetItem {
                    name: path
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    spec: Tensor::from_f64_tensor(&spec.mag),
                });
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
            }
        }
    }
    if items.is_empty() {
        return Err(CliError::Validation(format!(
            "no usable WAV files in {}",
            wav_dir.display()
        )));
    }
    let ds = SpectrogramDataset {
        stft,
        sample_rate: cfg.sample_rate,
        items,
    };
    ds.save(out)?;
    println!(
        "wrote {} ({} items, {} frames, {} bins)",
        out.display(),
        ds.items.len(),
        total_frames,
        ds.bins()
    );
    Ok(())
}

fn cmd_train(
    dataset_x: &Path,
    dataset_y: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let ds_x = SpectrogramDataset::load(dataset_x)?;
    let ds_y = SpectrogramDataset::load(dataset_y)?;
    for (label, ds) in [("x", &ds_x), ("y", &ds_y)] {
        if ds.bins() != cfg.bins() {
            return Err(CliError::Validation(format!(
                "dataset {label} has {} bins, configuration expects {}",
                ds.bins(),
                cfg.bins()
            )));
        }
    }
    let (corpus_x, skipped_x) = CorpusDataset::from_dataset(&ds_x, cfg.crop_frames, cfg.bins())?;
    let (corpus_y, skipped_y) = CorpusDataset::from_dataset(&ds_y, cfg.crop_frames, cfg.bins())?;
    if skipped_x + skipped_y > 0 {
        eprintln!(
            "warning: skipped {skipped_x}+{skipped_y} items shorter than {} frames",
            cfg.crop_frames
        );
    }

    let mut state = TrainState::init(cfg);
    println!(
        "training {} epochs, batch {}, {}x{} items, seed {}",
        cfg.epochs,
        cfg.batch_size,
        corpus_x.len(),
        corpus_y.len(),
        cfg.seed
    );
    run_training(&mut state, &corpus_x, &corpus_y, out, |step, r| {
        if step % 50 == 0 {
            eprintln!(
                "step {step}: adv_d_x {:.4} adv_d_y {:.4} adv_g {:.4} cyc {:.4} id {:.4}",
                r.adv_d_x, r.adv_d_y, r.adv_g, r.cyc, r.id
            );
        }
    })?;
    println!("finished; final checkpoint at {}", out.join("final.ckpt").display());
    Ok(())
}

fn convert_spectrogram(
    state: &TrainState,
    direction: Direction,
    spec: &Spectrogram,
) -> Result<Spectrogram, CliError> {
    let params = match direction {
        Direction::X2y => &state.gen_xy,
        Direction::Y2x => &state.gen_yx,
    };
    if spec.bins() != params.cfg.channels {
        return Err(CliError::Validation(format!(
            "spectrogram has {} bins, generator expects {}",
            spec.bins(),
            params.cfg.channels
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::<f32>::from_f64_tensor(&spec.mag));
    let bound = params.bind(&mut tape);
    let y = generator_forward(&mut tape, xv, params, &bound).map_err(CliError::internal)?;
    Ok(Spectrogram::new(tape.value(y).to_f64(), spec.config)?)
}

fn cmd_convert(
    checkpoint: &Path,
    direction: Direction,
    input: &Path,
    output: &Path,
    config: &Option<PathBuf>,
    seed: u64,
    iterations: usize,
) -> Result<(), CliError> {
    let state = checkpoint_load(checkpoint)?;
    if let Some(path) = config {
        let override_cfg = RunConfig::load(path)?;
        if override_cfg.bins() != state.cfg.bins() {
            return Err(CliError::Validation(format!(
                "configuration expects {} bins but the checkpoint was trained with {}",
                override_cfg.bins(),
                state.cfg.bins()
            )));
        }
    }
    let stft = state.cfg.stft_config();
    let wave = read_wav(input)?;
    let prepared = preprocess(&wave, None, &stft)?;
    let spec = stft_magnitude(&prepared, &stft)?;
    let converted = convert_spectrogram(&state, direction, &spec)?;
    let out_wave = griffin_lim(&converted, iterations, seed)?;
    let out_wave = Waveform {
        samples: out_wave.samples,
        sample_rate: state.cfg.sample_rate,
    };
    write_wav(output, &out_wave)?;
    println!(
        "converted {} -> {} ({} frames, {} iterations)",
        input.display(),
        output.display(),
        spec.frames(),
        iterations
    );
    Ok(())
}

fn mels_of(
    ds: &SpectrogramDataset,
    fb: &axialvc::dsp::MelFilterbank,
) -> Result<Vec<MelSpectrogram>, CliError> {
    ds.items
        .iter()
        .map(|item| {
            let spec = Spectrogram::new(item.spec.to_f64(), ds.stft)?;
            Ok(log_mel(&spec, fb, LOG_MEL_FLOOR)?)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    checkpoint: &Path,
    eval_src: &Path,
    eval_tgt: &Path,
    protocol: ProtocolArg,
    out: &Path,
    direction: Direction,
    config: &Option<PathBuf>,
) -> Result<(), CliError> {
    let state = checkpoint_load(checkpoint)?;
    let mut cfg = state.cfg.clone();
    if let Some(path) = config {
        let over = RunConfig::load(path)?;
        cfg.eval_n_mels = over.eval_n_mels;
        cfg.eval_f_min = over.eval_f_min;
        cfg.eval_f_max = over.eval_f_max;
        cfg.msd_constant = over.msd_constant;
    }
    let cfg = &cfg;
    let src = SpectrogramDataset::load(eval_src)?;
    let tgt = SpectrogramDataset::load(eval_tgt)?;
    for (label, ds) in [("source", &src), ("target", &tgt)] {
        if ds.bins() != cfg.bins() {
            return Err(CliError::Validation(format!(
                "{label} dataset has {} bins, checkpoint expects {}",
                ds.bins(),
                cfg.bins()
            )));
        }
    }

    let fb = mel_matrix(
        cfg.eval_n_mels,
        cfg.bins(),
        cfg.sample_rate,
        cfg.eval_f_min,
        cfg.eval_f_max,
    )?;

    // convert every held-out source item
    let mut converted = Vec::with_capacity(src.items.len());
    for item in &src.items {
        let spec = Spectrogram::new(item.spec.to_f64(), src.stft)?;
        let conv = convert_spectrogram(&state, direction, &spec)?;
        converted.push(log_mel(&conv, &fb, LOG_MEL_FLOOR)?);
    }
    let references = mels_of(&tgt, &fb)?;

    let pair_label = match direction {
        Direction::X2y => "x->y",
        Direction::Y2x => "y->x",
    };
    let report = match protocol {
        ProtocolArg::Parallel => {
            if converted.len() != references.len() {
                return Err(CliError::Validation(format!(
                    "parallel protocol needs matched counts, got {} converted vs {} references",
                    converted.len(),
                    references.len()
                )));
            }
            let utterances = converted
                .iter()
                .zip(&references)
                .zip(&src.items)
                .map(|((c, r), item)| {
                    Ok(UtteranceScore {
                        name: item.name.clone(),
                        msd: axialvc::eval::msd_parallel(c, r)? * cfg.msd_constant,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            EvalReport::from_scores(pair_label.into(), Protocol::Parallel, utterances, None)
        }
        ProtocolArg::Nonparallel => {
            let stats = TargetStats::build(references)?;
            let scores = per_utterance_scores(&converted, &stats.references)?;
            let utterances = scores
                .iter()
                .zip(&src.items)
                .map(|(s, item)| UtteranceScore {
                    name: item.name.clone(),
                    msd: s * cfg.msd_constant,
                })
                .collect();
            EvalReport::from_scores(
                pair_label.into(),
                Protocol::Nonparallel,
                utterances,
                Some((
                    stats.ground_truth_mean * cfg.msd_constant,
                    stats.ground_truth_std * cfg.msd_constant,
                )),
            )
        }
    };

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("eval_report.csv"), report.to_csv())?;
    std::fs::write(out.join("eval_report.txt"), report.to_table())?;
    print!("{}", report.to_table());
    println!(
        "wrote {} and {}",
        out.join("eval_report.csv").display(),
        out.join("eval_report.txt").display()
    );
    Ok(())
}

fn cmd_selfcheck() -> Result<(), CliError> {
    let results = selfcheck::run_all();
    let mut failed = 0;
    for r in &results {
        if r.passed {
            println!("ok      {} ({})", r.name, r.detail);
        } else {
            failed += 1;
            println!("FAILED  {} ({})", r.name, r.detail);
        }
    }
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(CliError::Internal(format!("{failed} selfcheck suites failed")));
    }
    Ok(())
}
