//! `maskteach` command-line front end: corpus synthesis, training,
//! enhancement, evaluation and gradient checking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskteach::audio_io::{load_manifest, read_wav, write_wav, AudioClip, Codec, Split};
use maskteach::beamformer::{beamform_utterance, mask_enhance};
use maskteach::config::PipelineConfig;
use maskteach::corpus::build_corpus;
use maskteach::distill::{
    build_soft_targets, train_baseline, train_student, train_teacher, write_log, SoftTargetCache, StopPolicy,
    TrainMode, TrainRun,
};
use maskteach::metrics::{evaluate_corpus, System};
use maskteach::nn::gradcheck::{run_preset, GradCheckPreset, LossSetup};
use maskteach::nn::{Checkpoint, LossWeights};
use maskteach::{par, Error, Result};

/// Gradient checks at or above this relative error fail.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "maskteach", version, about = "Mask-based GEV beamforming with student-teacher mask estimators")]
struct Cli {
    /// JSON pipeline configuration; defaults apply to missing keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesizes the multichannel corpus and its manifest.
    Simulate {
        /// Output directory (default: the configured corpus directory).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Trains a baseline, teacher or student mask network.
    Train(TrainArgs),
    /// Enhances one multichannel WAV file.
    Enhance {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "WAV")]
        input: PathBuf,
        #[arg(long, value_name = "WAV")]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = EnhanceMode::Beamform)]
        mode: EnhanceMode,
        /// Reference channel: the channel enhanced in mask mode, the phase reference in beamform mode (default: the configured reference channel).
        #[arg(long)]
        channel: Option<usize>,
        #[arg(long, value_enum, default_value_t = CodecArg::F32)]
        codec: CodecArg,
    },
    /// Scores the noisy input and each system; writes a CSV report.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// `NAME=MODE:CHECKPOINT` with MODE `mask` or `beamform`; repeatable.
        #[arg(long = "system", value_name = "SPEC")]
        systems: Vec<String>,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the network gradient.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = PresetArg::Tiny)]
        preset: PresetArg,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(value_enum)]
    mode: ModeArg,
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Baseline checkpoint (teacher and student modes).
    #[arg(long, value_name = "PATH")]
    baseline: Option<PathBuf>,
    /// Teacher checkpoint (student mode).
    #[arg(long, value_name = "PATH")]
    teacher: Option<PathBuf>,
    /// Soft-target cache directory (student mode); built if absent.
    #[arg(long, value_name = "DIR")]
    soft_targets: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    max_epochs: Option<usize>,
    /// Runs exactly the maximum number of epochs instead of early stopping.
    #[arg(long)]
    fixed_epochs: bool,
    /// Student loss weights as `DISTILL,SPEECH,NOISE`.
    #[arg(long, value_name = "W1,W2,W3")]
    weights: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Baseline,
    Teacher,
    Student,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum EnhanceMode {
    Mask,
    Beamform,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CodecArg {
    Pcm16,
    F32,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PresetArg {
    Tiny,
    Small,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        par::set_jobs(jobs);
    }
    match cli.command {
        Command::Simulate { out } => cmd_simulate(&cfg, out),
        Command::Train(args) => cmd_train(&cfg, args),
        Command::Enhance {
            checkpoint,
            input,
            output,
            mode,
            channel,
            codec,
        } => cmd_enhance(&cfg, &checkpoint, &input, &output, mode, channel, codec),
        Command::Evaluate {
            manifest,
            split,
            systems,
            out,
        } => cmd_evaluate(&cfg, manifest, split, &systems, out),
        Command::Gradcheck { preset } => cmd_gradcheck(preset),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn default_manifest(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.corpus_dir.join("manifest.jsonl")
}

fn checkpoint_path(cfg: &PipelineConfig, mode: TrainMode) -> PathBuf {
    cfg.paths.checkpoints_dir.join(format!("{}.ckpt", mode.as_str()))
}

fn cmd_simulate(cfg: &PipelineConfig, out: Option<PathBuf>) -> Result<ExitCode> {
    let dir = out.unwrap_or_else(|| cfg.paths.corpus_dir.clone());
    let manifest = build_corpus(&cfg.sim, &dir)?;
    let n = load_manifest(&manifest)?.entries.len();
    println!("simulate: {n} utterances, manifest {}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_weights(s: &str) -> Result<LossWeights> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--weights: {e}")))?;
    match parts[..] {
        [a, b, c] => LossWeights::new(a, b, c),
        _ => Err(Error::Config("--weights needs three comma-separated values".into())),
    }
}

fn load_params(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!("{what} checkpoint {} not found", path.display())));
    }
    Checkpoint::load(path)
}

fn cmd_train(cfg: &PipelineConfig, args: TrainArgs) -> Result<ExitCode> {
    let mode = match args.mode {
        ModeArg::Baseline => TrainMode::Baseline,
        ModeArg::Teacher => TrainMode::Teacher,
        ModeArg::Student => TrainMode::Student,
    };
    let mut cfg = cfg.clone();
    if let Some(w) = &args.weights {
        cfg.loss_weights = parse_weights(w)?;
    }
    let mut tcfg = cfg.train_config(mode);
    if let Some(n) = args.max_epochs {
        tcfg.max_epochs = n;
    }
    if args.fixed_epochs {
        tcfg.stop = StopPolicy::FixedEpochs;
    }
    tcfg.validate()?;
    let digest = cfg.digest();
    let data = cfg.data_config();
    let manifest = load_manifest(args.manifest.unwrap_or_else(|| default_manifest(&cfg)))?;
    let baseline_path = args
        .baseline
        .unwrap_or_else(|| checkpoint_path(&cfg, TrainMode::Baseline));
    let run: TrainRun = match mode {
        TrainMode::Baseline => train_baseline(&manifest, &data, &tcfg, &digest)?,
        TrainMode::Teacher => {
            let base = if data.oracle_teacher_input {
                None
            } else {
                Some(load_params(&baseline_path, "baseline")?)
            };
            train_teacher(&manifest, &data, &tcfg, base.as_ref().map(|c| &c.params), &digest)?
        }
        TrainMode::Student => {
            let cache_dir = args
                .soft_targets
                .unwrap_or_else(|| cfg.paths.checkpoints_dir.join("soft_targets"));
            let cached = if cache_dir.is_dir() {
                Some(SoftTargetCache::load(&cache_dir)?).filter(|c| c.covers(&manifest))
            } else {
                None
            };
            let cache = match cached {
                Some(c) => c,
                None => {
                    let base = load_params(&baseline_path, "baseline")?;
                    let teacher_path = args
                        .teacher
                        .unwrap_or_else(|| checkpoint_path(&cfg, TrainMode::Teacher));
                    let teacher = load_params(&teacher_path, "teacher")?;
                    let c = build_soft_targets(&manifest, &data, &base.params, &teacher.params)?;
                    c.save(&cache_dir)?;
                    log::info!("built {} soft targets in {}", c.len(), cache_dir.display());
                    c
                }
            };
            train_student(&manifest, &data, &tcfg, &cache, &digest)?
        }
    };
    let out = args.out.unwrap_or_else(|| checkpoint_path(&cfg, mode));
    create_parent(&out)?;
    run.checkpoint.save(&out)?;
    create_dir(&cfg.paths.reports_dir)?;
    let log_path = cfg.paths.reports_dir.join(format!("{}_log.jsonl", mode.as_str()));
    write_log(&log_path, &run.records)?;
    println!(
        "train {}: {} epochs, best epoch {} dev loss {:.6} (initial {:.6}), checkpoint {}",
        mode.as_str(),
        run.dev_history.len(),
        run.best_epoch,
        run.dev_history[run.best_epoch - 1],
        run.initial_dev_loss,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn enhance_clip(
    cfg: &PipelineConfig,
    ck: &Checkpoint,
    clip: &AudioClip,
    mode: EnhanceMode,
    channel: usize,
) -> Result<Vec<f64>> {
    match mode {
        EnhanceMode::Mask => mask_enhance(clip, &ck.params, channel, &cfg.stft),
        EnhanceMode::Beamform => Ok(beamform_utterance(clip, &ck.params, &cfg.stft, cfg.gev_eps, channel)?.signal),
    }
}

fn cmd_enhance(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    mode: EnhanceMode,
    channel: Option<usize>,
    codec: CodecArg,
) -> Result<ExitCode> {
    let ck = load_params(checkpoint, "network")?;
    let clip = read_wav(input)?;
    if clip.sample_rate() != cfg.stft.sample_rate {
        return Err(Error::InvalidInput(format!(
            "{}: {} Hz input, pipeline runs at {} Hz",
            input.display(),
            clip.sample_rate(),
            cfg.stft.sample_rate
        )));
    }
    let channel = channel.unwrap_or(cfg.sim.ref_channel.min(clip.num_channels() - 1));
    let signal = enhance_clip(cfg, &ck, &clip, mode, channel)?;
    let codec = match codec {
        CodecArg::Pcm16 => Codec::Pcm16,
        CodecArg::F32 => Codec::F32,
    };
    create_parent(output)?;
    let report = write_wav(output, &AudioClip::mono(signal, clip.sample_rate())?, codec)?;
    println!(
        "enhance {:?}: {} samples written to {}{}",
        mode,
        clip.len(),
        output.display(),
        if report.clipped > 0 {
            format!(" ({} samples clipped)", report.clipped)
        } else {
            String::new()
        }
    );
    Ok(ExitCode::SUCCESS)
}

struct SystemSpec {
    name: String,
    mode: EnhanceMode,
    checkpoint: PathBuf,
}

fn parse_system(s: &str) -> Result<SystemSpec> {
    let bad = || Error::Config(format!("--system {s:?}: expected NAME=MODE:CHECKPOINT"));
    let (name, rest) = s.split_once('=').ok_or_else(bad)?;
    let (mode, path) = rest.split_once(':').ok_or_else(bad)?;
    let mode = match mode {
        "mask" => EnhanceMode::Mask,
        "beamform" => EnhanceMode::Beamform,
        _ => return Err(bad()),
    };
    if name.is_empty() || name == "noisy" || name.contains(',') {
        return Err(Error::Config(format!("--system {s:?}: invalid name")));
    }
    Ok(SystemSpec {
        name: name.to_string(),
        mode,
        checkpoint: PathBuf::from(path),
    })
}

fn cmd_evaluate(
    cfg: &PipelineConfig,
    manifest: Option<PathBuf>,
    split: SplitArg,
    systems: &[String],
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let manifest = load_manifest(manifest.unwrap_or_else(|| default_manifest(cfg)))?;
    let specs: Vec<SystemSpec> = systems.iter().map(|s| parse_system(s)).collect::<Result<_>>()?;
    let loaded: Vec<(SystemSpec, Checkpoint)> = specs
        .into_iter()
        .map(|s| {
            let ck = load_params(&s.checkpoint, &s.name)?;
            Ok((s, ck))
        })
        .collect::<Result<_>>()?;
    let systems: Vec<System> = loaded
        .iter()
        .map(|(s, ck)| {
            let mode = s.mode;
            System::new(s.name.clone(), move |clip: &AudioClip, ref_channel: usize| {
                enhance_clip(cfg, ck, clip, mode, ref_channel)
            })
        })
        .collect();
    let split = match split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Dev => Some(Split::Dev),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let out = out.unwrap_or_else(|| cfg.paths.reports_dir.join("scores.csv"));
    create_parent(&out)?;
    let report = evaluate_corpus(&manifest, split, &systems, Some(&out))?;
    let meta = serde_json::json!({
        "config_digest": cfg.digest(),
        "sdr": "scale-invariant SDR in dB, capped at 100",
        "systems": systems.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
    });
    let meta_path = out.with_extension("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;
    for m in &report.means {
        println!(
            "evaluate {}: stoi {:.4} estoi {:.4} si_sdr {:.2} dB",
            m.condition, m.stoi, m.estoi, m.si_sdr_db
        );
    }
    println!("evaluate: {} rows written to {}", report.rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(preset: PresetArg) -> Result<ExitCode> {
    let preset = match preset {
        PresetArg::Tiny => GradCheckPreset::Tiny,
        PresetArg::Small => GradCheckPreset::Small,
    };
    let mut worst: f64 = 0.0;
    for setup in [
        LossSetup::Baseline,
        LossSetup::Teacher,
        LossSetup::Distill,
        LossSetup::Combined(LossWeights::default()),
    ] {
        let r = run_preset(preset, setup, Default::default(), 1)?;
        println!(
            "gradcheck {}: max relative error {:.3e} over {} coordinates",
            setup.name(),
            r.max_rel_error,
            r.checked
        );
        worst = worst.max(r.max_rel_error);
    }
    if worst >= GRADCHECK_TOLERANCE {
        eprintln!("gradcheck failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}
