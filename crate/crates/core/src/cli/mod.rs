//! Command-line surface of the `omnistack` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::backbone::SamplerSettings;
use crate::decoder::GuidanceConfig;
use crate::encoders::{read_wav, write_wav, SAMPLE_RATE};
use crate::error::OmniError;
use crate::eval::{run_suite, EvalContext, Suite};
use crate::omni::{generate_audio, generate_image, generate_text, init_run, train_run, RunConfig, RunDir, StageSelection};
use crate::vocab::VocabLayout;
use crate::vocoder::speaker_embed;

/// Default run root when neither `--home` nor `OMNISTACK_HOME` is set.
pub const DEFAULT_HOME: &str = "omnistack-run";

#[derive(Debug, Parser)]
#[command(name = "omnistack", version, about = "Desk-scale any-to-any omnimodal model stack")]
pub struct Cli {
    /// Run directory.
    #[arg(long, env = "OMNISTACK_HOME", default_value = DEFAULT_HOME, global = true)]
    pub home: PathBuf,
    /// Config file. `init` uses it as the template; other commands default
    /// to `<home>/config.json`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write config, stage list and the seeded synthetic corpus.
    Init(InitArgs),
    /// Train one stage or the whole curriculum.
    Train(TrainArgs),
    /// Generate text, an image or speech from a prompt file.
    Generate(GenerateArgs),
    /// Run an acceptance suite and write a JSON report.
    Eval(EvalArgs),
    /// Print the token-name to id table as TSV.
    InspectVocab(InspectArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Multiplier applied to published stage token budgets.
    #[arg(long)]
    pub budget_scale: Option<f64>,
    /// Start from the small smoke-test configuration.
    #[arg(long)]
    pub toy: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    pub stage: Option<String>,
    #[arg(long)]
    pub all: bool,
    /// Cap on optimizer steps per stage.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutModality {
    Text,
    Image,
    Audio,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub prompt_file: PathBuf,
    #[arg(long, value_enum, default_value_t = OutModality::Text)]
    pub modality_out: OutModality,
    /// Autoguidance scale for image decoding; 1.0 disables the bad model.
    #[arg(long)]
    pub guidance_scale: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// 0 keeps the full distribution.
    #[arg(long, default_value_t = 0)]
    pub top_k: usize,
    #[arg(long)]
    pub strip_think: bool,
    /// Output file; text goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to load; defaults to the latest trained stage.
    #[arg(long)]
    pub stage: Option<String>,
    #[arg(long, default_value_t = 128)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Seconds of speech.
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    /// Reference WAV for the speaker; defaults to the first corpus clip.
    #[arg(long)]
    pub speaker_ref: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Report path; defaults to `<home>/eval-<suite>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("evaluation failed: {0}")]
    EvalFailed(String),
    #[error(transparent)]
    Omni(#[from] OmniError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Omni(OmniError::Missing(_) | OmniError::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_for(cli: &Cli, run: &RunDir) -> CliResult<RunConfig> {
    let path = cli.config.clone().unwrap_or_else(|| run.config_path());
    let cfg = RunConfig::load(&path)?;
    Ok(cfg)
}

fn cmd_init(cli: &Cli, args: &InitArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = match (&cli.config, args.toy) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, true) => RunConfig::toy(cli.seed.unwrap_or(0)),
        (None, false) => RunConfig::new(cli.seed.unwrap_or(0)),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = args.budget_scale {
        cfg.training.budget_scale = scale;
    }
    let run = RunDir::new(&cli.home);
    let files = init_run(&run, &cfg)?;
    writeln!(out, "initialised {} (seed {}, {} files)", run.root().display(), cfg.seed, files.len())?;
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let run = RunDir::new(&cli.home);
    let cfg = config_for(cli, &run)?;
    if let Some(seed) = cli.seed {
        if seed != cfg.seed {
            return Err(CliError::Usage(format!("--seed {seed} differs from the run seed {}; re-run init", cfg.seed)));
        }
    }
    let selection = match (&args.stage, args.all) {
        (Some(s), false) => StageSelection::One(s.clone()),
        (None, true) => StageSelection::All,
        _ => return Err(CliError::Usage("pass exactly one of --stage or --all".into())),
    };
    train_run(&run, &selection, args.steps, out)?;
    Ok(())
}

fn default_out(run: &RunDir, name: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(run.outputs_dir())?;
    Ok(run.outputs_dir().join(name))
}

fn cmd_generate(cli: &Cli, args: &GenerateArgs, out: &mut dyn Write) -> CliResult<()> {
    let run = RunDir::new(&cli.home);
    let mut cfg = config_for(cli, &run)?;
    let prompt = std::fs::read_to_string(&args.prompt_file)
        .map_err(|e| CliError::Usage(format!("prompt file {}: {e}", args.prompt_file.display())))?;
    let stages = run.load_stages(&cfg)?;
    let stage = match &args.stage {
        Some(s) => s.clone(),
        None => run
            .latest_stage(&stages)
            .ok_or_else(|| OmniError::Missing("a trained checkpoint (run `omnistack train` first)".into()))?,
    };
    if let Some(s) = args.guidance_scale {
        cfg.decode.guidance = GuidanceConfig { scale: s };
    }
    let model = run.load_model(&cfg, Some(&stage))?;
    let settings = SamplerSettings { temperature: args.temperature, top_k: args.top_k, seed: cli.seed.unwrap_or(cfg.seed) };
    match args.modality_out {
        OutModality::Text => {
            let g = generate_text(&model, &prompt, &settings, args.max_tokens, args.strip_think)?;
            match &args.out {
                Some(p) => std::fs::write(p, &g.text)?,
                None => writeln!(out, "{}", g.text)?,
            }
        }
        OutModality::Image => {
            let mut opts = cfg.decode;
            opts.seed = settings.seed;
            let (img, grid) = generate_image(&model, &prompt, &settings, args.width, args.height, &opts)?;
            let path = match &args.out {
                Some(p) => p.clone(),
                None => default_out(&run, "image.png")?,
            };
            img.save_png(&path)?;
            writeln!(out, "wrote {} ({}x{}, {} vision ids)", path.display(), img.width(), img.height(), grid.ids().len())?;
        }
        OutModality::Audio => {
            let reference = match &args.speaker_ref {
                Some(p) => read_wav(p)?,
                None => run
                    .load_corpus()?
                    .speech
                    .first()
                    .map(|c| c.wave.clone())
                    .ok_or_else(|| OmniError::Missing("speech clip for the default speaker".into()))?,
            };
            let spk = speaker_embed(&reference, cfg.vocoder.speaker_dim)?;
            let (wave, codes) = generate_audio(&model, &prompt, &settings, args.duration, &spk)?;
            let path = match &args.out {
                Some(p) => p.clone(),
                None => default_out(&run, "speech.wav")?,
            };
            write_wav(&path, &wave, SAMPLE_RATE)?;
            writeln!(out, "wrote {} ({} samples, {} audio codes)", path.display(), wave.len(), codes.len())?;
        }
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let run = RunDir::new(&cli.home);
    let seed = match (cli.seed, run.config_path().exists()) {
        (Some(s), _) => s,
        (None, true) => run.load_config()?.seed,
        (None, false) => 0,
    };
    let ctx = EvalContext { seed, run_dir: Some(run.root().to_path_buf()) };
    let report = run_suite(args.suite, &ctx)?;
    for c in &report.checks {
        writeln!(out, "{}", c.line())?;
    }
    let path = match &args.out {
        Some(p) => p.clone(),
        None => {
            std::fs::create_dir_all(run.root())?;
            run.root().join(format!("eval-{}.json", format!("{:?}", args.suite).to_lowercase()))
        }
    };
    std::fs::write(&path, serde_json::to_string_pretty(&report).map_err(OmniError::from)?)?;
    writeln!(out, "report: {}", path.display())?;
    if !report.passed() {
        let failed: Vec<String> = report.checks.iter().filter(|c| !c.passed() && c.status != crate::eval::Status::Skipped).map(|c| c.name.clone()).collect();
        return Err(CliError::EvalFailed(failed.join(", ")));
    }
    Ok(())
}

fn layout_for(cli: &Cli) -> CliResult<VocabLayout> {
    let run = RunDir::new(&cli.home);
    let path = cli.config.clone().unwrap_or_else(|| run.config_path());
    if path.exists() {
        Ok(RunConfig::load(&path)?.layout)
    } else if cli.config.is_some() {
        Err(CliError::Usage(format!("config {} does not exist", path.display())))
    } else {
        Ok(VocabLayout::default_layout())
    }
}

fn cmd_inspect(cli: &Cli, args: &InspectArgs, out: &mut dyn Write) -> CliResult<()> {
    let tsv = layout_for(cli)?.to_tsv();
    match &args.out {
        Some(p) => std::fs::write(p, tsv)?,
        None => out.write_all(tsv.as_bytes())?,
    }
    Ok(())
}

/// Executes a parsed command.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Init(a) => cmd_init(cli, a, out),
        Command::Train(a) => cmd_train(cli, a, out),
        Command::Generate(a) => cmd_generate(cli, a, out),
        Command::Eval(a) => cmd_eval(cli, a, out),
        Command::InspectVocab(a) => cmd_inspect(cli, a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
