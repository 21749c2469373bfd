//! `eegspeech` — runs one pipeline stage and prints a one-line JSON summary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 missing or
//! malformed data, 3 numeric failure (NaN, divergence, failed gradient
//! check).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eegspeech_core::acoustic::FeatureKind;
use eegspeech_core::dataio::Condition;
use eegspeech_core::pipeline::{self, read_config, Command, PipelineError, RunConfig, Selection};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "eegspeech", version, about = "EEG-to-speech synthesis and acoustic feature regression")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed, overriding `run.seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory, overriding `run.out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,

    /// Restrict to one subject.
    #[arg(long, global = true, value_name = "N")]
    subject: Option<u8>,

    /// Restrict to one condition.
    #[arg(long, global = true, value_name = "spoken|listen")]
    condition: Option<Condition>,

    /// Train a single acoustic feature kind (train-regress only).
    #[arg(long, global = true, value_name = "fN")]
    kind: Option<FeatureKind>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Generate the synthetic EEG/audio corpus.
    GenData,
    /// Filter, notch, ICA-clean and z-score the EEG.
    Preprocess,
    /// Compute the 155-dimensional statistical EEG features.
    ExtractEegFeats,
    /// Fit kernel PCA on training features and reduce every trial.
    FitKpca,
    /// Resample audio to 15 kHz and compute the 16 acoustic feature kinds.
    ExtractAcoustic,
    /// Assign trials to train/validation/test.
    Split,
    /// Train the waveform synthesis network.
    TrainSynth,
    /// Train the acoustic feature regression networks.
    TrainRegress,
    /// Evaluate synthesis on the test split.
    EvalSynth,
    /// Evaluate feature regression on the test split.
    EvalRegress,
    /// Write predicted and true spectrograms for test trials.
    ExportSpectrogram,
    /// Run the finite-difference gradient suite.
    GradCheck,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::GenData => Command::GenData,
            Cmd::Preprocess => Command::Preprocess,
            Cmd::ExtractEegFeats => Command::ExtractEegFeats,
            Cmd::FitKpca => Command::FitKpca,
            Cmd::ExtractAcoustic => Command::ExtractAcoustic,
            Cmd::Split => Command::Split,
            Cmd::TrainSynth => Command::TrainSynth,
            Cmd::TrainRegress => Command::TrainRegress,
            Cmd::EvalSynth => Command::EvalSynth,
            Cmd::EvalRegress => Command::EvalRegress,
            Cmd::ExportSpectrogram => Command::ExportSpectrogram,
            Cmd::GradCheck => Command::GradCheck,
        }
    }
}

fn execute(cli: &Cli) -> Result<serde_json::Value, PipelineError> {
    let text = match &cli.config {
        Some(path) => read_config(path)?,
        None => String::new(),
    };
    let cfg = RunConfig::from_toml_str_with(&text, cli.seed, cli.out.as_deref())?;
    let sel = Selection {
        subject: cli.subject,
        condition: cli.condition,
        kind: cli.kind,
    };
    pipeline::run(cli.command.command(), &cfg, &sel)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            println!("{}", json!({ "error": e.kind().to_string(), "exit_code": 1 }));
            return ExitCode::from(1);
        }
    };
    let name = cli.command.command().name();
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("eegspeech {name}: {e}");
            println!("{}", json!({ "command": name, "error": e.to_string(), "exit_code": code }));
            ExitCode::from(code as u8)
        }
    }
}
