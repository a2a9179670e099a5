//! `persona`: operator entry point for corpus checks, training, chat,
//! evaluation and the HTTP service.
//!
//! Exit codes: 0 success, 1 validation (including not-found and conflicts),
//! 2 provider failure, 3 internal error.

/// `println!` that exits quietly when stdout is a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use persona_core::evaluation::Grouping;
use persona_core::{Error, ErrorClass};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "persona",
    version,
    about = "Build, train, query and evaluate epoch-wise character personas"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct Global {
    /// Configuration file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Store root, overriding the configuration.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Provider override: `mock` or `mock:<script.json>`.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    /// Pin timestamps so repeated runs write identical bytes.
    #[arg(long, global = true)]
    pub fixed_clock: bool,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand)]
pub enum Command {
    /// Corpus checks.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Token statistics for a character's corpus and latest persona.
    Stats { character: String },
    /// Build the epoch-0 persona from the character information document.
    Init { character: String },
    /// Train one epoch per chapter, persisting every snapshot.
    Train {
        character: String,
        /// First epoch to train; must be one past the stored head.
        #[arg(long)]
        resume_from: Option<u32>,
    },
    /// List stored epochs.
    Epochs { character: String },
    /// Render the assembled persona at an epoch.
    Persona {
        character: String,
        #[arg(long)]
        epoch: u32,
        /// Write the persona document here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chat with the character at an epoch, one utterance per stdin line.
    Chat {
        character: String,
        #[arg(long)]
        epoch: u32,
    },
    /// Evaluation tasks.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP service.
    Serve {
        /// Bind address, overriding the configuration.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
pub enum CorpusCommand {
    /// Load a corpus directory and report what was found.
    Validate { dir: PathBuf },
}

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Administer the Big Five question bank and score facets.
    Bfi {
        character: String,
        #[arg(long)]
        epoch: u32,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Also write the facet table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare model facet tables against a human reference.
    Compare {
        #[arg(long)]
        human: PathBuf,
        /// `name=path`, repeatable; column order follows the flags.
        #[arg(long = "model", value_parser = parse_model, required = true)]
        models: Vec<(String, PathBuf)>,
        /// Reported footers to cross-check; unexplained divergences fail.
        #[arg(long)]
        reported: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Generate stories and store them.
    Stories {
        character: String,
        #[arg(long)]
        epoch: u32,
        #[arg(short = 'n', default_value_t = 4)]
        n: usize,
    },
    /// Aggregate a rating CSV into per-group means.
    Aggregate {
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "group")]
        grouping: GroupingArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum GroupingArg {
    Group,
    Story,
    All,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::Group => Grouping::Group,
            GroupingArg::Story => Grouping::Story,
            GroupingArg::All => Grouping::All,
        }
    }
}

fn parse_model(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got `{s}`")),
    }
}

/// A failure with its exit-code class.
#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            class: ErrorClass::Validation,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            class: ErrorClass::Internal,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Validation | ErrorClass::NotFound | ErrorClass::Conflict => 1,
            ErrorClass::Provider => 2,
            ErrorClass::Internal => 3,
        }
    }

    fn code(&self) -> &'static str {
        match self.class {
            ErrorClass::Validation => "validation_failed",
            ErrorClass::NotFound => "not_found",
            ErrorClass::Conflict => "conflict",
            ErrorClass::Provider => "provider_error",
            ErrorClass::Internal => "internal",
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let json_mode = cli.global.json;
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            if json_mode {
                out!("{}", json!({"error": {"code": e.code(), "message": e.message}}));
            }
            ExitCode::from(e.exit_code())
        }
    }
}
