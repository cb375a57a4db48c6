//! `sfod`: corruption datasets, adaptation runs, evaluation and ablations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfod_core::Error;

mod commands;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  invalid input or failed run
  2  bad configuration or usage (the error line names the offending key)
  3  I/O failure

Errors are printed to stderr as one line:
  error kind=<config|usage|io|invalid> [key=<key>] [path=\"<path>\"] message=\"<text>\"";

#[derive(Debug, Parser)]
#[command(
    name = "sfod",
    version,
    about = "Source-free adaptation of oriented-box detectors at desk scale",
    after_help = EXIT_CODES
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Seed for every random stream; replaces the config's seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (TOML). Flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; receives a `resolved_config` file.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write `<out>/<kind>/...` corrupted copies of an image tree plus a manifest.
    Corrupt {
        /// Source tree; images are corrupted, other files copied.
        #[arg(long, value_name = "DIR")]
        src: Option<PathBuf>,
        /// Comma-separated kinds, or `all`.
        #[arg(long)]
        kinds: Option<String>,
        #[arg(long)]
        severity: Option<u8>,
        /// Severity table (TOML) replacing the built-in one.
        #[arg(long, value_name = "FILE")]
        table: Option<PathBuf>,
    },
    /// Render labelled synthetic scenes to disk.
    Scenes {
        #[arg(long)]
        count: Option<usize>,
        /// Number of classes.
        #[arg(long)]
        classes: Option<usize>,
        /// Image id prefix.
        #[arg(long)]
        prefix: Option<String>,
    },
    /// Mean-teacher adaptation of the source detector on one target split.
    Adapt {
        /// Aggregation weight of the zero-shot scores.
        #[arg(long)]
        lambda: Option<f64>,
        /// Plain self-training without zero-shot aggregation.
        #[arg(long)]
        no_cga: bool,
        /// Corruption kind of the synthetic target split.
        #[arg(long)]
        kind: Option<String>,
        /// Dataset directory to adapt on instead of a synthetic split.
        #[arg(long, value_name = "DIR")]
        target: Option<PathBuf>,
        /// Source parameters to start from instead of training them.
        #[arg(long, value_name = "FILE")]
        source: Option<PathBuf>,
    },
    /// Score detection files against ground-truth files.
    Eval {
        /// Directory of `<image_id>.txt` detection files.
        #[arg(long, value_name = "DIR")]
        dets: Option<PathBuf>,
        /// Directory of `<image_id>.txt` ground-truth files.
        #[arg(long, value_name = "DIR")]
        gt: Option<PathBuf>,
        /// Class names, one per line.
        #[arg(long, value_name = "FILE")]
        classes: Option<PathBuf>,
        /// Matching IoU threshold.
        #[arg(long)]
        iou: Option<f64>,
    },
    /// CGA adaptation over a list of λ values, averaged over seeds and kinds.
    Sweep {
        /// Comma-separated λ values.
        #[arg(long)]
        lambdas: Option<String>,
    },
    /// Every method on every corruption kind, averaged over seeds.
    Matrix {
        /// Comma-separated kinds, or `all`.
        #[arg(long)]
        kinds: Option<String>,
        /// Comma-separated subset of direct,self_train,cga.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Validate or convert embedding files.
    #[command(name = "embed-io")]
    EmbedIo {
        #[command(subcommand)]
        action: EmbedAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum EmbedAction {
    /// Check structure and values; with `--classes`, check keys against the class list.
    Validate {
        file: PathBuf,
        #[arg(long, value_name = "FILE")]
        classes: Option<PathBuf>,
    },
    /// Binary to text or back; a `.txt` output is written as text.
    Convert { input: PathBuf, output: PathBuf },
}

fn quote(s: &str) -> String {
    format!("{s:?}")
}

fn error_line(e: &Error) -> (u8, String) {
    match e {
        Error::Config { key, message } => (2, format!("error kind=config key={key} message={}", quote(message))),
        Error::UnknownKind(k) => (
            2,
            format!("error kind=config key=kinds message={}", quote(&format!("unknown corruption kind `{k}`"))),
        ),
        Error::Io { path, source } => (
            3,
            format!(
                "error kind=io path={} message={}",
                quote(&path.display().to_string()),
                quote(&source.to_string())
            ),
        ),
        Error::Image(err) => (3, format!("error kind=io message={}", quote(&err.to_string()))),
        other => (1, format!("error kind=invalid message={}", quote(&other.to_string()))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error kind=usage message={}", quote(msg));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.common.workers {
        if n == 0 {
            eprintln!("error kind=usage key=workers message={}", quote("must be at least 1"));
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error kind=invalid message={}", quote(&e.to_string()));
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, line) = error_line(&e);
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
