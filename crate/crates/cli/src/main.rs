mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Syntax-guided generation of code with embedded SQL.
#[derive(Debug, Parser)]
#[command(name = "turducken", version)]
pub struct Cli {
    /// JSON file with default settings; command-line flags take precedence.
    #[arg(long, global = true, env = "TURDUCKEN_CONFIG")]
    pub config_file: Option<PathBuf>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Syntax-augmented traversal of source code.
    #[command(subcommand)]
    Sat(SatCommand),
    /// Decode code for a description with a toy checkpoint or a bridge.
    Generate(GenerateArgs),
    /// Score candidate/reference pairs.
    Evaluate(EvaluateArgs),
    /// Train a toy dual-head model and write a checkpoint.
    TrainToy(TrainArgs),
    /// Sample counts and mean token lengths of a corpus.
    Stats(StatsArgs),
    /// Run one source through a checker.
    Check(CheckArgs),
    /// Convert loosely shaped JSON records into the sample JSONL format.
    Convert(ConvertArgs),
}

#[derive(Debug, Subcommand)]
pub enum SatCommand {
    /// Source (or tree JSON) to the rendered tag sequence.
    Encode(SatEncodeArgs),
    /// Rendered sequence (or sequence JSON) back to leaf tokens.
    Decode(SatDecodeArgs),
}

#[derive(Debug, Args)]
pub struct SatEncodeArgs {
    /// Input file; stdin when absent or `-`.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub grammar: Option<String>,
    /// Tag prefix length, or `full`.
    #[arg(long, default_value = "3")]
    pub tag_length: String,
    /// Input is a tree interchange document instead of source code.
    #[arg(long)]
    pub tree_json: bool,
    /// Print the sequence with its string table as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SatDecodeArgs {
    pub input: Option<PathBuf>,
    /// Rebuild source layout for this grammar instead of joining tokens.
    #[arg(long)]
    pub grammar: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// `toy:<checkpoint>` or `bridge:<addr>` (`host:port` or `stdio:<command>`).
    #[arg(long, env = "TURDUCKEN_SCORER")]
    pub scorer: String,
    /// Functional description to generate code for.
    #[arg(long)]
    pub nl: String,
    #[arg(long, default_value = "origin")]
    pub task: String,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub beam_k: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// `cmd:<template>`, `parse:<grammar>`, `lyra`, `lyra-pylint` or `pisces`.
    #[arg(long, env = "TURDUCKEN_CHECKER")]
    pub checker: Option<String>,
    #[arg(long)]
    pub checker_timeout_ms: Option<u64>,
    /// Prompt kind; defaults to the checkpoint's.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub grammar: Option<String>,
    /// Check beam candidates one at a time instead of all at once.
    #[arg(long)]
    pub sequential_checks: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSONL of `{"id", "candidate", "reference"}` objects.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    #[arg(long)]
    pub grammar: Option<String>,
    #[arg(long)]
    pub style: Option<String>,
    /// CodeBLEU weights: bleu,weighted_bleu,syntax_match,dataflow_match.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub keyword_weight: Option<f64>,
    #[arg(long)]
    pub trivial_k: Option<usize>,
    /// JSONL of source strings for the trivial n-gram set.
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[arg(long, env = "TURDUCKEN_CHECKER")]
    pub checker: Option<String>,
    #[arg(long)]
    pub checker_timeout_ms: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train/valid/test JSONL; a synthetic corpus otherwise.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Size of the synthetic corpus.
    #[arg(long, default_value_t = 200)]
    pub synthetic: usize,
    /// JSON with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, default_value = "3")]
    pub tag_length: String,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log the minibatch loss every N steps.
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// A split directory or a single JSONL file.
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub input: Option<PathBuf>,
    #[arg(long, env = "TURDUCKEN_CHECKER")]
    pub checker: Option<String>,
    #[arg(long)]
    pub checker_timeout_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub language: String,
    #[arg(long, default_value = "native_sql")]
    pub style: String,
    /// Prefix of generated ids.
    #[arg(long, default_value = "sample")]
    pub prefix: String,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
