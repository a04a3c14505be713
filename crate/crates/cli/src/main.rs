mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{parse_cutoffs, Config, Cutoffs, FileConfig, Overrides};

/// Exit code 1: bad input or configuration. Exit code 2: a backend or tool failed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Failure(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sheetrag", version, about = "Index spreadsheets, answer questions over them and run multi-step workflows")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Index directory.
    #[arg(long, global = true, env = "SHEETRAG_INDEX")]
    index: Option<PathBuf>,
    /// TOML config file; defaults to ./sheetrag.toml when present.
    #[arg(long, global = true, env = "SHEETRAG_CONFIG")]
    config: Option<PathBuf>,
    /// `scripted:<path>` or an http(s) endpoint.
    #[arg(long, global = true, env = "SHEETRAG_BACKEND")]
    backend: Option<String>,
    /// `mock`, `mock:<dimension>` or an http(s) endpoint.
    #[arg(long, global = true, env = "SHEETRAG_EMBEDDER")]
    embedder: Option<String>,
    /// Results per retrieval (initial context and search tools).
    #[arg(long, global = true, env = "SHEETRAG_K")]
    k: Option<usize>,
    /// Rank-fusion smoothing constant.
    #[arg(long, global = true, env = "SHEETRAG_RRF_K")]
    rrf_k: Option<u32>,
    /// Tool calls allowed per agent run.
    #[arg(long, global = true, env = "SHEETRAG_BUDGET")]
    budget: Option<usize>,
    /// Subtasks run at once within a wave.
    #[arg(long, global = true, env = "SHEETRAG_CONCURRENCY")]
    concurrency: Option<usize>,
    /// Name of the environment variable holding the provider credential.
    #[arg(long, global = true, env = "SHEETRAG_API_KEY_ENV")]
    api_key_env: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest workbooks and persist a searchable index.
    Index {
        /// Workbook files (.xlsx or canonical .json) or directories holding them.
        inputs: Vec<PathBuf>,
        /// Index directory to write; defaults to --index.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip inputs that fail to ingest instead of aborting.
        #[arg(long)]
        keep_going: bool,
    },
    /// Answer a question with the tool-calling agent.
    Query {
        question: String,
        /// Trace file to write.
        #[arg(long, default_value = "trace.jsonl")]
        out: PathBuf,
    },
    /// Plan and execute a multi-step task.
    Workflow {
        task: String,
        /// Output file named in the planning prompt, relative to the run's artifacts directory.
        output_path: String,
        /// Run directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Score dense, lexical and hybrid retrieval on a labeled query set.
    Eval {
        queryset: PathBuf,
        /// Comma-separated cutoffs, e.g. 5,10.
        #[arg(long, env = "SHEETRAG_CUTOFFS", value_parser = parse_cutoffs)]
        cutoffs: Option<Cutoffs>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect a trace file.
    Trace {
        path: PathBuf,
        /// Print the n-th entry (1-based).
        #[arg(long, conflicts_with = "stats")]
        show: Option<usize>,
        /// Print call, token and latency totals.
        #[arg(long)]
        stats: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let cutoffs = match &cli.command {
        Command::Eval { cutoffs, .. } => cutoffs.clone().map(|c| c.0),
        _ => None,
    };
    let overrides = Overrides {
        index: g.index,
        backend: g.backend,
        embedder: g.embedder,
        k: g.k,
        rrf_k: g.rrf_k,
        budget: g.budget,
        concurrency: g.concurrency,
        cutoffs,
        api_key_env: g.api_key_env,
    };
    let file = FileConfig::discover(g.config.as_deref())?;
    let config = Config::resolve(overrides, file)?;
    match cli.command {
        Command::Index { inputs, out, keep_going } => commands::index(&config, &inputs, out.as_deref(), keep_going),
        Command::Query { question, out } => commands::query(&config, &question, &out),
        Command::Workflow { task, output_path, out } => commands::workflow(&config, &task, &output_path, &out),
        Command::Eval { queryset, out, .. } => commands::eval(&config, &queryset, out.as_deref()),
        Command::Trace { path, show, stats } => commands::trace(&path, show, stats),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
