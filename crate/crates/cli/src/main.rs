use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mind_core::config::RunConfig;
use mind_core::runner::{self, exit, RunError};

/// Zero-shot harmful meme detection.
#[derive(Parser)]
#[command(name = "mind", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse reference embeddings and write the similarity index.
    Index(Settings),
    /// Print the top-K reference memes for one meme.
    Retrieve {
        target_id: String,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run the pipeline over the test split and write a report.
    Run {
        /// Report directory name; defaults to <timestamp>-<config hash>.
        #[arg(long)]
        run_id: Option<String>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Score a transcripts file against a manifest.
    Eval {
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run and score once per K value.
    SweepK {
        /// Comma-separated K values, e.g. 1,3,5.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        k_values: Vec<usize>,
        #[arg(long)]
        run_id: Option<String>,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Config file plus per-key overrides; a flag wins over the file.
#[derive(Args)]
struct Settings {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    index: Option<String>,
    #[arg(long = "lambda-v")]
    lambda_v: Option<String>,
    #[arg(long = "lambda-t")]
    lambda_t: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    #[arg(long = "timeout-secs")]
    timeout_secs: Option<String>,
    #[arg(long = "max-inflight")]
    max_inflight: Option<String>,
    #[arg(long = "mock-scenario")]
    mock_scenario: Option<String>,
    #[arg(long = "prompts.deriving")]
    prompts_deriving: Option<String>,
    #[arg(long = "prompts.debater")]
    prompts_debater: Option<String>,
    #[arg(long = "prompts.judge")]
    prompts_judge: Option<String>,
    #[arg(long = "prompts.baseline")]
    prompts_baseline: Option<String>,
    #[arg(long = "max-insights")]
    max_insights: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "sample-parallelism")]
    sample_parallelism: Option<String>,
    #[arg(long)]
    cache: Option<String>,
    #[arg(long = "cache-dir")]
    cache_dir: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "error-policy")]
    error_policy: Option<String>,
}

impl Settings {
    fn load(&self) -> Result<RunConfig, RunError> {
        let flags = [
            ("manifest", &self.manifest),
            ("embeddings", &self.embeddings),
            ("index", &self.index),
            ("lambda-v", &self.lambda_v),
            ("lambda-t", &self.lambda_t),
            ("k", &self.k),
            ("mode", &self.mode),
            ("backend", &self.backend),
            ("endpoint", &self.endpoint),
            ("model", &self.model),
            ("temperature", &self.temperature),
            ("timeout-secs", &self.timeout_secs),
            ("max-inflight", &self.max_inflight),
            ("mock-scenario", &self.mock_scenario),
            ("prompts.deriving", &self.prompts_deriving),
            ("prompts.debater", &self.prompts_debater),
            ("prompts.judge", &self.prompts_judge),
            ("prompts.baseline", &self.prompts_baseline),
            ("max-insights", &self.max_insights),
            ("seed", &self.seed),
            ("sample-parallelism", &self.sample_parallelism),
            ("cache", &self.cache),
            ("cache-dir", &self.cache_dir),
            ("out", &self.out),
            ("error-policy", &self.error_policy),
        ];
        let overrides: Vec<(String, String)> = flags
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_owned(), v.clone())))
            .collect();
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

async fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Index(settings) => {
            let summary = runner::cmd_index(&settings.load()?)?;
            println!("wrote {} ({} entries, dim {})", summary.path.display(), summary.entries, summary.dim);
        }
        Command::Retrieve { target_id, settings } => {
            let neighbors = runner::cmd_retrieve(&settings.load()?, &target_id)?;
            for n in &neighbors.items {
                println!("{}\t{:.6}", n.id, n.score);
            }
        }
        Command::Run { run_id, settings } => {
            let config = settings.load()?;
            let outcome = runner::cmd_run(&config, run_id.as_deref()).await?;
            print!("{}", outcome.summary.render_text());
            println!(
                "backend calls {} cache hits {}\nreport {}",
                outcome.stats.backend_calls,
                outcome.stats.cache_hits,
                outcome.report_dir.display()
            );
        }
        Command::Eval { report, settings } => {
            let config = settings.load()?;
            let manifest = config.require_manifest()?.to_owned();
            let summary = runner::cmd_eval(&report, &manifest, config.error_policy)?;
            print!("{}", summary.render_text());
        }
        Command::SweepK { k_values, run_id, settings } => {
            let rows = runner::cmd_sweep_k(&settings.load()?, &k_values, run_id.as_deref()).await?;
            print!("{}", runner::render_sweep_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(exit::IO as u8);
        }
    };
    match rt.block_on(execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
