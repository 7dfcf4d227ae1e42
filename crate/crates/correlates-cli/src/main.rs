use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use correlates_cli::{cmd_analyze, cmd_evalue, cmd_simulate, error_json, exit_code_for, GlobalOpts};

const THREADS_ENV: &str = "CORRELATES_THREADS";

#[derive(Parser)]
#[command(
    name = "correlates",
    version,
    about = "Controlled-risk and controlled vaccine-efficacy analysis for immune correlates studies"
)]
struct Cli {
    /// Override the bootstrap / simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for bootstrap replicates (default: CORRELATES_THREADS
    /// env var, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Persist bootstrap replicate matrices as replicates.csv.
    #[arg(long, global = true)]
    keep_replicates: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full analysis pipeline on a trial CSV.
    Analyze {
        /// Analysis configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic trial with exact counterfactual truth tables.
    Simulate {
        /// Scenario JSON file.
        #[arg(long, conflicts_with = "preset")]
        scenario: Option<PathBuf>,
        /// Shipped scenario preset: null_marker, strong_cop, or confounded.
        #[arg(long)]
        preset: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// E-values for a marginalized risk ratio and optional upper 95% limit.
    Evalue {
        #[arg(long)]
        rr: f64,
        #[arg(long)]
        rr_ul: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("{{\"error\":{{\"kind\":\"config\",\"message\":\"invalid thread count\",\"exit_code\":2}}}}");
            return ExitCode::from(2);
        }
    }

    let opts = GlobalOpts { seed: cli.seed, keep_replicates: cli.keep_replicates };
    let result = match &cli.command {
        Command::Analyze { config, out } => cmd_analyze(config, out.as_deref(), &opts),
        Command::Simulate { scenario, preset, out } => {
            cmd_simulate(scenario.as_deref(), preset.as_deref(), out, &opts)
        }
        Command::Evalue { rr, rr_ul } => cmd_evalue(*rr, *rr_ul).map(|json| println!("{json}")),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
