use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use certfed_cli::commands::{self, print_cert_table};
use certfed_cli::{output_dir, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "certfed", version, about = "Certified defences for federated adversarial training")]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Output directory; overrides `output_dir` and $CERTFED_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on the client pool.
    Train(Common),
    /// Certify a model over the configured radii.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Saved model; defaults to the configured starting model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the federated simulation.
    Simulate(Common),
    /// Run the configured attack.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Check the internal consistency of a report.
    ValidateReport { report: PathBuf },
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = output_dir(c.out.as_deref(), Some(&cfg));
    Ok((cfg, out))
}

fn print_summary(path: &Path, summary: &serde_json::Map<String, serde_json::Value>) {
    println!("report: {}", path.display());
    match serde_json::to_string_pretty(summary) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("cannot render summary: {e}"),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.cmd {
        Cmd::Train(c) => {
            let (cfg, out) = load(&c)?;
            let r = commands::train_cmd(&cfg, &out)?;
            println!("model: {}", r.model_path.display());
            print_summary(&r.report_path, &r.summary);
        }
        Cmd::Certify { common, model } => {
            let (cfg, out) = load(&common)?;
            let r = commands::certify_cmd(&cfg, model.as_deref(), &out)?;
            print_cert_table(&r.rows);
            println!("report: {}", r.report_path.display());
        }
        Cmd::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            let r = commands::simulate_cmd(&cfg, &out)?;
            print_summary(&r.report_path, &r.summary);
        }
        Cmd::Attack { common, model } => {
            let (cfg, out) = load(&common)?;
            let r = commands::attack_cmd(&cfg, model.as_deref(), &out)?;
            println!("model: {}", r.model_path.display());
            print_summary(&r.report_path, &r.summary);
        }
        Cmd::ValidateReport { report } => {
            let v = commands::validate_report_cmd(&report)?;
            println!("{:?} report: {} checks, {} problems", v.kind, v.checks, v.problems.len());
            for p in &v.problems {
                println!("  {p}");
            }
            if !v.ok() {
                return Err(CliError::Runtime(format!("{} failed validation", report.display())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("certfed: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
