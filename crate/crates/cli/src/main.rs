use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedadmm::problems::SyntheticSpec;
use fedadmm_cli::runner::{self, CliError};
use fedadmm_cli::{ConfigError, ExperimentConfig};

/// Federated composite optimization experiments.
#[derive(Parser)]
#[command(name = "fedadmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm and write metrics.
    Run(ConfigArgs),
    /// Check FedADMM against FedDR in lockstep; exit 1 on mismatch.
    Equivalence(ConfigArgs),
    /// Parse and build a config, print it with defaults filled in.
    ValidateConfig(ConfigArgs),
    /// Write a synthetic federated dataset to disk.
    GenData(GenData),
}

#[derive(Args)]
struct ConfigArgs {
    config: PathBuf,
    /// Override one value, e.g. `--set run.eta=2`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GenData {
    /// synthetic-0-0, synthetic-0.5-0.5 or synthetic-1-1
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    preset: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(&args.config, &args.overrides).map_err(|e| match e.line {
        Some(_) => ConfigError {
            line: None,
            message: format!("{}: {e}", args.config.display()),
        }
        .into(),
        None => e.into(),
    })
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os("FEDADMM_OUTPUT_ROOT").map(PathBuf::from)
}

fn gen_data(args: &GenData) -> Result<(), CliError> {
    let base = match &args.preset {
        Some(name) => SyntheticSpec::preset(name, args.seed)
            .ok_or_else(|| ConfigError {
                line: None,
                message: format!("unknown preset `{name}`"),
            })?,
        None => SyntheticSpec::new(args.alpha.unwrap_or(0.0), args.beta.unwrap_or(0.0), args.seed),
    };
    let spec = SyntheticSpec {
        n_clients: args.clients.unwrap_or(base.n_clients),
        input_dim: args.input_dim.unwrap_or(base.input_dim),
        classes: args.classes.unwrap_or(base.classes),
        ..base
    };
    let manifest = runner::generate_dataset(&spec, &args.out)?;
    let samples: usize = manifest.files.iter().map(|f| f.1).sum();
    println!(
        "wrote {} shards ({samples} samples) to {}\ncontent_sha256={}",
        manifest.files.len(),
        args.out.display(),
        manifest.content_hash
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            let out = runner::execute_run(&cfg, output_root().as_deref())?;
            warn(&out.warnings);
            println!("{}\noutputs in {}", out.summary, out.output_dir.display());
        }
        Command::Equivalence(args) => {
            let cfg = load(&args)?;
            let (out, report) = runner::execute_equivalence(&cfg, output_root().as_deref())?;
            println!("{}\noutputs in {}", out.summary, out.output_dir.display());
            runner::require_pass(&report)?;
        }
        Command::ValidateConfig(args) => {
            let cfg = load(&args)?;
            let (resolved, warnings) = runner::validate(&cfg)?;
            warn(&warnings);
            print!("{resolved}");
        }
        Command::GenData(args) => gen_data(&args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
