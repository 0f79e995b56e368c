use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sigpca::cli::{cmd_run, cmd_stage, cmd_synth, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "sigpca",
    version,
    about = "Signature-PCA summary statistics with neural-network reconstruction and observation-based correction of gridded model outputs"
)]
struct Cli {
    /// JSON configuration file; omitted keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config key).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; derives the subset/init/shuffle seed family.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Thread count recorded in provenance (computation is sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Variant to run (overrides the config list).
    #[arg(long, global = true)]
    variant: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset (field, stations, truth).
    Synth,
    /// Run the full workflow for every configured variant.
    Run,
    /// Compute signature features.
    Signatures,
    /// Fit the summary-statistic reduction and store the scores.
    Reduce,
    /// Train the reconstruction network on the gridpoint subset.
    TrainRecon,
    /// Predict the full grid from the reconstruction network.
    Reconstruct,
    /// Train the corrective network on station residuals.
    TrainCorrect,
    /// Predict corrections everywhere and add them to the reconstruction.
    Correct,
    /// Write the evaluation report for a corrected run.
    Evaluate,
    /// Sensitivity sweep over training-gridpoint percentages.
    Sweep,
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if let Some(variant) = &cli.variant {
        config.variants = vec![variant.parse().map_err(CliError::Config)?];
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = build_config(cli)?;
    match &cli.command {
        Command::Synth => {
            for path in cmd_synth(&config)? {
                println!("{}", path.display());
            }
        }
        Command::Run => {
            for report in cmd_run(&config)? {
                for stage in &report.stages {
                    println!(
                        "{} {} {}{}",
                        report.variant.name(),
                        stage.stage,
                        stage.artifact.display(),
                        if stage.skipped { " (cached)" } else { "" }
                    );
                }
            }
        }
        Command::Signatures => println!("{}", cmd_stage("signatures", &config)?.artifact.display()),
        Command::Reduce => println!("{}", cmd_stage("reduce", &config)?.artifact.display()),
        Command::TrainRecon => {
            println!("{}", cmd_stage("train-recon", &config)?.artifact.display())
        }
        Command::Reconstruct => {
            println!("{}", cmd_stage("reconstruct", &config)?.artifact.display())
        }
        Command::TrainCorrect => {
            println!("{}", cmd_stage("train-correct", &config)?.artifact.display())
        }
        Command::Correct => println!("{}", cmd_stage("correct", &config)?.artifact.display()),
        Command::Evaluate => println!("{}", cmd_stage("evaluate", &config)?.artifact.display()),
        Command::Sweep => println!("{}", cmd_stage("sweep", &config)?.artifact.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("sigpca: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
