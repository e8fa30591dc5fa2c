use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unigen_core::lemma::DEFAULT_TOL;
use unigen_harness::config::{output_root, EvalConfig};
use unigen_harness::lemmas::{verify_lemmas, LemmaSuiteConfig};
use unigen_harness::runner::eval_checkpoint;
use unigen_harness::{compare, run_experiment, DatasetSpec, Error, ExperimentConfig, RunOptions};

/// Unified generative-model experiments.
#[derive(Parser)]
#[command(name = "unigen", version)]
struct Cli {
    /// Output root (overridden by UNIGEN_OUTPUT_ROOT).
    #[arg(long, global = true, default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one config.
    Run { config: PathBuf },
    /// Run the numerical verification suite.
    VerifyLemmas {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1000)]
        jsd_instances: usize,
        #[arg(long, default_value_t = 16)]
        support: usize,
        /// Tolerance of the finite-difference identity checks.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved run against a dataset spec (JSON file).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Paired-seed comparison of two configs; deltas are b - a.
    Compare {
        #[arg(long, num_args = 2, required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
}

fn load_dataset(path: &Path) -> Result<DatasetSpec, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let spec: DatasetSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    spec.validate(base)?;
    Ok(spec.resolved(base))
}

fn run(cli: Cli) -> Result<(), Error> {
    let opts = RunOptions::at(output_root(&cli.output_root));
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rec = run_experiment(&cfg, &opts)?;
            println!("{}", serde_json::to_string_pretty(&rec.summary)?);
            if let Some(d) = rec.run_dir {
                eprintln!("artifacts in {}", d.display());
            }
        }
        Command::VerifyLemmas {
            seed,
            instances,
            jsd_instances,
            support,
            tol,
            out,
        } => {
            let report = verify_lemmas(&LemmaSuiteConfig {
                seed,
                instances,
                jsd_instances,
                support,
                tol,
                ..LemmaSuiteConfig::default()
            })?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
            for c in &report.checks {
                eprintln!(
                    "{:<24} {} worst {:.3e} tol {:.1e} ({} instances)",
                    c.name,
                    if c.passed { "PASS" } else { "FAIL" },
                    c.worst,
                    c.tolerance,
                    c.instances
                );
            }
            if !report.all_passed {
                return Err(Error::Verification(report.failures().join(", ")));
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            samples,
        } => {
            let spec = load_dataset(&dataset)?;
            let eval = EvalConfig {
                samples,
                ..EvalConfig::default()
            };
            let summary = eval_checkpoint(&checkpoint, &spec, &eval)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compare { configs, seeds } => {
            let a = ExperimentConfig::load(&configs[0])?;
            let b = ExperimentConfig::load(&configs[1])?;
            let report = compare(&a, &b, seeds, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report.median_delta)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
