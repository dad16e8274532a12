use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jdoc::config::{parse_config, Experiment};
use jdoc::gradcheck::{gradient_check, DEFAULT_STEPS};
use jdoc::output::JsonLines;
use jdoc::{run_experiment, HarnessError};
use jdoc_core::ControlField;

/// Optimal control of jump-diffusion particle ensembles.
#[derive(Debug, Parser)]
#[command(name = "jdoc", version)]
struct Cli {
    /// Worker threads for the particle loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one of the reference experiments.
    Run {
        experiment: Experiment,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the adjoint gradient with finite differences.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        directions: usize,
        /// Comma-separated FD steps.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<f64>>,
        /// Exit with status 3 if the best step's error exceeds this.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Average a control file in time.
    AverageControl {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            experiment,
            config,
            seed,
            out,
        } => {
            let mut cfg = parse_config(&config, Some(experiment))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.or_else(|| cfg.output.dir.clone());
            let mut stdout = JsonLines::new(std::io::stdout().lock());
            let outcome = run_experiment(&cfg, out.as_deref(), |rep| {
                let _ = stdout.write(rep);
                let _ = stdout.flush();
            })?;
            drop(stdout);
            let s = &outcome.summary;
            eprintln!(
                "{}: {} iterations, objective {} -> {} (relative {}), final mean ({}, {})",
                s.experiment,
                s.iterations,
                s.initial_objective,
                s.final_objective,
                s.relative_objective,
                s.final_mean[0],
                s.final_mean[1]
            );
            Ok(())
        }
        Command::GradCheck {
            config,
            directions,
            steps,
            tol,
        } => {
            let cfg = parse_config(&config, None)?;
            let steps = steps.unwrap_or_else(|| DEFAULT_STEPS.to_vec());
            let report = gradient_check(&cfg, directions, &steps)?;
            println!("|g| = {:e}, {} directions", report.grad_norm, report.n_directions);
            println!("{:>10}  {:>12}", "step", "max rel err");
            for (h, e) in report.steps.iter().zip(&report.max_rel_error) {
                println!("{h:>10.0e}  {e:>12.3e}");
            }
            println!("best: step {:e}, max relative error {:e}", report.best_step, report.best_error);
            if report.best_error > tol {
                return Err(HarnessError::Numerical(jdoc_core::Error::InvalidArgument(format!(
                    "gradient check failed: {:e} > {tol:e}",
                    report.best_error
                ))));
            }
            Ok(())
        }
        Command::AverageControl { input, out } => {
            let file = std::fs::File::open(&input).map_err(|e| HarnessError::Io {
                path: input.display().to_string(),
                source: e,
            })?;
            let cf = ControlField::read_csv(std::io::BufReader::new(file))?;
            let avg = cf.time_average();
            let w = jdoc::output::create(&out)?;
            avg.write_csv(w)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
