use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use otrsens::harness::{self, RunConfig};

#[derive(Parser)]
#[command(name = "otrsens", version, about = "Optimal treatment regimes among compliers under a sensitivity model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic trial with its hidden-truth sidecar.
    Gen(Common),
    /// Fit every learner on one dataset.
    Fit(Common),
    /// Replicated known-alpha scenario.
    Scenario(Common),
    /// Sensitivity sweep over the analysis alpha grid.
    Sweep(Common),
    /// Repeated train/test splits on a binary-outcome world.
    Traintest(Common),
    /// Exact identification and robustness checks on the finite oracle.
    OracleCheck(Common),
}

enum Outcome {
    Valid,
    Invalid(String),
}

fn run(cmd: Command) -> Result<Outcome, otrsens::Error> {
    let (name, c) = match &cmd {
        Command::Gen(c) => ("gen", c),
        Command::Fit(c) => ("fit", c),
        Command::Scenario(c) => ("scenario", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Traintest(c) => ("traintest", c),
        Command::OracleCheck(c) => ("oracle-check", c),
    };
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    let out = c.out.clone();
    log::info!("{name}: seed {}, output {}", cfg.master_seed(), out.display());
    harness::with_jobs(c.jobs, move || -> Result<Outcome, otrsens::Error> {
        let status = match cmd {
            Command::Gen(_) => {
                let ds = harness::run_gen(&cfg, &out)?;
                println!("wrote {} rows to {}", ds.len(), out.join("data.csv").display());
                return Ok(Outcome::Valid);
            }
            Command::Fit(_) => {
                for p in harness::run_fit(&cfg, &out)? {
                    println!("{}: beta0 {:.4}, beta {:?}, lambda {}", p.method, p.beta0, p.beta, p.lambda);
                }
                return Ok(Outcome::Valid);
            }
            Command::Scenario(_) => {
                let r = harness::run_scenario(&cfg)?;
                r.write(&out)?;
                for &m in &r.methods {
                    let ((rm, rs), (vm, vs)) = (r.rate(m), r.value(m));
                    println!("{m}: rate {rm:.3} ({rs:.3}), value {vm:.3} ({vs:.3})");
                }
                r.status
            }
            Command::Sweep(_) => {
                let r = harness::run_sweep(&cfg)?;
                r.write(&out)?;
                println!("{} cells written to {}", r.cells.len(), out.join("heatmap.csv").display());
                r.status
            }
            Command::Traintest(_) => {
                let r = harness::run_train_test(&cfg)?;
                r.write(&out)?;
                println!("{} cells written to {}", r.cells.len(), out.join("values.csv").display());
                r.status
            }
            Command::OracleCheck(_) => {
                let r = harness::run_oracle_check(&cfg)?;
                r.write(&out)?;
                println!("identification gap {:.3e} in {:.3} s", r.max_identification_gap(), r.identification_seconds);
                for (p, k) in r.passes() {
                    println!("{p}: {k}/{} seeds covered", r.seeds);
                }
                return Ok(if r.all_pass() { Outcome::Valid } else { Outcome::Invalid("oracle checks failed".into()) });
            }
        };
        Ok(if status.is_valid() {
            Outcome::Valid
        } else {
            Outcome::Invalid(format!("{} of {} units failed", status.failures.len(), status.attempted))
        })
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Valid) => ExitCode::SUCCESS,
        Ok(Outcome::Invalid(msg)) => {
            eprintln!("invalid run: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
