//! Command-line driver.
//!
//! Verbs: `run <config>`, `compare <config>`, `picard <config>`,
//! `resume <snapshot> <config>`. Any `--key=value` or `--section.key=value`
//! flag overrides the corresponding config key. CHF_THREADS caps the worker
//! pool. Exit status: 0 success, 2 divergence, 3 configuration error,
//! 4 solver failure.

use std::path::Path;
use std::process::ExitCode;

use chf::config::{split_cli_args, RunConfig};
use chf::experiment::{compare_baseline, resume_run, run_experiment, run_picard};
use chf::ChfError;

const USAGE: &str = "usage: chf <run|compare|picard> <config> [--key=value ...]
       chf resume <snapshot> <config> [--key=value ...]";

fn init_threads() -> Result<(), ChfError> {
    let Ok(raw) = std::env::var("CHF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| ChfError::Config(format!("CHF_THREADS must be a number, got `{raw}`")))?;
    if n == 0 {
        return Err(ChfError::Config("CHF_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ChfError::Config(format!("thread pool: {e}")))
}

fn dispatch(args: &[String]) -> Result<bool, ChfError> {
    let (overrides, positional) = split_cli_args(args)?;
    let usage = || ChfError::Config(USAGE.into());
    let verb = positional.first().ok_or_else(usage)?.as_str();
    let mut diverged = false;
    match verb {
        "run" | "compare" | "picard" => {
            let [_, config] = positional.as_slice() else {
                return Err(usage());
            };
            let cfg = RunConfig::from_file(Path::new(config), &overrides)?;
            match verb {
                "run" => diverged = run_experiment(&cfg)?.diverged(),
                "compare" => {
                    compare_baseline(&cfg)?;
                }
                _ => {
                    let solution = run_picard(&cfg)?;
                    if !solution.report.converged {
                        eprintln!(
                            "warning: not converged below {} in {} iterations",
                            cfg.picard_tol,
                            solution.report.iterations()
                        );
                    }
                }
            }
        }
        "resume" => {
            let [_, snapshot, config] = positional.as_slice() else {
                return Err(usage());
            };
            let cfg = RunConfig::from_file(Path::new(config), &overrides)?;
            diverged = resume_run(Path::new(snapshot), &cfg)?.diverged();
        }
        other => {
            return Err(ChfError::Config(format!("unknown verb `{other}`\n{USAGE}")));
        }
    }
    Ok(diverged)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = init_threads().and_then(|()| dispatch(&args));
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
