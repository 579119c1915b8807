//! Command-line harness for the sum-rate experiments.

use clap::{Args, Parser, Subcommand};
use rsma_ris::harness::{
    apply_power_budget, emit_report, run_algorithm1, run_element_sweep, run_power_sweep,
    RunResult, Scheme,
};
use rsma_ris::{validation, ScenarioConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rsma-ris",
    about = "Sum-rate experiments for an active-RIS-aided downlink RSMA system",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Channel seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scenario with one scheme and print the result.
    Run {
        #[command(flatten)]
        common: Common,
        /// active-rsma, passive-rsma, or active-sdma.
        #[arg(long, default_value = "active-rsma")]
        scheme: String,
    },
    /// Mean sum-rate versus total power budget, all schemes.
    SweepPower {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo trials per point.
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Total budgets in dBW.
        #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 10.0, 15.0, 20.0, 25.0])]
        totals: Vec<f64>,
    },
    /// Mean sum-rate versus RIS element count, all schemes.
    SweepElements {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Element counts to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4, 8, 16, 32, 64])]
        elements: Vec<usize>,
    },
    /// Per-iteration sum-rate traces for all schemes.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
    /// Re-verify the algebraic identities over random instances.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Number of random seeds per check.
        #[arg(long, default_value_t = 10)]
        trials: u64,
    },
}

fn load_config(common: &Common) -> rsma_ris::Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::from_toml_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_run(run: &RunResult) {
    println!("scheme          : {}", run.scheme.as_str());
    println!("seed            : {}", run.seed);
    println!("outer iterations: {}", run.sum_rates.len());
    println!("converged       : {}", run.converged);
    println!("degraded        : {}", run.degraded);
    println!("sum rate        : {:.4} bps/Hz", run.report.sum_rate);
    println!("BS power used   : {:.4} W", run.report.p_bs_used);
    println!("RIS power used  : {:.4} W", run.report.p_a_used);
    println!("feasible        : {}", run.report.feasible);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> rsma_ris::Result<bool> {
    match cli.command {
        Command::Run { common, scheme } => {
            let cfg = load_config(&common)?;
            let scheme: Scheme = scheme.parse()?;
            let mut run_cfg = cfg.clone();
            apply_power_budget(
                &mut run_cfg,
                cfg.p_bs_max + cfg.p_a_max,
                scheme,
            );
            let run = run_algorithm1(&run_cfg, run_cfg.seed, scheme)?;
            print_run(&run);
            emit_report(&common.out, &run_cfg, &[], &[], std::slice::from_ref(&run))?;
            println!("trace written to {}", common.out.join("fig4_convergence.csv").display());
            Ok(run.report.feasible && !run.degraded)
        }
        Command::SweepPower {
            common,
            trials,
            totals,
        } => {
            let cfg = load_config(&common)?;
            let rows = run_power_sweep(&cfg, &totals, &Scheme::ALL, trials)?;
            for r in &rows {
                println!(
                    "{:>6.1} dBW  {:<13} mean {:.4} bps/Hz  ({} trials, {} failed)",
                    r.x,
                    r.scheme.as_str(),
                    r.mean_sum_rate,
                    r.trials,
                    r.failures
                );
            }
            let ok = rows.iter().all(|r| r.failures == 0 && r.mean_sum_rate.is_finite());
            emit_report(&common.out, &cfg, &rows, &[], &[])?;
            Ok(ok)
        }
        Command::SweepElements {
            common,
            trials,
            elements,
        } => {
            let cfg = load_config(&common)?;
            let rows = run_element_sweep(&cfg, &elements, &Scheme::ALL, trials)?;
            for r in &rows {
                println!(
                    "L = {:<4} {:<13} mean {:.4} bps/Hz  ({} trials, {} failed)",
                    r.x,
                    r.scheme.as_str(),
                    r.mean_sum_rate,
                    r.trials,
                    r.failures
                );
            }
            let ok = rows.iter().all(|r| r.failures == 0 && r.mean_sum_rate.is_finite());
            emit_report(&common.out, &cfg, &[], &rows, &[])?;
            Ok(ok)
        }
        Command::Convergence { common } => {
            let cfg = load_config(&common)?;
            let total = cfg.p_bs_max + cfg.p_a_max;
            let mut runs = Vec::new();
            let mut ok = true;
            for scheme in Scheme::ALL {
                let mut run_cfg = cfg.clone();
                apply_power_budget(&mut run_cfg, total, scheme);
                let run = run_algorithm1(&run_cfg, run_cfg.seed, scheme)?;
                println!(
                    "{:<13} {} iterations, final {:.4} bps/Hz",
                    scheme.as_str(),
                    run.sum_rates.len(),
                    run.report.sum_rate
                );
                ok &= run.report.feasible;
                runs.push(run);
            }
            emit_report(&common.out, &cfg, &[], &[], &runs)?;
            Ok(ok)
        }
        Command::Validate { common, trials } => {
            let cfg = load_config(&common)?;
            let mut ok = true;
            for (name, res) in validation::run_all(&cfg, 0..trials) {
                match res {
                    Ok(()) => println!("{name:<28} ok"),
                    Err(e) => {
                        println!("{name:<28} FAILED: {e}");
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
    }
}
