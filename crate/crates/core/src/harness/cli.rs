//! Command-line entry points. Exit codes: 0 success, 1 runtime failure,
//! 2 invalid configuration or arguments.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::ExperimentConfig;
use super::report::{aggregate, collect_reports, plot_aggregate, write_aggregate_csv};
use super::{format_ablation_table, run_ablation, run_to_dir, AblationSwitch};
use crate::gradcheck::{check_gradients, GradCheckConfig};

#[derive(Debug, Parser)]
#[command(name = "semkd", version, about = "Few-shot class-incremental learning with semantic distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key overrides, e.g. `train.loss.lambda2=0`.
        #[arg(long, num_args = 1..)]
        overrides: Vec<String>,
    },
    /// Run every combination of the given switches with shared seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 1.., value_delimiter = ',', value_enum)]
        switches: Vec<AblationSwitch>,
        #[arg(long, num_args = 1..)]
        overrides: Vec<String>,
    },
    /// Aggregate the reports below a results directory.
    Report { results_dir: PathBuf },
    /// Finite-difference check of the analytic gradients.
    CheckGrads {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, i32> {
    if !path.is_file() {
        eprintln!("error: config file {} not found", path.display());
        return Err(EXIT_CONFIG);
    }
    let cfg = ExperimentConfig::load(path, overrides)
        .and_then(|cfg| cfg.validate().map(|_| cfg))
        .map_err(|e| {
            eprintln!("error: invalid config {}: {e}", path.display());
            EXIT_CONFIG
        })?;
    Ok(cfg)
}

fn report_stage_error(e: &super::StageError) -> i32 {
    eprintln!("error: {e}");
    if e.stage == "config" {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = match load_config(&config, &overrides) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run_to_dir(&cfg) {
                Ok((dir, report)) => {
                    for s in &report.sessions {
                        println!(
                            "session {:>2}  joint {:6.2}%  base {:6.2}%  novel {}",
                            s.session,
                            100.0 * s.joint_acc,
                            100.0 * s.acc_base,
                            s.acc_novel.map_or("-".into(), |v| format!("{:6.2}%", 100.0 * v))
                        );
                    }
                    if let Some(d) = &report.dfsl {
                        println!(
                            "dfsl  joint {:.2}% ± {:.2}  delta_b {:.2}  delta_n {:.2}  delta {:.2}",
                            100.0 * d.joint_acc,
                            100.0 * d.joint_acc_half_width,
                            100.0 * d.delta_b,
                            100.0 * d.delta_n,
                            100.0 * d.delta
                        );
                    }
                    println!("run directory: {}", dir.display());
                    EXIT_OK
                }
                Err(e) => report_stage_error(&e),
            }
        }
        Command::Ablate {
            config,
            switches,
            overrides,
        } => {
            let cfg = match load_config(&config, &overrides) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run_ablation(&cfg, &switches) {
                Ok(rows) => {
                    print!("{}", format_ablation_table(&rows));
                    EXIT_OK
                }
                Err(e) => report_stage_error(&e),
            }
        }
        Command::Report { results_dir } => {
            let reports = match collect_reports(&results_dir) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", results_dir.display());
                    return EXIT_CONFIG;
                }
            };
            if reports.is_empty() {
                eprintln!("error: no run reports under {}", results_dir.display());
                return EXIT_CONFIG;
            }
            let reports: Vec<_> = reports.into_iter().map(|(_, r)| r).collect();
            let rows = aggregate(&reports);
            let csv_path = results_dir.join("aggregate.csv");
            let result = write_aggregate_csv(&csv_path, &rows).and_then(|_| plot_aggregate(&results_dir, &rows));
            match result {
                Ok(plots) => {
                    println!("{} runs aggregated into {}", reports.len(), csv_path.display());
                    for p in plots {
                        println!("plot: {}", p.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: stage `report` failed: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::CheckGrads { seed, tolerance } => {
            let cfg = GradCheckConfig {
                seed,
                ..GradCheckConfig::default()
            };
            match check_gradients(&cfg) {
                Ok(r) => {
                    for t in &r.tensors {
                        println!("{:<22} {:>5} params  max rel err {:.3e}", t.name, t.len, t.max_rel_error);
                    }
                    println!("max relative error: {:.3e} over {} parameters", r.max_rel_error, r.checked);
                    if r.max_rel_error < tolerance {
                        EXIT_OK
                    } else {
                        EXIT_RUNTIME
                    }
                }
                Err(e) => {
                    eprintln!("error: stage `check-grads` failed: {e}");
                    EXIT_RUNTIME
                }
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
