//! Experiment harness: config resolution, staged runs, run directories and
//! the ablation matrix.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod plot;
pub mod report;

use std::fmt;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::semantics::load_semantics;
use crate::sessions::{build_image_stream, build_synthetic_dfsl_stream, build_synthetic_stream, Protocol, SessionStream};
use crate::trainer::{run_dfsl, run_fscil_with, LossRecord, RunState};

pub use config::{DatasetConfig, EvalConfig, ExperimentConfig, ImageDatasetConfig};
pub use report::RunReport;

/// A runtime failure tagged with the pipeline stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// True when `SEMKD_DETERMINISTIC=1`. All kernels in this crate are
/// single-threaded and already bitwise reproducible, so the flag only
/// documents intent in the logs.
pub fn deterministic_requested() -> bool {
    std::env::var("SEMKD_DETERMINISTIC").is_ok_and(|v| v == "1")
}

pub fn build_stream(cfg: &ExperimentConfig) -> Result<SessionStream> {
    match (&cfg.dataset, cfg.eval.protocol) {
        (DatasetConfig::Synthetic(s), Protocol::Fscil) => build_synthetic_stream(s),
        (DatasetConfig::Synthetic(s), Protocol::Dfsl) => build_synthetic_dfsl_stream(s),
        (DatasetConfig::Image(img), Protocol::Fscil) => {
            let semantics = load_semantics(&img.semantics, img.semantic_dim)?;
            build_image_stream(
                &img.root,
                &img.split,
                semantics,
                &img.options,
                img.way,
                img.shot,
                crate::seeds::derive_seed(cfg.seed, "dataset", 0),
            )
        }
        (DatasetConfig::Image(_), Protocol::Dfsl) => {
            Err(Error::Config("the dfsl protocol needs a synthetic dataset".into()))
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub loss_log: Vec<LossRecord>,
}

/// Runs `cfg` in memory. `on_session` sees the state after each FSCIL
/// session, or the post-base state for DFSL.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut on_session: impl FnMut(&RunState) -> Result<()>,
) -> std::result::Result<RunOutcome, StageError> {
    cfg.validate().stage("config")?;
    let resolved = cfg.resolved();
    let run_id = cfg.run_id().stage("config")?;
    if deterministic_requested() {
        info!("deterministic kernels requested");
    }
    let stream = build_stream(&resolved).stage("dataset")?;
    let mut trainable_params = Vec::new();
    let (sessions, dfsl, loss_log) = match resolved.eval.protocol {
        Protocol::Fscil => {
            let (reports, state) = run_fscil_with(&stream, &resolved.model, &resolved.train, |state, _| {
                trainable_params.push(state.model.count_trainable());
                on_session(state)
            })
            .stage("train")?;
            (reports, None, state.loss_log)
        }
        Protocol::Dfsl => {
            let episodes = resolved.eval.episodes;
            let (way, shot) = match &resolved.dataset {
                DatasetConfig::Synthetic(s) => (s.way, s.shot),
                DatasetConfig::Image(i) => (i.way, i.shot),
            };
            let (dfsl, state) =
                run_dfsl(&stream, &resolved.model, &resolved.train, episodes, way, shot).stage("train")?;
            trainable_params.push(state.model.count_trainable());
            on_session(&state).stage("train")?;
            (Vec::new(), Some(dfsl), state.loss_log)
        }
    };
    Ok(RunOutcome {
        report: RunReport {
            name: cfg.name.clone(),
            protocol: cfg.eval.protocol,
            run_id,
            seed: cfg.seed,
            trainable_params,
            sessions,
            dfsl,
        },
        loss_log,
    })
}

/// Runs `cfg` and writes everything into `output_dir/<run id>`.
pub fn run_to_dir(cfg: &ExperimentConfig) -> std::result::Result<(PathBuf, RunReport), StageError> {
    cfg.validate().stage("config")?;
    let run_id = cfg.run_id().stage("config")?;
    let dir = cfg.output_dir.join(&run_id);
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e)).stage("write")?;
    let resolved = cfg.resolved().to_toml().stage("config")?;
    write_file(&dir.join("config.toml"), &resolved).stage("write")?;

    let outcome = run_experiment(cfg, |state| {
        let path = ckpt_dir.join(format!("session_{:02}.semkd", state.session_index));
        checkpoint::save_checkpoint(state, &path)
    })?;
    let report = outcome.report;
    write_file(&dir.join(report::REPORT_FILE), &report.to_json().stage("write")?).stage("write")?;
    report::write_loss_log(&dir.join("loss_log.csv"), &outcome.loss_log).stage("write")?;
    if report.protocol == Protocol::Fscil {
        report::write_sessions_csv(&dir.join("sessions.csv"), &report.sessions).stage("write")?;
        report::plot_run(&dir.join("accuracy.png"), &report.name, &report.sessions).stage("plot")?;
    }
    info!("run {} written to {}", report.run_id, dir.display());
    Ok((dir, report))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum AblationSwitch {
    /// Distillation weight set to zero.
    NoDistill,
    /// Attention-loss weight set to zero.
    NoAttnLoss,
    /// A single embedding module.
    SingleEmbedding,
}

impl AblationSwitch {
    pub fn label(self) -> &'static str {
        match self {
            AblationSwitch::NoDistill => "no-distill",
            AblationSwitch::NoAttnLoss => "no-attn-loss",
            AblationSwitch::SingleEmbedding => "single-embedding",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        match self {
            AblationSwitch::NoDistill => cfg.train.loss.lambda2 = 0.0,
            AblationSwitch::NoAttnLoss => cfg.train.loss.lambda3 = 0.0,
            AblationSwitch::SingleEmbedding => cfg.model.num_superclasses = 1,
        }
    }
}

/// All `2^k` combinations of `switches`, starting with the unmodified config.
pub fn ablation_variants(cfg: &ExperimentConfig, switches: &[AblationSwitch]) -> Vec<(String, ExperimentConfig)> {
    let mut switches = switches.to_vec();
    switches.sort();
    switches.dedup();
    (0..1usize << switches.len())
        .map(|mask| {
            let mut variant = cfg.clone();
            let on: Vec<AblationSwitch> = switches
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &s)| s)
                .collect();
            for s in &on {
                s.apply(&mut variant);
            }
            let label = if on.is_empty() {
                "full".to_owned()
            } else {
                on.iter().map(|s| s.label()).collect::<Vec<_>>().join("+")
            };
            variant.name = format!("{}:{label}", cfg.name);
            (label, variant)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub run_id: String,
    pub joint_acc: f64,
    pub acc_base: Option<f64>,
    pub acc_novel: Option<f64>,
    pub hm: Option<f64>,
    pub delta: Option<f64>,
}

impl AblationRow {
    pub fn from_report(variant: &str, r: &RunReport) -> Self {
        let last = r.last_session();
        AblationRow {
            variant: variant.to_owned(),
            run_id: r.run_id.clone(),
            joint_acc: last
                .map(|s| s.joint_acc)
                .or(r.dfsl.as_ref().map(|d| d.joint_acc))
                .unwrap_or(f64::NAN),
            acc_base: last.map(|s| s.acc_base),
            acc_novel: last.and_then(|s| s.acc_novel),
            hm: last.and_then(|s| s.hm),
            delta: r.dfsl.as_ref().map(|d| d.delta),
        }
    }
}

/// Runs every variant into its own run directory and writes the comparison
/// table as `ablation.csv` under the output directory.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    switches: &[AblationSwitch],
) -> std::result::Result<Vec<AblationRow>, StageError> {
    let mut rows = Vec::new();
    for (label, variant) in ablation_variants(cfg, switches) {
        info!("ablation variant {label}");
        let (_, report) = run_to_dir(&variant)?;
        rows.push(AblationRow::from_report(&label, &report));
    }
    let path = cfg.output_dir.join("ablation.csv");
    let write = || -> Result<()> {
        let mut w = csv::Writer::from_path(&path)?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    };
    write().stage("write")?;
    Ok(rows)
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{:.2}", 100.0 * x));
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "variant", "joint", "base", "novel", "hm", "delta"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n",
            r.variant,
            format!("{:.2}", 100.0 * r.joint_acc),
            opt(r.acc_base),
            opt(r.acc_novel),
            opt(r.hm),
            opt(r.delta),
        ));
    }
    out
}
