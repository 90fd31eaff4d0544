//! Run reports on disk and their aggregation across runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plot::{plot_curves, Curve};
use crate::error::{Error, Result};
use crate::evalsuite::{DfslReport, SessionReport};
use crate::sessions::Protocol;
use crate::trainer::LossRecord;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub protocol: Protocol,
    pub run_id: String,
    pub seed: u64,
    /// Trainable parameter count during each session.
    pub trainable_params: Vec<usize>,
    pub sessions: Vec<SessionReport>,
    pub dfsl: Option<DfslReport>,
}

impl RunReport {
    pub fn last_session(&self) -> Option<&SessionReport> {
        self.sessions.last()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_sessions_csv(path: &Path, sessions: &[SessionReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["session", "joint_acc", "acc_base", "acc_novel", "hm"])?;
    for s in sessions {
        w.write_record([
            s.session.to_string(),
            s.joint_acc.to_string(),
            s.acc_base.to_string(),
            fmt_opt(s.acc_novel),
            fmt_opt(s.hm),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in log {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Joint, base and novel accuracy curves of a single run.
pub fn plot_run(path: &Path, title: &str, sessions: &[SessionReport]) -> Result<()> {
    let pts = |f: &dyn Fn(&SessionReport) -> Option<f64>| -> Vec<(f64, f64)> {
        sessions
            .iter()
            .filter_map(|s| f(s).map(|v| (s.session as f64, v)))
            .collect()
    };
    let curves = vec![
        Curve {
            label: "joint".into(),
            points: pts(&|s| Some(s.joint_acc)),
            band: None,
        },
        Curve {
            label: "base".into(),
            points: pts(&|s| Some(s.acc_base)),
            band: None,
        },
        Curve {
            label: "novel".into(),
            points: pts(&|s| s.acc_novel),
            band: None,
        },
    ];
    plot_curves(path, title, &curves)
}

/// Every `report.json` below `dir`, in path order.
pub fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, RunReport)>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == REPORT_FILE) {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                found.push((path, serde_json::from_str(&text)?));
            }
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub protocol: Protocol,
    pub name: String,
    /// Empty for DFSL metrics.
    pub session: Option<usize>,
    pub metric: String,
    pub runs: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(protocol: Protocol, name: &str, session: Option<usize>, metric: &str, values: &[f64]) -> AggregateRow {
    AggregateRow {
        protocol,
        name: name.to_owned(),
        session,
        metric: metric.to_owned(),
        runs: values.len(),
        median: median(values),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn protocol_key(p: Protocol) -> u8 {
    match p {
        Protocol::Fscil => 0,
        Protocol::Dfsl => 1,
    }
}

/// Median/min/max of every metric, grouped by protocol and run name.
pub fn aggregate(reports: &[RunReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(u8, String), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((protocol_key(r.protocol), r.name.clone())).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((_, name), runs) in groups {
        let protocol = runs[0].protocol;
        match protocol {
            Protocol::Fscil => {
                let sessions = runs.iter().map(|r| r.sessions.len()).max().unwrap_or(0);
                for t in 1..=sessions {
                    let at: Vec<&SessionReport> = runs.iter().filter_map(|r| r.sessions.get(t - 1)).collect();
                    let metrics: [(&str, Vec<f64>); 4] = [
                        ("joint_acc", at.iter().map(|s| s.joint_acc).collect()),
                        ("acc_base", at.iter().map(|s| s.acc_base).collect()),
                        ("acc_novel", at.iter().filter_map(|s| s.acc_novel).collect()),
                        ("hm", at.iter().filter_map(|s| s.hm).collect()),
                    ];
                    for (metric, values) in metrics {
                        if !values.is_empty() {
                            rows.push(summarize(protocol, &name, Some(t), metric, &values));
                        }
                    }
                }
            }
            Protocol::Dfsl => {
                let reports: Vec<&DfslReport> = runs.iter().filter_map(|r| r.dfsl.as_ref()).collect();
                let metrics: [(&str, fn(&DfslReport) -> f64); 4] = [
                    ("joint_acc", |d| d.joint_acc),
                    ("delta_b", |d| d.delta_b),
                    ("delta_n", |d| d.delta_n),
                    ("delta", |d| d.delta),
                ];
                for (metric, f) in metrics {
                    let values: Vec<f64> = reports.iter().map(|d| f(d)).collect();
                    if !values.is_empty() {
                        rows.push(summarize(protocol, &name, None, metric, &values));
                    }
                }
            }
        }
    }
    rows
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["protocol", "name", "session", "metric", "runs", "median", "min", "max"])?;
    for r in rows {
        let protocol = match r.protocol {
            Protocol::Fscil => "fscil",
            Protocol::Dfsl => "dfsl",
        };
        w.write_record([
            protocol.to_owned(),
            r.name.clone(),
            r.session.map(|s| s.to_string()).unwrap_or_default(),
            r.metric.clone(),
            r.runs.to_string(),
            r.median.to_string(),
            r.min.to_string(),
            r.max.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Median joint-accuracy curve with its min/max band for every FSCIL group.
/// Returns the files written.
pub fn plot_aggregate(dir: &Path, rows: &[AggregateRow]) -> Result<Vec<PathBuf>> {
    let mut names: Vec<&str> = rows
        .iter()
        .filter(|r| r.protocol == Protocol::Fscil)
        .map(|r| r.name.as_str())
        .collect();
    names.dedup();
    let mut written = Vec::new();
    for name in names {
        let joint: Vec<&AggregateRow> = rows
            .iter()
            .filter(|r| r.protocol == Protocol::Fscil && r.name == name && r.metric == "joint_acc")
            .collect();
        let curve = Curve {
            label: format!("{name} (n={})", joint.first().map_or(0, |r| r.runs)),
            points: joint.iter().map(|r| (r.session.unwrap_or(0) as f64, r.median)).collect(),
            band: Some(
                joint
                    .iter()
                    .map(|r| (r.session.unwrap_or(0) as f64, r.min, r.max))
                    .collect(),
            ),
        };
        let path = dir.join(format!("fscil_{}.png", file_stem(name)));
        plot_curves(&path, name, &[curve])?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
