//! Session and DFSL metrics.

use indexmap::IndexMap;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmin;
use crate::semantics::ClassId;
use crate::sessions::{joint_test_set, Sample, SessionStream};
use crate::trainer::{extract_features, RunState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: usize,
    pub num_classes: usize,
    pub num_test: usize,
    pub joint_acc: f64,
    pub acc_base: f64,
    /// Absent in the base session.
    pub acc_novel: Option<f64>,
    pub hm: Option<f64>,
    pub per_class_acc: IndexMap<ClassId, f64>,
}

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

pub fn accuracy(predictions: &[ClassId], labels: &[ClassId]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("accuracy of zero predictions".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Predicted class for every sample under the full classifier.
pub fn predict_samples(state: &RunState, samples: &[&Sample]) -> Result<Vec<ClassId>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let g = extract_features(&state.model, samples)?;
    let y = state.model.project_features(g.view())?;
    let d = state.head.distances(y.view());
    let classes = state.head.classes();
    Ok(d.rows()
        .into_iter()
        .map(|row| classes[argmin(&row.to_vec())].clone())
        .collect())
}

/// Metrics after session `t` over every test sample of sessions `1..=t`.
pub fn evaluate_session(state: &RunState, stream: &SessionStream, t: usize) -> Result<SessionReport> {
    let samples = joint_test_set(stream, t)?;
    let classes = stream.classes_upto(t)?;
    let predictions = predict_samples(state, &samples)?;
    let labels: Vec<ClassId> = samples.iter().map(|s| s.label.clone()).collect();
    let joint_acc = accuracy(&predictions, &labels)?;

    let subset = |keep: &dyn Fn(&Sample) -> bool| -> Result<f64> {
        let (p, l): (Vec<ClassId>, Vec<ClassId>) = samples
            .iter()
            .zip(&predictions)
            .filter(|(s, _)| keep(s))
            .map(|(s, p)| (p.clone(), s.label.clone()))
            .unzip();
        accuracy(&p, &l)
    };
    let acc_base = subset(&|s| s.task_index == 1)?;
    let acc_novel = if t > 1 { Some(subset(&|s| s.task_index > 1)?) } else { None };
    let hm = acc_novel.map(|n| harmonic_mean(acc_base, n));

    let mut per_class_acc = IndexMap::new();
    for class in classes {
        let acc = subset(&|s| s.label == class).unwrap_or(0.0);
        per_class_acc.insert(class, acc);
    }
    Ok(SessionReport {
        session: t,
        num_classes: per_class_acc.len(),
        num_test: samples.len(),
        joint_acc,
        acc_base,
        acc_novel,
        hm,
        per_class_acc,
    })
}

/// Accuracies of one DFSL episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Every query against the full label set.
    pub joint: f64,
    /// Base queries against the full label set.
    pub base_joint: f64,
    /// Base queries against base labels only.
    pub base_individual: f64,
    pub novel_joint: f64,
    pub novel_individual: f64,
}

fn restricted_argmin(row: &[f64], candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if row[c] < row[best] {
            best = c;
        }
    }
    best
}

/// Scores one episode from a `queries × classes` distance matrix. `labels`
/// are head positions; a query is a base query when its label is in
/// `base_positions`.
pub fn dfsl_episode_outcome(
    distances: ArrayView2<f64>,
    labels: &[usize],
    base_positions: &[usize],
    novel_positions: &[usize],
) -> Result<EpisodeOutcome> {
    if distances.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} distance rows for {} labels",
            distances.nrows(),
            labels.len()
        )));
    }
    if base_positions.is_empty() || novel_positions.is_empty() {
        return Err(Error::EmptyInput("DFSL needs both base and novel classes".into()));
    }
    let (mut n_all, mut hit_all) = (0usize, 0usize);
    let (mut n_b, mut hit_bj, mut hit_bi) = (0usize, 0usize, 0usize);
    let (mut n_n, mut hit_nj, mut hit_ni) = (0usize, 0usize, 0usize);
    for (row, &label) in distances.rows().into_iter().zip(labels) {
        let row = row.to_vec();
        let joint_hit = argmin(&row) == label;
        n_all += 1;
        hit_all += joint_hit as usize;
        if base_positions.contains(&label) {
            n_b += 1;
            hit_bj += joint_hit as usize;
            hit_bi += (restricted_argmin(&row, base_positions) == label) as usize;
        } else if novel_positions.contains(&label) {
            n_n += 1;
            hit_nj += joint_hit as usize;
            hit_ni += (restricted_argmin(&row, novel_positions) == label) as usize;
        } else {
            return Err(Error::Index(format!("label position {label} is neither base nor novel")));
        }
    }
    if n_b == 0 || n_n == 0 {
        return Err(Error::EmptyInput("episode lacks base or novel queries".into()));
    }
    let frac = |h: usize, n: usize| h as f64 / n as f64;
    Ok(EpisodeOutcome {
        joint: frac(hit_all, n_all),
        base_joint: frac(hit_bj, n_b),
        base_individual: frac(hit_bi, n_b),
        novel_joint: frac(hit_nj, n_n),
        novel_individual: frac(hit_ni, n_n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfslReport {
    pub episodes: usize,
    pub joint_acc: f64,
    pub joint_acc_half_width: f64,
    pub base_individual: f64,
    pub novel_individual: f64,
    pub delta_b: f64,
    pub delta_n: f64,
    pub delta: f64,
    pub delta_half_width: f64,
}

fn mean_and_half_width(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Episode-averaged DFSL metrics; the deltas are joint minus individual, so
/// forgetting shows up as a negative number.
pub fn evaluate_dfsl(outcomes: &[EpisodeOutcome]) -> Result<DfslReport> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("no DFSL episodes".into()));
    }
    let col = |f: fn(&EpisodeOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(f).collect() };
    let (joint_acc, joint_hw) = mean_and_half_width(&col(|o| o.joint));
    let (base_individual, _) = mean_and_half_width(&col(|o| o.base_individual));
    let (novel_individual, _) = mean_and_half_width(&col(|o| o.novel_individual));
    let (delta_b, _) = mean_and_half_width(&col(|o| o.base_joint - o.base_individual));
    let (delta_n, _) = mean_and_half_width(&col(|o| o.novel_joint - o.novel_individual));
    let (_, delta_hw) =
        mean_and_half_width(&col(|o| 0.5 * ((o.base_joint - o.base_individual) + (o.novel_joint - o.novel_individual))));
    Ok(DfslReport {
        episodes: outcomes.len(),
        joint_acc,
        joint_acc_half_width: joint_hw,
        base_individual,
        novel_individual,
        delta_b,
        delta_n,
        delta: 0.5 * (delta_b + delta_n),
        delta_half_width: delta_hw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(0.5, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(harmonic_mean(0.7, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(0.6, 0.4) - 0.48).abs() < 1e-15);
    }

    #[test]
    fn accuracy_examples() {
        let c = |s: &[&str]| s.iter().map(|&x| ClassId::from(x)).collect::<Vec<_>>();
        assert_eq!(accuracy(&c(&["a", "b"]), &c(&["a", "b"])).unwrap(), 1.0);
        assert_eq!(accuracy(&c(&["b", "a"]), &c(&["a", "b"])).unwrap(), 0.0);
        assert_eq!(accuracy(&c(&["a", "b", "c", "x"]), &c(&["a", "b", "c", "d"])).unwrap(), 0.75);
        assert!(matches!(accuracy(&c(&["a"]), &c(&[])), Err(Error::Shape(_))));
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn no_forgetting_gives_zero_delta() {
        // distances already favour the right class inside and across groups
        let d = array![[0.1, 0.9, 0.8], [0.9, 0.1, 0.8], [0.9, 0.8, 0.1]];
        let o = dfsl_episode_outcome(d.view(), &[0, 1, 2], &[0, 1], &[2]).unwrap();
        let r = evaluate_dfsl(&[o]).unwrap();
        assert_eq!((r.delta_b, r.delta_n, r.delta), (0.0, 0.0, 0.0));
        assert_eq!(r.joint_acc, 1.0);
    }

    #[test]
    fn delta_is_mean_of_parts() {
        let o = EpisodeOutcome {
            joint: 0.5,
            base_joint: 0.5,
            base_individual: 0.6,
            novel_joint: 0.34,
            novel_individual: 0.4,
        };
        let r = evaluate_dfsl(&[o]).unwrap();
        assert!((r.delta - (-0.08)).abs() < 1e-12);
    }

    #[test]
    fn half_width_uses_sample_deviation() {
        let (m, hw) = mean_and_half_width(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((hw - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }
}
