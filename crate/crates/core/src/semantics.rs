//! Class semantic vectors and superclass grouping.
//!
//! A [`SemanticTable`] holds one word vector per class. Base-session classes
//! are grouped with k-means into [`SuperclassMap`] clusters; classes arriving
//! later are attached to the nearest frozen center.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// Class identifier; the class name as it appears in the semantic file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub String);

impl ClassId {
    pub fn new(name: impl Into<String>) -> Self {
        ClassId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassId {
    fn from(s: &str) -> Self {
        ClassId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticSource {
    LoadedFile,
    Synthetic,
}

/// Per-class semantic vectors of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTable {
    dim: usize,
    vectors: IndexMap<ClassId, Vec<f64>>,
    source: SemanticSource,
}

pub(crate) fn euclidean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl SemanticTable {
    /// Builds a table from named vectors, checking every invariant.
    pub fn from_entries(
        dim: usize,
        entries: impl IntoIterator<Item = (ClassId, Vec<f64>)>,
        source: SemanticSource,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("semantic dimension must be positive".into()));
        }
        let mut vectors = IndexMap::new();
        for (class, v) in entries {
            check_vector(&class, &v, dim)?;
            if vectors.contains_key(&class) {
                return Err(Error::Duplicate(format!("class `{class}` in semantic table")));
            }
            vectors.insert(class, v);
        }
        Ok(SemanticTable {
            dim,
            vectors,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> SemanticSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, class: &ClassId) -> bool {
        self.vectors.contains_key(class)
    }

    pub fn get(&self, class: &ClassId) -> Result<&[f64]> {
        self.vectors
            .get(class)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("class `{class}` has no semantic vector")))
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassId> {
        self.vectors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ClassId, &[f64])> {
        self.vectors.iter().map(|(c, v)| (c, v.as_slice()))
    }

    /// Writes the table in the whitespace-separated word-vector text format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (class, v) in &self.vectors {
            out.push_str(class.as_str());
            for x in v {
                out.push(' ');
                out.push_str(&format!("{x:?}"));
            }
            out.push('\n');
        }
        let path = path.as_ref();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn check_vector(class: &ClassId, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Shape(format!(
            "class `{class}` has {} components, expected {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateVector(format!(
            "class `{class}` has non-finite components"
        )));
    }
    if norm(v) <= 0.0 {
        return Err(Error::DegenerateVector(format!(
            "class `{class}` has a zero-norm semantic vector"
        )));
    }
    Ok(())
}

/// Parses semantic vectors from text: one class per line, `name v1 ... vd`.
///
/// Blank lines are skipped. Errors name the 1-based line number.
pub fn parse_semantics(text: &str, dim: usize) -> Result<SemanticTable> {
    if dim == 0 {
        return Err(Error::Config("semantic dimension must be positive".into()));
    }
    let mut vectors: IndexMap<ClassId, Vec<f64>> = IndexMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(name) = tokens.next() else {
            continue;
        };
        let values = tokens
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("`{tok}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("class `{name}` has no vector components"),
            });
        }
        if values.len() != dim {
            return Err(Error::Shape(format!(
                "line {line_no}: class `{name}` has {} components, expected {dim}",
                values.len()
            )));
        }
        let class = ClassId::new(name);
        check_vector(&class, &values, dim)?;
        if vectors.contains_key(&class) {
            return Err(Error::Duplicate(format!(
                "line {line_no}: class `{name}` already defined"
            )));
        }
        vectors.insert(class, values);
    }
    Ok(SemanticTable {
        dim,
        vectors,
        source: SemanticSource::LoadedFile,
    })
}

/// Loads a word-vector text file (GloVe text layout).
pub fn load_semantics(path: impl AsRef<Path>, dim: usize) -> Result<SemanticTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_semantics(&text, dim)
}

/// Synthetic semantic vectors: each class mean plus isotropic Gaussian noise.
pub fn synthesize_semantics(
    class_means: &[(ClassId, Vec<f64>)],
    noise_scale: f64,
    seed: u64,
) -> Result<SemanticTable> {
    if !(noise_scale >= 0.0) {
        return Err(Error::Config(format!(
            "noise scale must be non-negative, got {noise_scale}"
        )));
    }
    let Some((_, first)) = class_means.first() else {
        return Err(Error::EmptyInput("no class means to synthesize from".into()));
    };
    let dim = first.len();
    if let Some((class, v)) = class_means.iter().find(|(_, v)| v.len() != dim) {
        return Err(Error::Shape(format!(
            "class `{class}` mean has {} components, expected {dim}",
            v.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = class_means.iter().map(|(class, mean)| {
        let v = if noise_scale == 0.0 {
            mean.clone()
        } else {
            mean.iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + noise_scale * z
                })
                .collect()
        };
        (class.clone(), v)
    });
    SemanticTable::from_entries(dim, entries, SemanticSource::Synthetic)
}

/// Frozen superclass centers plus the superclass index of every class seen.
///
/// Indices are 0-based: a map with `N` centers assigns labels in `0..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperclassMap {
    pub centers: Vec<Vec<f64>>,
    pub assignment: IndexMap<ClassId, usize>,
    pub seed: u64,
}

impl SuperclassMap {
    pub fn num_superclasses(&self) -> usize {
        self.centers.len()
    }

    pub fn label_of(&self, class: &ClassId) -> Result<usize> {
        self.assignment
            .get(class)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("class `{class}` has no superclass label")))
    }

    /// Labels a novel class with its nearest center and records the label.
    pub fn assign_and_record(&mut self, table: &SemanticTable, class: &ClassId) -> Result<usize> {
        if let Some(&k) = self.assignment.get(class) {
            return Ok(k);
        }
        let k = assign_novel_class(self, table, class)?;
        self.assignment.insert(class.clone(), k);
        Ok(k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: SuperclassMap = serde_json::from_str(text)?;
        if map.centers.is_empty() {
            return Err(Error::Config("superclass map has no centers".into()));
        }
        if let Some((class, &k)) = map.assignment.iter().find(|(_, &k)| k >= map.centers.len()) {
            return Err(Error::Index(format!(
                "class `{class}` assigned to superclass {k} of {}",
                map.centers.len()
            )));
        }
        Ok(map)
    }
}

/// Index of the nearest point in `centers`; ties go to the lowest index.
pub(crate) fn nearest_center(centers: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = euclidean_sq(c, v);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Superclass label for a class by minimum Euclidean distance to the centers.
pub fn assign_novel_class(map: &SuperclassMap, table: &SemanticTable, class: &ClassId) -> Result<usize> {
    if map.centers.is_empty() {
        return Err(Error::Config("superclass map has no centers".into()));
    }
    let v = table.get(class)?;
    if map.centers[0].len() != v.len() {
        return Err(Error::Shape(format!(
            "center dimension {} does not match semantic dimension {}",
            map.centers[0].len(),
            v.len()
        )));
    }
    Ok(nearest_center(&map.centers, v).0)
}

/// Outcome of Lloyd's iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Within-cluster SSE after every assignment step.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn sse(&self) -> f64 {
        self.sse_trace.last().copied().unwrap_or(0.0)
    }
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| euclidean_sq(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // rounding can leave `target` just past the last positive weight
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(euclidean_sq(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Independent k-means++ restarts per fit.
pub const KMEANS_RESTARTS: u64 = 10;

/// Lloyd's algorithm with k-means++ seeding, restarted [`KMEANS_RESTARTS`]
/// times from seeds derived from `seed`. The fit with the lowest final SSE
/// wins; ties keep the earlier restart.
///
/// Each restart stops once no label changes or every center moves by at most
/// `tol`. An empty cluster is re-seeded at the point farthest from its current
/// center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansFit> {
    let mut best: Option<KMeansFit> = None;
    for r in 0..KMEANS_RESTARTS {
        let fit = lloyd(points, k, derive_seed(seed, "kmeans-restart", r), max_iter, tol)?;
        if best.as_ref().is_none_or(|b| fit.sse() < b.sse()) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// A single Lloyd run from one k-means++ seeding.
pub fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansFit> {
    if points.is_empty() {
        return Err(Error::Config("k-means needs at least one point".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be positive".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points have unequal lengths".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_init(points, k, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];
    let mut sse_trace = Vec::new();
    let mut iterations = 0;

    loop {
        iterations += 1;
        let mut changed = false;
        let mut sse = 0.0;
        let mut point_dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest_center(&centers, p);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            point_dist[i] = d;
            sse += d;
        }
        sse_trace.push(sse);
        if !changed || iterations > max_iter {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&labels) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        let mut taken = HashSet::new();
        for j in 0..k {
            let new_center = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect::<Vec<_>>()
            } else {
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .fold(None::<(usize, f64)>, |best, i| match best {
                        Some((_, bd)) if bd >= point_dist[i] => best,
                        _ => Some((i, point_dist[i])),
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken.insert(far);
                point_dist[far] = 0.0;
                points[far].clone()
            };
            shift = shift.max(euclidean_sq(&new_center, &centers[j]).sqrt());
            centers[j] = new_center;
        }
        if shift <= tol {
            // one final assignment against the settled centers
            iterations += 1;
            let mut sse = 0.0;
            for (i, p) in points.iter().enumerate() {
                let (j, d) = nearest_center(&centers, p);
                labels[i] = j;
                sse += d;
            }
            sse_trace.push(sse);
            break;
        }
    }

    Ok(KMeansFit {
        centers,
        labels,
        sse_trace,
        iterations,
    })
}

/// Clusters the base-session class vectors into `num_superclasses` groups.
pub fn cluster_base_classes(
    table: &SemanticTable,
    base_classes: &[ClassId],
    num_superclasses: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<SuperclassMap> {
    let (map, _) = cluster_base_classes_traced(table, base_classes, num_superclasses, seed, max_iter, tol)?;
    Ok(map)
}

/// As [`cluster_base_classes`], also returning the underlying k-means fit.
pub fn cluster_base_classes_traced(
    table: &SemanticTable,
    base_classes: &[ClassId],
    num_superclasses: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(SuperclassMap, KMeansFit)> {
    if base_classes.is_empty() {
        return Err(Error::Config("base class set is empty".into()));
    }
    if num_superclasses == 0 {
        return Err(Error::Config("number of superclasses must be positive".into()));
    }
    if num_superclasses > base_classes.len() {
        return Err(Error::Config(format!(
            "{num_superclasses} superclasses requested for {} base classes",
            base_classes.len()
        )));
    }
    let mut seen = HashSet::new();
    for c in base_classes {
        if !seen.insert(c) {
            return Err(Error::Duplicate(format!("base class `{c}` listed twice")));
        }
    }
    let points = base_classes
        .iter()
        .map(|c| table.get(c).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let fit = kmeans(&points, num_superclasses, seed, max_iter, tol)?;
    let assignment = base_classes
        .iter()
        .zip(&fit.labels)
        .map(|(c, &k)| (c.clone(), k))
        .collect();
    Ok((
        SuperclassMap {
            centers: fit.centers.clone(),
            assignment,
            seed,
        },
        fit,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, &[f64])]) -> SemanticTable {
        let dim = entries[0].1.len();
        SemanticTable::from_entries(
            dim,
            entries.iter().map(|(n, v)| (ClassId::from(*n), v.to_vec())),
            SemanticSource::Synthetic,
        )
        .unwrap()
    }

    #[test]
    fn parses_single_line() {
        let t = parse_semantics("cat 1.0 0.0 0.0\n", 3).unwrap();
        assert_eq!(t.get(&"cat".into()).unwrap(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.source(), SemanticSource::LoadedFile);
    }

    #[test]
    fn short_line_is_a_shape_error() {
        assert!(matches!(parse_semantics("cat 1.0 0.0", 3), Err(Error::Shape(_))));
    }

    #[test]
    fn bad_token_names_line() {
        let err = parse_semantics("cat 1 0 0\ndog 1 x 0\n", 3).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_and_zero_vectors_rejected() {
        assert!(matches!(
            parse_semantics("cat 1 0\ncat 0 1\n", 2),
            Err(Error::Duplicate(_))
        ));
        assert!(matches!(
            parse_semantics("cat 0 0\n", 2),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn zero_noise_synthesis_is_identity() {
        let means = vec![(ClassId::from("a"), vec![1.0, 2.0]), (ClassId::from("b"), vec![-3.0, 0.5])];
        let t = synthesize_semantics(&means, 0.0, 9).unwrap();
        for (c, m) in &means {
            assert_eq!(t.get(c).unwrap(), m.as_slice());
        }
    }

    #[test]
    fn synthesis_is_seeded() {
        let means = vec![(ClassId::from("a"), vec![1.0, 2.0, 3.0])];
        let a = synthesize_semantics(&means, 0.1, 1).unwrap();
        assert_eq!(a, synthesize_semantics(&means, 0.1, 1).unwrap());
        assert_ne!(a, synthesize_semantics(&means, 0.1, 2).unwrap());
        let ragged = vec![(ClassId::from("a"), vec![1.0]), (ClassId::from("b"), vec![1.0, 2.0])];
        assert!(matches!(synthesize_semantics(&ragged, 0.1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn degenerate_k_gives_zero_sse() {
        let t = table(&[("a", &[0.0, 1.0]), ("b", &[3.0, 1.0]), ("c", &[5.0, -2.0])]);
        let classes: Vec<ClassId> = t.classes().cloned().collect();
        let (map, fit) = cluster_base_classes_traced(&t, &classes, 3, 4, 50, 0.0).unwrap();
        assert_eq!(fit.sse(), 0.0);
        let mut labels: Vec<_> = map.assignment.values().copied().collect();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn configuration_errors() {
        let t = table(&[("a", &[0.0, 1.0]), ("b", &[3.0, 1.0])]);
        let classes: Vec<ClassId> = t.classes().cloned().collect();
        assert!(matches!(
            cluster_base_classes(&t, &classes, 3, 0, 10, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(cluster_base_classes(&t, &[], 1, 0, 10, 0.0), Err(Error::Config(_))));
        assert!(matches!(
            cluster_base_classes(&t, &["zz".into()], 1, 0, 10, 0.0),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn novel_assignment_ties_go_low() {
        let t = table(&[("n", &[5.0, 0.0]), ("m", &[1.0, 0.0])]);
        let map = SuperclassMap {
            centers: vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![10.0, 0.0]],
            assignment: IndexMap::new(),
            seed: 0,
        };
        assert_eq!(assign_novel_class(&map, &t, &"n".into()).unwrap(), 0);
        assert_eq!(assign_novel_class(&map, &t, &"m".into()).unwrap(), 0);
        assert!(matches!(
            assign_novel_class(&map, &t, &"missing".into()),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn superclass_json_shape() {
        let map = SuperclassMap {
            centers: vec![vec![0.0, 1.0]],
            assignment: [(ClassId::from("cat"), 0)].into_iter().collect(),
            seed: 7,
        };
        let json: serde_json::Value = serde_json::from_str(&map.to_json().unwrap()).unwrap();
        assert_eq!(json["assignment"]["cat"], 0);
        assert_eq!(json["seed"], 7);
        assert_eq!(json["centers"][0][1], 1.0);
        assert_eq!(SuperclassMap::from_json(&map.to_json().unwrap()).unwrap(), map);
    }
}
