//! Task streams: one data-rich base task followed by few-shot novel tasks.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::{synthesize_semantics, ClassId, SemanticTable};

/// One labeled input. Images are stored flattened channel-major (CHW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: ClassId,
    /// 1-based task index.
    pub task_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// 1-based; task 1 is the base task.
    pub index: usize,
    pub classes: Vec<ClassId>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub way: usize,
    pub shot: usize,
}

impl TaskSpec {
    pub fn is_base(&self) -> bool {
        self.index == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Fscil,
    Dfsl,
}

/// Shape of the raw input every sample carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputShape {
    Vector { dim: usize },
    Image { channels: usize, size: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Vector { dim } => dim,
            InputShape::Image { channels, size } => channels * size * size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStream {
    pub tasks: Vec<TaskSpec>,
    pub semantics: SemanticTable,
    pub protocol: Protocol,
    pub input_shape: InputShape,
}

impl SessionStream {
    /// Validates the stream invariants and wraps the parts.
    pub fn new(
        tasks: Vec<TaskSpec>,
        semantics: SemanticTable,
        protocol: Protocol,
        input_shape: InputShape,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("stream has no tasks".into()));
        }
        let mut seen = HashSet::new();
        for (i, task) in tasks.iter().enumerate() {
            if task.index != i + 1 {
                return Err(Error::Config(format!(
                    "task at position {i} has index {}, expected {}",
                    task.index,
                    i + 1
                )));
            }
            let own: HashSet<&ClassId> = task.classes.iter().collect();
            for c in &task.classes {
                if !seen.insert(c.clone()) {
                    return Err(Error::Duplicate(format!("class `{c}` appears in more than one task")));
                }
                semantics.get(c)?;
            }
            for s in task.train.iter().chain(&task.test) {
                if !own.contains(&s.label) || s.task_index != task.index {
                    return Err(Error::Dataset(format!(
                        "sample labelled `{}` does not belong to task {}",
                        s.label, task.index
                    )));
                }
                if s.input.len() != input_shape.len() {
                    return Err(Error::Shape(format!(
                        "sample input has length {}, expected {}",
                        s.input.len(),
                        input_shape.len()
                    )));
                }
            }
            if protocol == Protocol::Fscil && !task.is_base() && task.train.len() != task.way * task.shot {
                return Err(Error::Dataset(format!(
                    "task {} has {} training samples, expected {}x{}",
                    task.index,
                    task.train.len(),
                    task.way,
                    task.shot
                )));
            }
        }
        Ok(SessionStream {
            tasks,
            semantics,
            protocol,
            input_shape,
        })
    }

    pub fn num_sessions(&self) -> usize {
        self.tasks.len()
    }

    pub fn base(&self) -> &TaskSpec {
        &self.tasks[0]
    }

    /// Task `t`, 1-based.
    pub fn task(&self, t: usize) -> Result<&TaskSpec> {
        if t == 0 || t > self.tasks.len() {
            return Err(Error::Index(format!(
                "session {t} out of range 1..={}",
                self.tasks.len()
            )));
        }
        Ok(&self.tasks[t - 1])
    }

    /// Every class of tasks `1..=t` in stream order.
    pub fn classes_upto(&self, t: usize) -> Result<Vec<ClassId>> {
        self.task(t)?;
        Ok(self.tasks[..t].iter().flat_map(|task| task.classes.iter().cloned()).collect())
    }
}

/// Union of the test sets of tasks `1..=upto`.
pub fn joint_test_set(stream: &SessionStream, upto: usize) -> Result<Vec<&Sample>> {
    stream.task(upto)?;
    Ok(stream.tasks[..upto].iter().flat_map(|t| t.test.iter()).collect())
}

fn default_num_groups() -> usize {
    4
}
fn default_group_spread() -> f64 {
    3.0
}
fn default_class_spread() -> f64 {
    1.5
}
fn default_semantic_noise() -> f64 {
    0.1
}
fn default_novel_pool() -> usize {
    20
}
fn default_novel_train() -> usize {
    20
}

/// Gaussian-blob stream parameters.
///
/// Class means are drawn around `num_groups` latent group centers, so classes
/// in the same group are close both in feature space and in semantic space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_base_classes: usize,
    pub num_sessions: usize,
    pub way: usize,
    pub shot: usize,
    pub feature_dim: usize,
    pub samples_per_base_class: usize,
    pub test_per_class: usize,
    pub blob_spread: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_num_groups")]
    pub num_groups: usize,
    #[serde(default = "default_group_spread")]
    pub group_spread: f64,
    #[serde(default = "default_class_spread")]
    pub class_spread: f64,
    #[serde(default = "default_semantic_noise")]
    pub semantic_noise: f64,
    /// Novel classes available to DFSL episodes.
    #[serde(default = "default_novel_pool")]
    pub novel_pool_classes: usize,
    /// Training samples per DFSL novel class; episodes draw `shot` of them.
    #[serde(default = "default_novel_train")]
    pub novel_train_per_class: usize,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_base_classes", self.num_base_classes),
            ("num_sessions", self.num_sessions),
            ("way", self.way),
            ("shot", self.shot),
            ("feature_dim", self.feature_dim),
            ("samples_per_base_class", self.samples_per_base_class),
            ("test_per_class", self.test_per_class),
            ("num_groups", self.num_groups),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic.{name} must be positive")));
        }
        for (name, v) in [
            ("blob_spread", self.blob_spread),
            ("group_spread", self.group_spread),
            ("class_spread", self.class_spread),
            ("semantic_noise", self.semantic_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("synthetic.{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

struct BlobSampler {
    rng: ChaCha8Rng,
    spread: f64,
}

impl BlobSampler {
    fn gaussian(&mut self, center: &[f64], scale: f64) -> Vec<f64> {
        center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                c + scale * z
            })
            .collect()
    }

    fn samples(&mut self, mean: &[f64], class: &ClassId, task: usize, count: usize) -> Vec<Sample> {
        (0..count)
            .map(|_| Sample {
                input: self.gaussian(mean, self.spread),
                label: class.clone(),
                task_index: task,
            })
            .collect()
    }
}

fn class_means(cfg: &SyntheticConfig, count: usize, rng: &mut BlobSampler) -> Vec<(ClassId, Vec<f64>)> {
    let zero = vec![0.0; cfg.feature_dim];
    let groups: Vec<Vec<f64>> = (0..cfg.num_groups)
        .map(|_| rng.gaussian(&zero, cfg.group_spread))
        .collect();
    (0..count)
        .map(|i| {
            let mean = rng.gaussian(&groups[i % cfg.num_groups], cfg.class_spread);
            (ClassId(format!("class_{i:03}")), mean)
        })
        .collect()
}

/// Builds an FSCIL stream of Gaussian blobs with noised class means as semantics.
pub fn build_synthetic_stream(cfg: &SyntheticConfig) -> Result<SessionStream> {
    cfg.validate()?;
    let novel = cfg.way * (cfg.num_sessions - 1);
    let mut sampler = BlobSampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        spread: cfg.blob_spread,
    };
    let means = class_means(cfg, cfg.num_base_classes + novel, &mut sampler);
    let semantic_seed = sampler.rng.random::<u64>();

    let mut tasks = Vec::with_capacity(cfg.num_sessions);
    let (base, rest) = means.split_at(cfg.num_base_classes);
    tasks.push(make_task(&mut sampler, base, 1, cfg.samples_per_base_class, cfg.test_per_class, base.len(), cfg.samples_per_base_class));
    for (s, chunk) in rest.chunks(cfg.way).enumerate() {
        tasks.push(make_task(&mut sampler, chunk, s + 2, cfg.shot, cfg.test_per_class, cfg.way, cfg.shot));
    }
    let semantics = synthesize_semantics(&means, cfg.semantic_noise, semantic_seed)?;
    SessionStream::new(
        tasks,
        semantics,
        Protocol::Fscil,
        InputShape::Vector { dim: cfg.feature_dim },
    )
}

/// Builds a two-task DFSL stream: the base task plus a pool of novel classes
/// from which episodes are drawn.
pub fn build_synthetic_dfsl_stream(cfg: &SyntheticConfig) -> Result<SessionStream> {
    cfg.validate()?;
    if cfg.novel_pool_classes < cfg.way {
        return Err(Error::Config(format!(
            "novel pool of {} classes cannot supply {}-way episodes",
            cfg.novel_pool_classes, cfg.way
        )));
    }
    if cfg.novel_train_per_class < cfg.shot {
        return Err(Error::Config("novel_train_per_class must be at least shot".into()));
    }
    let mut sampler = BlobSampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        spread: cfg.blob_spread,
    };
    let means = class_means(cfg, cfg.num_base_classes + cfg.novel_pool_classes, &mut sampler);
    let semantic_seed = sampler.rng.random::<u64>();
    let (base, pool) = means.split_at(cfg.num_base_classes);
    let tasks = vec![
        make_task(&mut sampler, base, 1, cfg.samples_per_base_class, cfg.test_per_class, base.len(), cfg.samples_per_base_class),
        make_task(&mut sampler, pool, 2, cfg.novel_train_per_class, cfg.test_per_class, cfg.way, cfg.shot),
    ];
    let semantics = synthesize_semantics(&means, cfg.semantic_noise, semantic_seed)?;
    SessionStream::new(
        tasks,
        semantics,
        Protocol::Dfsl,
        InputShape::Vector { dim: cfg.feature_dim },
    )
}

fn make_task(
    sampler: &mut BlobSampler,
    classes: &[(ClassId, Vec<f64>)],
    index: usize,
    train_per_class: usize,
    test_per_class: usize,
    way: usize,
    shot: usize,
) -> TaskSpec {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mean) in classes {
        train.extend(sampler.samples(mean, class, index, train_per_class));
        test.extend(sampler.samples(mean, class, index, test_per_class));
    }
    TaskSpec {
        index,
        classes: classes.iter().map(|(c, _)| c.clone()).collect(),
        train,
        test,
        way,
        shot,
    }
}

/// One DFSL episode: a `way`-class novel task with `shot` support samples per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: TaskSpec,
}

/// Draws an episode from the novel pool (task 2) of a DFSL stream.
pub fn sample_episode(stream: &SessionStream, way: usize, shot: usize, seed: u64) -> Result<Episode> {
    if stream.protocol != Protocol::Dfsl || stream.tasks.len() != 2 {
        return Err(Error::Protocol("episodes need a two-task DFSL stream".into()));
    }
    let pool = &stream.tasks[1];
    if way == 0 || shot == 0 || way > pool.classes.len() {
        return Err(Error::Config(format!(
            "cannot draw a {way}-way {shot}-shot episode from {} classes",
            pool.classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = pool.classes.clone();
    classes.shuffle(&mut rng);
    classes.truncate(way);
    let mut train = Vec::with_capacity(way * shot);
    for c in &classes {
        let mut own: Vec<&Sample> = pool.train.iter().filter(|s| &s.label == c).collect();
        if own.len() < shot {
            return Err(Error::Dataset(format!(
                "class `{c}` has {} training samples, {shot} needed",
                own.len()
            )));
        }
        own.shuffle(&mut rng);
        train.extend(own[..shot].iter().map(|s| (*s).clone()));
    }
    let wanted: HashSet<&ClassId> = classes.iter().collect();
    let test = pool.test.iter().filter(|s| wanted.contains(&s.label)).cloned().collect();
    Ok(Episode {
        task: TaskSpec {
            index: 2,
            classes,
            train,
            test,
            way,
            shot,
        },
    })
}

/// Class ordering file for image datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub base: Vec<String>,
    pub sessions: Vec<Vec<String>>,
}

fn default_image_size() -> usize {
    32
}
fn default_channels() -> usize {
    3
}
fn default_mean() -> Vec<f64> {
    vec![0.5, 0.5, 0.5]
}
fn default_std() -> Vec<f64> {
    vec![0.25, 0.25, 0.25]
}
fn default_test_fraction() -> f64 {
    0.2
}

/// Image preprocessing: square resize plus per-channel standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageOptions {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// 1 (grayscale) or 3 (RGB).
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_mean")]
    pub mean: Vec<f64>,
    #[serde(default = "default_std")]
    pub std: Vec<f64>,
    /// Fraction of each base class held out for testing.
    #[serde(default = "default_test_fraction")]
    pub base_test_fraction: f64,
}

impl Default for ImageOptions {
    fn default() -> Self {
        ImageOptions {
            image_size: default_image_size(),
            channels: default_channels(),
            mean: default_mean(),
            std: default_std(),
            base_test_fraction: default_test_fraction(),
        }
    }
}

impl ImageOptions {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config("channels must be 1 or 3".into()));
        }
        if self.mean.len() != self.channels || self.std.len() != self.channels {
            return Err(Error::Config("mean/std need one entry per channel".into()));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("std entries must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.base_test_fraction) {
            return Err(Error::Config("base_test_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Decodes, resizes and standardizes one image into a CHW vector.
pub fn load_image(path: &Path, opts: &ImageOptions) -> Result<Vec<f64>> {
    let img = image::open(path)?;
    let size = opts.image_size as u32;
    let resized = img.resize_exact(size, size, image::imageops::FilterType::Triangle);
    let plane = opts.image_size * opts.image_size;
    let mut out = vec![0.0; opts.channels * plane];
    if opts.channels == 1 {
        let luma = resized.to_luma8();
        for (i, p) in luma.pixels().enumerate() {
            out[i] = (p.0[0] as f64 / 255.0 - opts.mean[0]) / opts.std[0];
        }
    } else {
        let rgb = resized.to_rgb8();
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (p.0[c] as f64 / 255.0 - opts.mean[c]) / opts.std[c];
            }
        }
    }
    Ok(out)
}

/// Builds an FSCIL stream from `root/<class>/*.png|jpg` folders.
///
/// Base classes keep `base_test_fraction` of their images for testing. Each
/// novel class contributes `shot` seeded training images; the rest are test.
pub fn build_image_stream(
    root: impl AsRef<Path>,
    split_spec: impl AsRef<Path>,
    semantics: SemanticTable,
    opts: &ImageOptions,
    way: usize,
    shot: usize,
    seed: u64,
) -> Result<SessionStream> {
    opts.validate()?;
    let root = root.as_ref();
    let split_path = split_spec.as_ref();
    let text = std::fs::read_to_string(split_path).map_err(|e| Error::io(split_path, e))?;
    let split: SplitSpec = serde_json::from_str(&text)?;
    if split.base.is_empty() {
        return Err(Error::Config("split has no base classes".into()));
    }
    if way == 0 || shot == 0 {
        return Err(Error::Config("way and shot must be positive".into()));
    }
    if let Some(s) = split.sessions.iter().find(|s| s.len() != way) {
        return Err(Error::Config(format!(
            "session with {} classes does not match way={way}",
            s.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(1 + split.sessions.len());
    let groups = std::iter::once(&split.base).chain(&split.sessions);
    for (i, names) in groups.enumerate() {
        let index = i + 1;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for name in names {
            let dir = root.join(name);
            if !dir.is_dir() {
                return Err(Error::Dataset(format!("missing class folder {}", dir.display())));
            }
            let mut files = image_files(&dir)?;
            files.shuffle(&mut rng);
            let n_train = if index == 1 {
                let n_test = (files.len() as f64 * opts.base_test_fraction).round() as usize;
                files.len() - n_test
            } else {
                if files.len() < shot {
                    return Err(Error::Dataset(format!(
                        "class `{name}` has {} images, {shot} needed",
                        files.len()
                    )));
                }
                shot
            };
            let label = ClassId::new(name.as_str());
            for (j, f) in files.iter().enumerate() {
                let sample = Sample {
                    input: load_image(f, opts)?,
                    label: label.clone(),
                    task_index: index,
                };
                if j < n_train {
                    train.push(sample);
                } else {
                    test.push(sample);
                }
            }
        }
        tasks.push(TaskSpec {
            index,
            classes: names.iter().map(|n| ClassId::new(n.as_str())).collect(),
            train,
            test,
            way: if index == 1 { names.len() } else { way },
            shot: if index == 1 { 0 } else { shot },
        });
    }
    SessionStream::new(
        tasks,
        semantics,
        Protocol::Fscil,
        InputShape::Image {
            channels: opts.channels,
            size: opts.image_size,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SyntheticConfig {
        SyntheticConfig {
            num_base_classes: 6,
            num_sessions: 3,
            way: 2,
            shot: 3,
            feature_dim: 4,
            samples_per_base_class: 10,
            test_per_class: 4,
            blob_spread: 0.5,
            seed: 11,
            num_groups: 2,
            group_spread: 3.0,
            class_spread: 1.0,
            semantic_noise: 0.1,
            novel_pool_classes: 5,
            novel_train_per_class: 6,
        }
    }

    #[test]
    fn single_session_stream() {
        let stream = build_synthetic_stream(&SyntheticConfig { num_sessions: 1, ..cfg() }).unwrap();
        assert_eq!(stream.num_sessions(), 1);
        assert_eq!(stream.base().classes.len(), 6);
    }

    #[test]
    fn novel_tasks_have_way_times_shot() {
        let c = SyntheticConfig {
            num_sessions: 5,
            way: 5,
            shot: 5,
            ..cfg()
        };
        let stream = build_synthetic_stream(&c).unwrap();
        for task in &stream.tasks[1..] {
            assert_eq!(task.train.len(), 25);
        }
    }

    #[test]
    fn deterministic_by_seed() {
        assert_eq!(build_synthetic_stream(&cfg()).unwrap(), build_synthetic_stream(&cfg()).unwrap());
        assert_ne!(
            build_synthetic_stream(&cfg()).unwrap(),
            build_synthetic_stream(&SyntheticConfig { seed: 12, ..cfg() }).unwrap()
        );
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(matches!(
            build_synthetic_stream(&SyntheticConfig { shot: 0, ..cfg() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn joint_test_sizes_add_up() {
        let stream = build_synthetic_stream(&cfg()).unwrap();
        assert_eq!(joint_test_set(&stream, 1).unwrap().len(), 24);
        assert_eq!(joint_test_set(&stream, 2).unwrap().len(), 32);
        assert_eq!(joint_test_set(&stream, 3).unwrap().len(), 40);
        assert!(matches!(joint_test_set(&stream, 0), Err(Error::Index(_))));
        assert!(matches!(joint_test_set(&stream, 4), Err(Error::Index(_))));
    }

    #[test]
    fn episodes_draw_from_pool() {
        let stream = build_synthetic_dfsl_stream(&cfg()).unwrap();
        let ep = sample_episode(&stream, 2, 3, 5).unwrap();
        assert_eq!(ep.task.train.len(), 6);
        assert_eq!(ep.task.test.len(), 8);
        let fscil = build_synthetic_stream(&cfg()).unwrap();
        assert!(matches!(sample_episode(&fscil, 2, 3, 5), Err(Error::Protocol(_))));
    }
}
