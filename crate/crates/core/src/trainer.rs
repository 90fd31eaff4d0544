//! Training procedure: backbone on the base task, superclass clustering,
//! embedding-module pre-training, base fusion/mapping training, then one
//! distillation-regularized update per novel session with prototype replay.

use std::collections::HashMap;

use log::{debug, info};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalsuite::{dfsl_episode_outcome, evaluate_dfsl, evaluate_session, DfslReport, SessionReport};
use crate::losses::{classification_loss_grad, DistillationContext, LossConfig, Phase};
use crate::memory::PrototypeMemory;
use crate::model::{stack_rows, zeros_like, ClassifierHead, Component, FrozenFlags, Linear, ModelConfig, ModelState, Params};
use crate::objective::{batch_objective, BatchInputs, LossBreakdown};
use crate::optim::{Optimizer, OptimizerKind};
use crate::seeds::derive_seed;
use crate::semantics::{cluster_base_classes, ClassId, SemanticTable, SuperclassMap};
use crate::sessions::{sample_episode, Protocol, Sample, SessionStream, TaskSpec};

fn default_backbone_epochs() -> usize {
    100
}
fn default_embedding_epochs() -> usize {
    50
}
fn default_base_epochs() -> usize {
    50
}
fn default_novel_epochs() -> usize {
    40
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochConfig {
    #[serde(default = "default_backbone_epochs")]
    pub backbone: usize,
    #[serde(default = "default_embedding_epochs")]
    pub embeddings: usize,
    #[serde(default = "default_base_epochs")]
    pub base: usize,
    #[serde(default = "default_novel_epochs")]
    pub novel: usize,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            backbone: default_backbone_epochs(),
            embeddings: default_embedding_epochs(),
            base: default_base_epochs(),
            novel: default_novel_epochs(),
        }
    }
}

impl EpochConfig {
    pub const ZERO: EpochConfig = EpochConfig {
        backbone: 0,
        embeddings: 0,
        base: 0,
        novel: 0,
    };
}

fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    128
}
fn default_kmeans_iter() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default, rename = "epochs_per_phase")]
    pub epochs: EpochConfig,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kmeans_iter")]
    pub kmeans_max_iter: usize,
    #[serde(default)]
    pub kmeans_tol: f64,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: EpochConfig::default(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            optimizer: OptimizerKind::Adam,
            loss: LossConfig::default(),
            seed: 0,
            kmeans_max_iter: default_kmeans_iter(),
            kmeans_tol: 0.0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.kmeans_max_iter == 0 {
            return Err(Error::Config("train.batch_size and kmeans_max_iter must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("train.grad_clip must be positive".into()));
            }
        }
        self.loss.validate()
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub session: usize,
    pub phase: String,
    pub epoch: usize,
    pub lc: f64,
    pub ld: f64,
    pub la: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub model: ModelState,
    pub head: ClassifierHead,
    pub memory: PrototypeMemory,
    pub superclasses: SuperclassMap,
    /// Last completed session (1-based); 0 before base training finishes.
    pub session_index: usize,
    pub seed: u64,
    pub loss_log: Vec<LossRecord>,
    /// Set while a session is applying parameter updates.
    pub updates_in_progress: bool,
}

struct EpochMeter {
    sum: LossBreakdown,
    count: usize,
}

impl EpochMeter {
    fn new() -> Self {
        EpochMeter {
            sum: LossBreakdown::default(),
            count: 0,
        }
    }

    fn add(&mut self, l: &LossBreakdown, n: usize) {
        let w = n as f64;
        self.sum.lc += l.lc * w;
        self.sum.ld += l.ld * w;
        self.sum.la += l.la * w;
        self.sum.total += l.total * w;
        self.count += n;
    }

    fn record(&self, session: usize, phase: &str, epoch: usize) -> LossRecord {
        let n = self.count.max(1) as f64;
        LossRecord {
            session,
            phase: phase.to_owned(),
            epoch,
            lc: self.sum.lc / n,
            ld: self.sum.ld / n,
            la: self.sum.la / n,
            total: self.sum.total / n,
        }
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Backbone features of `samples`, computed in chunks.
pub fn extract_features(model: &ModelState, samples: &[&Sample]) -> Result<Array2<f64>> {
    let width = model.input_shape.len();
    let mut out = Array2::zeros((samples.len(), model.config.feature_dim));
    for (c, chunk) in samples.chunks(256).enumerate() {
        let x = stack_rows(chunk.iter().map(|s| s.input.as_slice()), width)?;
        let g = model.backbone_forward(x.view())?;
        out.slice_mut(ndarray::s![c * 256..c * 256 + chunk.len(), ..]).assign(&g);
    }
    Ok(out)
}

fn fusion_trainable(model: &ModelState) -> Vec<bool> {
    model
        .fusion
        .tensor_components()
        .into_iter()
        .map(|c| !model.frozen.is_frozen(c))
        .collect()
}

/// Softmax cross-entropy on raw logits, via the distance form with `d = -logits`.
fn logits_ce_grad(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let neg = logits.mapv(|v| -v);
    let (l, g) = classification_loss_grad(neg.view(), labels)?;
    Ok((l, -g))
}

fn train_backbone(
    model: &mut ModelState,
    base: &TaskSpec,
    cfg: &TrainConfig,
    seed: u64,
    log: &mut Vec<LossRecord>,
) -> Result<()> {
    if cfg.epochs.backbone == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_pos: HashMap<&ClassId, usize> = base.classes.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let labels: Vec<usize> = base.train.iter().map(|s| class_pos[&s.label]).collect();
    let width = model.input_shape.len();
    let x_all = stack_rows(base.train.iter().map(|s| s.input.as_slice()), width)?;
    let mut classifier = Linear::new(model.config.feature_dim, base.classes.len(), &mut rng);
    let mut opt_backbone = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip);
    let mut opt_classifier = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip);
    model.frozen = FrozenFlags::training(&[Component::Backbone]);

    for epoch in 0..cfg.epochs.backbone {
        let mut meter = EpochMeter::new();
        for batch in batches(base.train.len(), cfg.batch_size, &mut rng) {
            let x = x_all.select(Axis(0), &batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (g, trace) = model.backbone.forward_traced(x.view());
            let logits = classifier.forward(g.view());
            let (loss, grad_logits) = logits_ce_grad(logits.view(), &y)?;
            let mut grad_classifier = zeros_like(&classifier);
            let grad_g = classifier.backward(g.view(), grad_logits.view(), &mut grad_classifier);
            let mut grad_backbone = zeros_like(&model.backbone);
            model.backbone.backward(&trace, grad_g.view(), &mut grad_backbone);

            let mask = vec![true; grad_backbone.tensors().len()];
            opt_backbone.step(model.backbone.tensors_mut(), grad_backbone.tensors(), &mask);
            opt_classifier.step(classifier.tensors_mut(), grad_classifier.tensors(), &[true, true]);
            let l = LossBreakdown {
                lc: loss,
                total: loss,
                ..Default::default()
            };
            meter.add(&l, batch.len());
        }
        log.push(meter.record(1, "backbone", epoch));
    }
    Ok(())
}

fn train_embeddings(
    model: &mut ModelState,
    features: &Array2<f64>,
    sample_classes: &[ClassId],
    superclasses: &SuperclassMap,
    cfg: &TrainConfig,
    seed: u64,
    log: &mut Vec<LossRecord>,
) -> Result<()> {
    if cfg.epochs.embeddings == 0 {
        return Ok(());
    }
    model.frozen = FrozenFlags::training(&[Component::Embeddings]);
    for k in 0..model.fusion.num_modules() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "embedding-module", k as u64));
        let rows: Vec<usize> = (0..sample_classes.len())
            .filter(|&i| superclasses.assignment.get(&sample_classes[i]) == Some(&k))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let mut local: Vec<&ClassId> = rows.iter().map(|&i| &sample_classes[i]).collect();
        local.sort();
        local.dedup();
        let pos: HashMap<&ClassId, usize> = local.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let labels: Vec<usize> = rows.iter().map(|&i| pos[&sample_classes[i]]).collect();
        let g_all = features.select(Axis(0), &rows);

        let mut classifier = Linear::new(model.config.feature_dim, local.len(), &mut rng);
        let mut opt_module = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip);
        let mut opt_classifier = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip);
        for epoch in 0..cfg.epochs.embeddings {
            let mut meter = EpochMeter::new();
            for batch in batches(rows.len(), cfg.batch_size, &mut rng) {
                let g = g_all.select(Axis(0), &batch);
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let module = &model.fusion.embeddings[k];
                let pre = module.forward(g.view());
                let e = pre.mapv(|v| v.max(0.0));
                let logits = classifier.forward(e.view());
                let (loss, grad_logits) = logits_ce_grad(logits.view(), &y)?;
                let mut grad_classifier = zeros_like(&classifier);
                let mut grad_e = classifier.backward(e.view(), grad_logits.view(), &mut grad_classifier);
                ndarray::Zip::from(&mut grad_e).and(&pre).for_each(|ge, &p| {
                    if p <= 0.0 {
                        *ge = 0.0;
                    }
                });
                let mut grad_module = zeros_like(module);
                module.backward(g.view(), grad_e.view(), &mut grad_module);
                opt_module.step(
                    model.fusion.embeddings[k].tensors_mut(),
                    grad_module.tensors(),
                    &[true, true],
                );
                opt_classifier.step(classifier.tensors_mut(), grad_classifier.tensors(), &[true, true]);
                meter.add(
                    &LossBreakdown {
                        lc: loss,
                        total: loss,
                        ..Default::default()
                    },
                    batch.len(),
                );
            }
            log.push(meter.record(1, &format!("embedding-{k}"), epoch));
        }
    }
    Ok(())
}

/// Runs one phase of fusion-head training over a pool of feature rows.
#[allow(clippy::too_many_arguments)]
fn train_fusion(
    model: &mut ModelState,
    head: &ClassifierHead,
    features: &Array2<f64>,
    labels: &[usize],
    superclasses: &[usize],
    task_rows: &[bool],
    old_scores: Option<&DistillationContext>,
    cfg: &TrainConfig,
    epochs: usize,
    phase: Phase,
    session: usize,
    seed: u64,
    log: &mut Vec<LossRecord>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip);
    let mask = fusion_trainable(model);
    let phase_name = match phase {
        Phase::Base => "base",
        Phase::Novel => "novel",
    };
    for epoch in 0..epochs {
        let mut meter = EpochMeter::new();
        for batch in batches(features.nrows(), cfg.batch_size, &mut rng) {
            let g = features.select(Axis(0), &batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let sc: Vec<usize> = batch.iter().map(|&i| superclasses[i]).collect();
            let att_rows: Vec<usize> = batch
                .iter()
                .enumerate()
                .filter(|(_, &i)| task_rows[i])
                .map(|(r, _)| r)
                .collect();
            let ctx = old_scores.map(|c| c.select(&batch));
            let inputs = BatchInputs {
                features: g.view(),
                labels: &y,
                superclasses: &sc,
                attention_rows: &att_rows,
                old_scores: ctx.as_ref(),
            };
            let (loss, grads) = batch_objective(&model.fusion, head.semantics(), &inputs, &cfg.loss, phase)?;
            if !loss.total.is_finite() {
                return Err(Error::DegenerateVector(format!(
                    "non-finite loss in session {session} epoch {epoch}"
                )));
            }
            opt.step(model.fusion.tensors_mut(), grads.tensors(), &mask);
            meter.add(&loss, batch.len());
        }
        let rec = meter.record(session, phase_name, epoch);
        debug!("session {session} {phase_name} epoch {epoch}: total {:.5}", rec.total);
        log.push(rec);
    }
    Ok(())
}

fn class_features(samples: &[&Sample], features: &Array2<f64>) -> HashMap<ClassId, Vec<Vec<f64>>> {
    let mut out: HashMap<ClassId, Vec<Vec<f64>>> = HashMap::new();
    for (s, row) in samples.iter().zip(features.rows()) {
        out.entry(s.label.clone()).or_default().push(row.to_vec());
    }
    out
}

fn semantics_for(table: &SemanticTable, classes: &[ClassId]) -> Result<Vec<(ClassId, Vec<f64>)>> {
    classes
        .iter()
        .map(|c| Ok((c.clone(), table.get(c)?.to_vec())))
        .collect()
}

/// Base session: backbone, clustering, embedding modules, fusion head, memory.
pub fn train_base(stream: &SessionStream, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<RunState> {
    cfg.validate()?;
    let base = stream.base();
    let n_super = model_cfg.num_superclasses;
    if n_super > base.classes.len() {
        return Err(Error::Config(format!(
            "{n_super} superclasses requested for {} base classes",
            base.classes.len()
        )));
    }
    let seed = cfg.seed;
    let mut model = ModelState::new(
        model_cfg,
        stream.input_shape,
        stream.semantics.dim(),
        derive_seed(seed, "init", 0),
    )?;
    let mut log = Vec::new();

    info!("training backbone on {} base samples", base.train.len());
    train_backbone(&mut model, base, cfg, derive_seed(seed, "backbone", 0), &mut log)?;

    let samples: Vec<&Sample> = base.train.iter().collect();
    let features = extract_features(&model, &samples)?;

    let superclasses = cluster_base_classes(
        &stream.semantics,
        &base.classes,
        n_super,
        derive_seed(seed, "kmeans", 0),
        cfg.kmeans_max_iter,
        cfg.kmeans_tol,
    )?;
    let sample_classes: Vec<ClassId> = samples.iter().map(|s| s.label.clone()).collect();
    train_embeddings(
        &mut model,
        &features,
        &sample_classes,
        &superclasses,
        cfg,
        derive_seed(seed, "embeddings", 0),
        &mut log,
    )?;

    let mut head = ClassifierHead::new(stream.semantics.dim());
    head.register_session_classes(&semantics_for(&stream.semantics, &base.classes)?)?;
    let labels: Vec<usize> = samples
        .iter()
        .map(|s| head.position(&s.label).expect("base classes registered"))
        .collect();
    let sc: Vec<usize> = samples
        .iter()
        .map(|s| superclasses.label_of(&s.label))
        .collect::<Result<_>>()?;
    model.frozen = FrozenFlags::training(&[Component::Attention, Component::Mapping]);
    train_fusion(
        &mut model,
        &head,
        &features,
        &labels,
        &sc,
        &vec![true; samples.len()],
        None,
        cfg,
        cfg.epochs.base,
        Phase::Base,
        1,
        derive_seed(seed, "base-fusion", 0),
        &mut log,
    )?;

    let mut memory = PrototypeMemory::new(model.config.feature_dim);
    memory.update_memory(base, &class_features(&samples, &features))?;

    Ok(RunState {
        model,
        head,
        memory,
        superclasses,
        session_index: 1,
        seed,
        loss_log: log,
        updates_in_progress: false,
    })
}

/// Old-class distances `d′` of the current (pre-session) model for feature rows.
pub fn snapshot_old_scores(state: &RunState, features: ArrayView2<f64>) -> Result<DistillationContext> {
    if state.updates_in_progress {
        return Err(Error::Protocol(
            "old scores must be captured before the session updates parameters".into(),
        ));
    }
    let y = state.model.project_features(features)?;
    Ok(DistillationContext::new(state.head.distances(y.view())))
}

/// Novel session `task.index`: registers the new classes and trains the
/// embedding modules, attention and mapping with the three-term loss over
/// the task samples plus replayed prototypes.
pub fn train_novel_session(state: &mut RunState, task: &TaskSpec, semantics: &SemanticTable, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if state.session_index + 1 != task.index {
        return Err(Error::Protocol(format!(
            "session {} cannot follow session {}",
            task.index, state.session_index
        )));
    }
    if let Some(c) = task.classes.iter().find(|c| state.head.contains(c)) {
        return Err(Error::Duplicate(format!("class `{c}` is already in the classifier")));
    }
    for c in &task.classes {
        state.superclasses.assign_and_record(semantics, c)?;
    }

    let samples: Vec<&Sample> = task.train.iter().collect();
    let task_features = extract_features(&state.model, &samples)?;
    let replay = state.memory.replay_batch();
    let mut pool = Array2::zeros((samples.len() + replay.len(), state.model.config.feature_dim));
    pool.slice_mut(ndarray::s![..samples.len(), ..]).assign(&task_features);
    for (i, (proto, _)) in replay.iter().enumerate() {
        pool.row_mut(samples.len() + i).assign(&ndarray::ArrayView1::from(*proto));
    }
    let pool_classes: Vec<ClassId> = samples
        .iter()
        .map(|s| s.label.clone())
        .chain(replay.iter().map(|(_, c)| (*c).clone()))
        .collect();
    let task_rows: Vec<bool> = (0..pool_classes.len()).map(|i| i < samples.len()).collect();

    let old_scores = if state.head.is_empty() {
        None
    } else {
        Some(snapshot_old_scores(state, pool.view())?)
    };

    state.head.register_session_classes(&semantics_for(semantics, &task.classes)?)?;
    let labels: Vec<usize> = pool_classes
        .iter()
        .map(|c| {
            state
                .head
                .position(c)
                .ok_or_else(|| Error::Lookup(format!("class `{c}` missing from head")))
        })
        .collect::<Result<_>>()?;
    let sc: Vec<usize> = pool_classes
        .iter()
        .map(|c| state.superclasses.label_of(c))
        .collect::<Result<_>>()?;

    state.model.frozen = FrozenFlags::training(&[Component::Embeddings, Component::Attention, Component::Mapping]);
    state.updates_in_progress = true;
    let result = train_fusion(
        &mut state.model,
        &state.head,
        &pool,
        &labels,
        &sc,
        &task_rows,
        old_scores.as_ref(),
        cfg,
        cfg.epochs.novel,
        Phase::Novel,
        task.index,
        derive_seed(state.seed, "novel", task.index as u64),
        &mut state.loss_log,
    );
    state.updates_in_progress = false;
    result?;

    state.memory.update_memory(task, &class_features(&samples, &task_features))?;
    state.session_index = task.index;
    Ok(())
}

/// Full incremental run with one report per session.
pub fn run_fscil(stream: &SessionStream, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Vec<SessionReport>, RunState)> {
    run_fscil_with(stream, model_cfg, cfg, |_, _| Ok(()))
}

/// As [`run_fscil`], calling `after_session` with the state after every session.
pub fn run_fscil_with(
    stream: &SessionStream,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut after_session: impl FnMut(&RunState, &SessionReport) -> Result<()>,
) -> Result<(Vec<SessionReport>, RunState)> {
    if stream.protocol != Protocol::Fscil {
        return Err(Error::Protocol("run_fscil needs an FSCIL stream".into()));
    }
    let mut state = train_base(stream, model_cfg, cfg)?;
    let mut reports = Vec::with_capacity(stream.num_sessions());
    let first = evaluate_session(&state, stream, 1)?;
    info!("session 1: joint accuracy {:.4}", first.joint_acc);
    after_session(&state, &first)?;
    reports.push(first);
    for task in &stream.tasks[1..] {
        train_novel_session(&mut state, task, &stream.semantics, cfg)?;
        let report = evaluate_session(&state, stream, task.index)?;
        info!(
            "session {}: joint {:.4} base {:.4} novel {:.4}",
            task.index,
            report.joint_acc,
            report.acc_base,
            report.acc_novel.unwrap_or(0.0)
        );
        after_session(&state, &report)?;
        reports.push(report);
    }
    Ok((reports, state))
}

/// DFSL: one base training, then `episodes` independent novel episodes each
/// adapted from the same post-base state.
pub fn run_dfsl(
    stream: &SessionStream,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    episodes: usize,
    way: usize,
    shot: usize,
) -> Result<(DfslReport, RunState)> {
    if stream.protocol != Protocol::Dfsl || stream.num_sessions() != 2 {
        return Err(Error::Protocol("DFSL evaluation needs a two-task DFSL stream".into()));
    }
    if episodes == 0 {
        return Err(Error::Config("eval.episodes must be positive".into()));
    }
    let base_state = train_base(stream, model_cfg, cfg)?;
    let base_test: Vec<&Sample> = stream.base().test.iter().collect();
    let base_positions: Vec<usize> = (0..base_state.head.len()).collect();
    let mut outcomes = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let episode = sample_episode(stream, way, shot, derive_seed(cfg.seed, "episode", e as u64))?;
        let mut state = base_state.clone();
        state.loss_log.clear();
        train_novel_session(&mut state, &episode.task, &stream.semantics, cfg)?;
        let queries: Vec<&Sample> = base_test.iter().copied().chain(episode.task.test.iter()).collect();
        let g = extract_features(&state.model, &queries)?;
        let y = state.model.project_features(g.view())?;
        let distances = state.head.distances(y.view());
        let labels: Vec<usize> = queries
            .iter()
            .map(|s| state.head.position(&s.label).expect("query classes registered"))
            .collect();
        let novel_positions: Vec<usize> = (base_positions.len()..state.head.len()).collect();
        outcomes.push(dfsl_episode_outcome(distances.view(), &labels, &base_positions, &novel_positions)?);
    }
    Ok((evaluate_dfsl(&outcomes)?, base_state))
}
