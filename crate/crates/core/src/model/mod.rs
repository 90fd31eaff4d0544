//! Backbone, superclass embeddings with attention fusion, semantic mapping
//! and the cosine classifier.

pub mod cnn;
pub mod cosine;
pub mod fusion;
pub mod head;
pub mod layers;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cnn::ConvNet;
pub use fusion::{Attention, FusionHead, FusionTrace};
pub use head::{argmin, ClassifierHead};
pub use layers::{zeros_like, Linear, Mlp, Params};

use crate::error::{Error, Result};
use crate::semantics::ClassId;
use crate::sessions::InputShape;

/// Parameter groups that are frozen or trained as a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Backbone,
    Embeddings,
    Attention,
    Mapping,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Backbone,
        Component::Embeddings,
        Component::Attention,
        Component::Mapping,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenFlags {
    pub backbone: bool,
    pub embeddings: bool,
    pub attention: bool,
    pub mapping: bool,
}

impl FrozenFlags {
    pub const NONE: FrozenFlags = FrozenFlags {
        backbone: false,
        embeddings: false,
        attention: false,
        mapping: false,
    };

    /// Flags with only the listed components trainable.
    pub fn training(components: &[Component]) -> Self {
        FrozenFlags {
            backbone: !components.contains(&Component::Backbone),
            embeddings: !components.contains(&Component::Embeddings),
            attention: !components.contains(&Component::Attention),
            mapping: !components.contains(&Component::Mapping),
        }
    }

    pub fn is_frozen(&self, c: Component) -> bool {
        match c {
            Component::Backbone => self.backbone,
            Component::Embeddings => self.embeddings,
            Component::Attention => self.attention,
            Component::Mapping => self.mapping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackboneConfig {
    /// ReLU MLP for feature-vector inputs.
    Mlp { hidden: Vec<usize> },
    /// Three-block CNN for images.
    Cnn { channels: Vec<usize> },
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::Mlp { hidden: vec![64] }
    }
}

fn default_feature_dim() -> usize {
    32
}
fn default_modules() -> usize {
    3
}
fn default_attention_hidden() -> usize {
    64
}
fn default_mapping_hidden() -> Vec<usize> {
    vec![512, 728]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Global feature width `u`.
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Number of superclass embedding modules `N`.
    #[serde(default = "default_modules")]
    pub num_superclasses: usize,
    /// Attention hidden width `L`.
    #[serde(default = "default_attention_hidden")]
    pub attention_hidden: usize,
    #[serde(default = "default_mapping_hidden")]
    pub mapping_hidden: Vec<usize>,
    #[serde(default)]
    pub backbone: BackboneConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: default_feature_dim(),
            num_superclasses: default_modules(),
            attention_hidden: default_attention_hidden(),
            mapping_hidden: default_mapping_hidden(),
            backbone: BackboneConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_superclasses == 0 || self.attention_hidden == 0 {
            return Err(Error::Config(
                "model.feature_dim, num_superclasses and attention_hidden must be positive".into(),
            ));
        }
        if self.mapping_hidden.contains(&0) {
            return Err(Error::Config("model.mapping_hidden widths must be positive".into()));
        }
        match &self.backbone {
            BackboneConfig::Mlp { hidden } if hidden.contains(&0) => {
                Err(Error::Config("backbone hidden widths must be positive".into()))
            }
            BackboneConfig::Cnn { channels } if channels.is_empty() || channels.contains(&0) => {
                Err(Error::Config("cnn backbone needs positive channel counts".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Mlp(Mlp),
    Cnn(ConvNet),
}

pub enum BackboneTrace {
    Mlp(layers::MlpTrace),
    Cnn(cnn::CnnTrace),
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig, input: InputShape, u: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        match (cfg, input) {
            (BackboneConfig::Mlp { hidden }, shape) => {
                let mut widths = vec![shape.len()];
                widths.extend_from_slice(hidden);
                widths.push(u);
                Ok(Backbone::Mlp(Mlp::new(&widths, true, rng)))
            }
            (BackboneConfig::Cnn { channels }, InputShape::Image { channels: c, size }) => {
                Ok(Backbone::Cnn(ConvNet::new(c, size, channels, u, rng)))
            }
            (BackboneConfig::Cnn { .. }, InputShape::Vector { .. }) => {
                Err(Error::Config("a cnn backbone needs image inputs".into()))
            }
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Backbone::Mlp(m) => m.input_dim(),
            Backbone::Cnn(c) => c.input_len(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Backbone::Mlp(m) => m.output_dim(),
            Backbone::Cnn(c) => c.output_dim(),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_len() {
            return Err(Error::Shape(format!(
                "backbone expects inputs of length {}, got {}",
                self.input_len(),
                x.ncols()
            )));
        }
        Ok(match self {
            Backbone::Mlp(m) => m.forward(x),
            Backbone::Cnn(c) => c.forward(x),
        })
    }

    pub fn forward_traced(&self, x: ArrayView2<f64>) -> (Array2<f64>, BackboneTrace) {
        match self {
            Backbone::Mlp(m) => {
                let t = m.forward_traced(x);
                (t.output.clone(), BackboneTrace::Mlp(t))
            }
            Backbone::Cnn(c) => {
                let (out, t) = c.forward_traced(x);
                (out, BackboneTrace::Cnn(t))
            }
        }
    }

    pub fn backward(&self, trace: &BackboneTrace, grad_out: ArrayView2<f64>, grads: &mut Backbone) {
        match (self, trace, grads) {
            (Backbone::Mlp(m), BackboneTrace::Mlp(t), Backbone::Mlp(g)) => {
                m.backward(t, grad_out, g);
            }
            (Backbone::Cnn(c), BackboneTrace::Cnn(t), Backbone::Cnn(g)) => c.backward(t, grad_out, g),
            _ => unreachable!("trace and gradient buffer come from the same backbone"),
        }
    }
}

impl Params for Backbone {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Backbone::Mlp(m) => m.tensors(),
            Backbone::Cnn(c) => c.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Backbone::Mlp(m) => m.tensors_mut(),
            Backbone::Cnn(c) => c.tensors_mut(),
        }
    }
}

/// Full network: backbone plus fusion head, with per-component freeze flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub input_shape: InputShape,
    pub semantic_dim: usize,
    pub backbone: Backbone,
    pub fusion: FusionHead,
    pub frozen: FrozenFlags,
}

impl ModelState {
    pub fn new(config: &ModelConfig, input_shape: InputShape, semantic_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if semantic_dim == 0 {
            return Err(Error::Config("semantic dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&config.backbone, input_shape, config.feature_dim, &mut rng)?;
        let fusion = FusionHead::new(
            config.feature_dim,
            semantic_dim,
            config.num_superclasses,
            config.attention_hidden,
            &config.mapping_hidden,
            &mut rng,
        );
        Ok(ModelState {
            config: config.clone(),
            input_shape,
            semantic_dim,
            backbone,
            fusion,
            frozen: FrozenFlags::NONE,
        })
    }

    pub fn component_params(&self, c: Component) -> usize {
        match c {
            Component::Backbone => self.backbone.num_params(),
            other => self.fusion.component_params(other),
        }
    }

    pub fn count_params(&self) -> usize {
        Component::ALL.iter().map(|&c| self.component_params(c)).sum()
    }

    pub fn count_trainable(&self) -> usize {
        Component::ALL
            .iter()
            .filter(|&&c| !self.frozen.is_frozen(c))
            .map(|&c| self.component_params(c))
            .sum()
    }

    /// Global features `g` for a batch of raw inputs.
    pub fn backbone_forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let g = self.backbone.forward(x)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateVector("backbone produced non-finite features".into()));
        }
        Ok(g)
    }

    /// Fused embeddings and attention weights for global features.
    pub fn attention_fuse(&self, g: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_features(g)?;
        Ok(self.fusion.attention_fuse(g))
    }

    pub fn map_to_semantic(&self, g: ArrayView2<f64>, e: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_features(g)?;
        self.check_features(e)?;
        if g.nrows() != e.nrows() {
            return Err(Error::Shape("g and e batch sizes differ".into()));
        }
        Ok(self.fusion.map_to_semantic(g, e))
    }

    /// Semantic-space projections `y` of global features.
    pub fn project_features(&self, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_features(g)?;
        Ok(self.fusion.forward(g))
    }

    /// Semantic-space projections `y` of raw inputs.
    pub fn project_inputs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let g = self.backbone_forward(x)?;
        Ok(self.fusion.forward(g.view()))
    }

    fn check_features(&self, g: ArrayView2<f64>) -> Result<()> {
        if g.ncols() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "features have width {}, expected {}",
                g.ncols(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Predicted class of one raw input: the nearest class semantic vector.
    pub fn predict(&self, head: &ClassifierHead, x: ArrayView1<f64>) -> Result<ClassId> {
        if head.is_empty() {
            return Err(Error::EmptyInput("classifier head has no classes".into()));
        }
        let y = self.project_inputs(x.insert_axis(ndarray::Axis(0)))?;
        let d = head.score(y.row(0).as_slice().expect("fresh row is contiguous"))?;
        Ok(head.classes()[argmin(&d)].clone())
    }
}

/// Stacks sample inputs into a `B × len` matrix.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(Error::Shape(format!("row of length {} where {width} expected", r.len())));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, width), data).expect("length checked per row"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn small() -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            num_superclasses: 2,
            attention_hidden: 4,
            mapping_hidden: vec![8, 8],
            backbone: BackboneConfig::Mlp { hidden: vec![] },
        }
    }

    #[test]
    fn linear_backbone_maps_zero_to_zero() {
        let state = ModelState::new(&small(), InputShape::Vector { dim: 5 }, 3, 0).unwrap();
        let g = state.backbone_forward(Array2::zeros((2, 5)).view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(matches!(
            state.backbone_forward(Array2::zeros((2, 4)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let a = ModelState::new(&small(), InputShape::Vector { dim: 5 }, 3, 7).unwrap();
        let b = ModelState::new(&small(), InputShape::Vector { dim: 5 }, 3, 7).unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 * 0.7 - j as f64).cos() * 3.0);
        let ya = a.project_inputs(x.view()).unwrap();
        assert_eq!(ya, b.project_inputs(x.view()).unwrap());
        assert_eq!(ya, a.project_inputs(x.view()).unwrap());
        assert!(ya.iter().all(|v| v.is_finite()));
        assert_eq!(ya.ncols(), 3);
    }

    #[test]
    fn trainable_count_follows_flags() {
        let mut s = ModelState::new(&small(), InputShape::Vector { dim: 5 }, 3, 7).unwrap();
        assert_eq!(s.count_trainable(), s.count_params());
        s.frozen = FrozenFlags::training(&[Component::Attention, Component::Mapping]);
        assert_eq!(
            s.count_trainable(),
            s.component_params(Component::Attention) + s.component_params(Component::Mapping)
        );
        assert_eq!(s.component_params(Component::Attention), 4 * 6 + 4);
    }

    #[test]
    fn predict_single_class() {
        let s = ModelState::new(&small(), InputShape::Vector { dim: 5 }, 3, 7).unwrap();
        let mut head = ClassifierHead::new(3);
        head.register_session_classes(&[("only".into(), vec![1.0, 2.0, 3.0])]).unwrap();
        let x = Array1::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(s.predict(&head, x.view()).unwrap(), ClassId::from("only"));
        assert!(matches!(
            s.predict(&ClassifierHead::new(3), x.view()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn cnn_needs_images() {
        let cfg = ModelConfig {
            backbone: BackboneConfig::Cnn { channels: vec![2, 2, 2] },
            ..small()
        };
        assert!(ModelState::new(&cfg, InputShape::Vector { dim: 5 }, 3, 0).is_err());
        let s = ModelState::new(&cfg, InputShape::Image { channels: 1, size: 8 }, 3, 0).unwrap();
        let g = s.backbone_forward(Array2::from_elem((1, 64), 0.3).view()).unwrap();
        assert_eq!(g.ncols(), 6);
    }
}
