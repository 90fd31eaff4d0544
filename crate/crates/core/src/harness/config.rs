//! Experiment configuration: TOML with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::seeds::derive_seed;
use crate::sessions::{ImageOptions, Protocol, SyntheticConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDatasetConfig {
    /// Directory with one sub-folder of images per class.
    pub root: PathBuf,
    /// JSON file listing base classes and the classes of each session.
    pub split: PathBuf,
    /// Whitespace-separated word-vector file.
    pub semantics: PathBuf,
    pub semantic_dim: usize,
    pub way: usize,
    pub shot: usize,
    #[serde(default)]
    pub options: ImageOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic(SyntheticConfig),
    Image(ImageDatasetConfig),
}

fn default_protocol() -> Protocol {
    Protocol::Fscil
}
fn default_episodes() -> usize {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    /// DFSL episodes to average over.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: default_protocol(),
            episodes: default_episodes(),
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Splits `a.b.c=value` and parses the value as a TOML literal, falling back
/// to a bare string.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    Ok((path, value))
}

pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        let (last, parents) = path.split_last().expect("at least one segment");
        let mut cur = &mut *table;
        for seg in parents {
            let entry = cur
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override `{spec}`: `{seg}` is not a table")))?;
        }
        cur.insert(last.clone(), value);
    }
    Ok(())
}

fn resolve_path(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        apply_overrides(&mut table, overrides)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file; dataset paths are taken relative to its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetConfig::Image(img) = &mut cfg.dataset {
            resolve_path(base, &mut img.root);
            resolve_path(base, &mut img.split);
            resolve_path(base, &mut img.semantics);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        match &self.dataset {
            DatasetConfig::Synthetic(s) => {
                s.validate()?;
                if self.model.num_superclasses > s.num_base_classes {
                    return Err(Error::Config(format!(
                        "model.num_superclasses = {} exceeds the {} base classes",
                        self.model.num_superclasses, s.num_base_classes
                    )));
                }
            }
            DatasetConfig::Image(img) => {
                img.options.validate()?;
                if self.eval.protocol == Protocol::Dfsl {
                    return Err(Error::Config("the dfsl protocol needs a synthetic dataset".into()));
                }
                if img.semantic_dim == 0 || img.way == 0 || img.shot == 0 {
                    return Err(Error::Config("dataset.semantic_dim, way and shot must be positive".into()));
                }
                for (key, p) in [("root", &img.root), ("split", &img.split), ("semantics", &img.semantics)] {
                    if !p.exists() {
                        return Err(Error::Config(format!("dataset.{key}: {} does not exist", p.display())));
                    }
                }
            }
        }
        if self.eval.protocol == Protocol::Dfsl && self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be positive".into()));
        }
        Ok(())
    }

    /// Fans the root seed out to the dataset and the trainer.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.train.seed = derive_seed(self.seed, "train", 0);
        if let DatasetConfig::Synthetic(s) = &mut cfg.dataset {
            s.seed = derive_seed(self.seed, "dataset", 0);
        }
        cfg
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Twelve hex digits of the SHA-256 of the resolved config.
    pub fn run_id(&self) -> Result<String> {
        let text = self.resolved().to_toml()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(hex::encode(digest)[..12].to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [dataset]
        kind = "synthetic"
        num_base_classes = 6
        num_sessions = 3
        way = 2
        shot = 2
        feature_dim = 4
        samples_per_base_class = 10
        test_per_class = 3
        blob_spread = 0.5
    "#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.loss.lambda2, 1.1);
        assert_eq!(cfg.eval.episodes, 600);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_set_nested_keys() {
        let cfg = ExperimentConfig::from_toml_str(
            MINIMAL,
            &[
                "train.epochs_per_phase.novel=0".into(),
                "train.loss.lambda2=0".into(),
                "name=probe".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs.novel, 0);
        assert_eq!(cfg.train.loss.lambda2, 0.0);
        assert_eq!(cfg.name, "probe");
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let err = ExperimentConfig::from_toml_str(MINIMAL, &["train.learning_rat=0.1".into()]).unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
        assert!(ExperimentConfig::from_toml_str(MINIMAL, &["novalue".into()]).is_err());
    }

    #[test]
    fn run_id_tracks_the_resolved_config() {
        let a = ExperimentConfig::from_toml_str(MINIMAL, &[]).unwrap();
        let b = ExperimentConfig::from_toml_str(MINIMAL, &["seed=1".into()]).unwrap();
        assert_eq!(a.run_id().unwrap().len(), 12);
        assert_eq!(a.run_id().unwrap(), a.clone().run_id().unwrap());
        assert_ne!(a.run_id().unwrap(), b.run_id().unwrap());
        let r = a.resolved();
        assert_eq!(r.resolved(), r);
    }
}
