//! Prototype rehearsal memory: one mean backbone feature per seen class.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::ClassId;
use crate::sessions::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMemory {
    dim: usize,
    entries: IndexMap<ClassId, Vec<f64>>,
}

impl PrototypeMemory {
    pub fn new(dim: usize) -> Self {
        PrototypeMemory {
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, class: &ClassId) -> bool {
        self.entries.contains_key(class)
    }

    pub fn get(&self, class: &ClassId) -> Option<&[f64]> {
        self.entries.get(class).map(Vec::as_slice)
    }

    /// All prototypes with their labels, in insertion order. Replayed
    /// prototypes enter the network after the backbone.
    pub fn replay_batch(&self) -> Vec<(&[f64], &ClassId)> {
        self.entries.iter().map(|(c, p)| (p.as_slice(), c)).collect()
    }

    /// Appends the mean feature of every class in `task`. Existing entries
    /// are never touched; a failure leaves the memory unchanged.
    pub fn update_memory(&mut self, task: &TaskSpec, features: &HashMap<ClassId, Vec<Vec<f64>>>) -> Result<()> {
        let mut fresh = Vec::with_capacity(task.classes.len());
        for class in &task.classes {
            if self.entries.contains_key(class) {
                return Err(Error::Duplicate(format!("class `{class}` already has a prototype")));
            }
            let feats = features
                .get(class)
                .filter(|f| !f.is_empty())
                .ok_or_else(|| Error::Dataset(format!("no features for class `{class}`")))?;
            let mut mean = vec![0.0; self.dim];
            for f in feats {
                if f.len() != self.dim {
                    return Err(Error::Shape(format!(
                        "feature of length {} for class `{class}`, expected {}",
                        f.len(),
                        self.dim
                    )));
                }
                for (m, x) in mean.iter_mut().zip(f) {
                    *m += x;
                }
            }
            let n = feats.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            fresh.push((class.clone(), mean));
        }
        self.entries.extend(fresh);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(classes: &[&str]) -> TaskSpec {
        TaskSpec {
            index: 1,
            classes: classes.iter().map(|&c| c.into()).collect(),
            train: vec![],
            test: vec![],
            way: classes.len(),
            shot: 0,
        }
    }

    #[test]
    fn prototype_is_the_mean() {
        let mut mem = PrototypeMemory::new(2);
        let feats = HashMap::from([(ClassId::from("a"), vec![vec![1.0, 2.0], vec![3.0, 4.0]])]);
        mem.update_memory(&task(&["a"]), &feats).unwrap();
        assert_eq!(mem.get(&"a".into()).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn single_sample_prototype() {
        let mut mem = PrototypeMemory::new(3);
        let feats = HashMap::from([(ClassId::from("a"), vec![vec![0.5, -1.0, 4.0]])]);
        mem.update_memory(&task(&["a"]), &feats).unwrap();
        assert_eq!(mem.get(&"a".into()).unwrap(), &[0.5, -1.0, 4.0]);
    }

    #[test]
    fn duplicates_and_missing_features_rejected() {
        let mut mem = PrototypeMemory::new(1);
        let feats = HashMap::from([(ClassId::from("a"), vec![vec![1.0]]), (ClassId::from("b"), vec![])]);
        assert!(matches!(
            mem.update_memory(&task(&["a", "b"]), &feats),
            Err(Error::Dataset(_))
        ));
        assert!(mem.is_empty());
        mem.update_memory(&task(&["a"]), &feats).unwrap();
        assert!(matches!(mem.update_memory(&task(&["a"]), &feats), Err(Error::Duplicate(_))));
    }

    #[test]
    fn replay_preserves_insertion_order() {
        let mut mem = PrototypeMemory::new(1);
        assert!(mem.replay_batch().is_empty());
        let feats: HashMap<ClassId, Vec<Vec<f64>>> =
            ["c", "a", "b"].iter().enumerate().map(|(i, &c)| (c.into(), vec![vec![i as f64]])).collect();
        mem.update_memory(&task(&["c", "a", "b"]), &feats).unwrap();
        let order: Vec<_> = mem.replay_batch().into_iter().map(|(_, c)| c.as_str().to_owned()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }
}
