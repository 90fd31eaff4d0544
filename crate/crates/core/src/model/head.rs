use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cosine::{cosine_distance, distance_matrix};
use crate::error::{Error, Result};
use crate::semantics::ClassId;

/// Class semantic vectors in registration order. Extending the head adds
/// rows here, never parameters to the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeadRepr", into = "HeadRepr")]
pub struct ClassifierHead {
    dim: usize,
    classes: Vec<ClassId>,
    semantics: Array2<f64>,
    index: HashMap<ClassId, usize>,
}

#[derive(Serialize, Deserialize)]
struct HeadRepr {
    dim: usize,
    classes: Vec<(ClassId, Vec<f64>)>,
}

impl From<ClassifierHead> for HeadRepr {
    fn from(h: ClassifierHead) -> Self {
        HeadRepr {
            dim: h.dim,
            classes: h
                .classes
                .iter()
                .cloned()
                .zip(h.semantics.rows().into_iter().map(|r| r.to_vec()))
                .collect(),
        }
    }
}

impl TryFrom<HeadRepr> for ClassifierHead {
    type Error = Error;

    fn try_from(r: HeadRepr) -> Result<Self> {
        let mut head = ClassifierHead::new(r.dim);
        head.register_session_classes(&r.classes)?;
        Ok(head)
    }
}

impl ClassifierHead {
    pub fn new(dim: usize) -> Self {
        ClassifierHead {
            dim,
            classes: Vec::new(),
            semantics: Array2::zeros((0, dim)),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn semantics(&self) -> ArrayView2<'_, f64> {
        self.semantics.view()
    }

    pub fn position(&self, class: &ClassId) -> Option<usize> {
        self.index.get(class).copied()
    }

    pub fn contains(&self, class: &ClassId) -> bool {
        self.index.contains_key(class)
    }

    /// Appends classes with their semantic vectors; all or nothing.
    pub fn register_session_classes(&mut self, new: &[(ClassId, Vec<f64>)]) -> Result<()> {
        let mut batch = HashMap::new();
        for (i, (class, v)) in new.iter().enumerate() {
            if self.index.contains_key(class) || batch.insert(class, i).is_some() {
                return Err(Error::Duplicate(format!("class `{class}` already registered")));
            }
            if v.len() != self.dim {
                return Err(Error::Shape(format!(
                    "class `{class}` vector has {} components, head expects {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::DegenerateVector(format!("class `{class}` has a zero vector")));
            }
        }
        let mut rows = self.semantics.clone();
        for (class, v) in new {
            rows.push_row(ndarray::ArrayView1::from(v.as_slice()))
                .expect("row width checked above");
            self.index.insert(class.clone(), self.classes.len());
            self.classes.push(class.clone());
        }
        self.semantics = rows;
        Ok(())
    }

    /// Cosine distance from `y` to every registered class, in head order.
    pub fn score(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyInput("classifier head has no classes".into()));
        }
        if y.len() != self.dim {
            return Err(Error::Shape(format!("y has {} components, head expects {}", y.len(), self.dim)));
        }
        self.semantics
            .rows()
            .into_iter()
            .map(|s| cosine_distance(s.as_slice().expect("head rows are contiguous"), y))
            .collect()
    }

    /// Batched distances over all classes (`B × C`).
    pub fn distances(&self, y: ArrayView2<f64>) -> Array2<f64> {
        distance_matrix(y, self.semantics.view())
    }
}

/// Position of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}
