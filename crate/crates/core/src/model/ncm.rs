use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Backbone;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::norm2;

/// Nearest-class-mean classifier over backbone embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcmClassifier {
    prototypes: BTreeMap<usize, Vec<f64>>,
    normalize: bool,
}

impl Default for NcmClassifier {
    fn default() -> Self {
        NcmClassifier::new(true)
    }
}

impl NcmClassifier {
    pub fn new(normalize: bool) -> Self {
        NcmClassifier {
            prototypes: BTreeMap::new(),
            normalize,
        }
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn prototypes(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn install(&mut self, class: usize, prototype: Vec<f64>) -> Result<()> {
        if prototype.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prototype for class {class} is not finite"
            )));
        }
        if let Some(dim) = self.prototypes.values().next().map(Vec::len) {
            if dim != prototype.len() {
                return Err(Error::Shape(format!(
                    "prototype of dimension {} for classifier of dimension {dim}",
                    prototype.len()
                )));
            }
        }
        self.prototypes.insert(class, prototype);
        Ok(())
    }

    /// Class whose prototype is nearest in Euclidean distance; ties go to the
    /// smallest class id.
    pub fn classify(&self, embedding: &[f64]) -> Result<usize> {
        self.classify_among(embedding, |_| true)
    }

    /// As [`classify`](Self::classify), restricted to classes accepted by `keep`.
    pub fn classify_among(&self, embedding: &[f64], keep: impl Fn(usize) -> bool) -> Result<usize> {
        let query = self.prepare(embedding);
        let mut best: Option<(usize, f64)> = None;
        for (&class, proto) in self.prototypes.iter().filter(|(c, _)| keep(**c)) {
            if proto.len() != query.len() {
                return Err(Error::Shape(format!(
                    "embedding of dimension {} against prototypes of {}",
                    query.len(),
                    proto.len()
                )));
            }
            let p = self.prepare(proto);
            let dist: f64 = query.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((class, dist));
            }
        }
        best.map(|(c, _)| c)
            .ok_or_else(|| Error::InvalidInput("classifier has no prototypes".into()))
    }

    fn prepare(&self, x: &[f64]) -> Vec<f64> {
        if !self.normalize {
            return x.to_vec();
        }
        l2_normalized(x)
    }
}

pub fn l2_normalized(x: &[f64]) -> Vec<f64> {
    let n = norm2(x);
    if n == 0.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / n).collect()
    }
}

pub fn ncm_classify(classifier: &NcmClassifier, embedding: &[f64]) -> Result<usize> {
    classifier.classify(embedding)
}

/// Mean embedding of each listed class over `samples`.
pub fn compute_prototypes(
    backbone: &Backbone,
    samples: &[Sample],
    classes: &[usize],
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let dim = backbone.output_dim();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> =
        classes.iter().map(|&c| (c, (vec![0.0; dim], 0))).collect();
    for s in samples {
        let Some((sum, count)) = sums.get_mut(&s.label) else {
            continue;
        };
        let e = backbone.embed(&s.features)?;
        for (a, b) in sum.iter_mut().zip(&e) {
            *a += b;
        }
        *count += 1;
    }
    sums.into_iter()
        .map(|(c, (sum, count))| {
            if count == 0 {
                return Err(Error::EmptyClass(c));
            }
            Ok((c, sum.into_iter().map(|v| v / count as f64).collect()))
        })
        .collect()
}
