//! Session streams: synthetic few-shot class-incremental streams, SVFF
//! feature files split into sessions, and in-span adaptation targets.

mod svff;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use svff::{
    decode_features, encode_features, load_feature_file, save_feature_file, FeatureSet, HEADER_LEN,
    MAGIC, VERSION,
};

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix, SvdFactorization};

/// Within-class noise of the synthetic clusters.
pub const SYNTHETIC_NOISE_STD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDataset {
    pub index: usize,
    /// Classes introduced in this session, ascending.
    pub classes: Vec<usize>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    Synthetic,
    FeatureFile(PathBuf),
}

fn default_base_classes() -> usize {
    20
}
fn default_sessions() -> usize {
    4
}
fn default_n_way() -> usize {
    5
}
fn default_k_shot() -> usize {
    5
}
fn default_dim() -> usize {
    64
}
fn default_val_per_class() -> usize {
    20
}
fn default_base_train_per_class() -> usize {
    100
}
fn default_source() -> StreamSource {
    StreamSource::Synthetic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    #[serde(default = "default_base_classes")]
    pub base_classes: usize,
    /// Incremental sessions after the base session.
    #[serde(default = "default_sessions")]
    pub sessions: usize,
    #[serde(default = "default_n_way")]
    pub n_way: usize,
    #[serde(default = "default_k_shot")]
    pub k_shot: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_val_per_class")]
    pub val_per_class: usize,
    #[serde(default = "default_base_train_per_class")]
    pub base_train_per_class: usize,
    /// Mixed with the run seed; see [`StreamConfig::effective_seed`].
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_source")]
    pub source: StreamSource,
    /// Rotate and anisotropically rescale incremental-session features.
    #[serde(default)]
    pub distortion: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            base_classes: default_base_classes(),
            sessions: default_sessions(),
            n_way: default_n_way(),
            k_shot: default_k_shot(),
            dim: default_dim(),
            val_per_class: default_val_per_class(),
            base_train_per_class: default_base_train_per_class(),
            seed: 0,
            source: StreamSource::Synthetic,
            distortion: false,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_classes", self.base_classes),
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("dim", self.dim),
            ("val_per_class", self.val_per_class),
            ("base_train_per_class", self.base_train_per_class),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.base_classes + self.sessions * self.n_way
    }

    /// Classes introduced by session `t`.
    pub fn session_classes(&self, t: usize) -> Vec<usize> {
        if t == 0 {
            (0..self.base_classes).collect()
        } else {
            let start = self.base_classes + (t - 1) * self.n_way;
            (start..start + self.n_way).collect()
        }
    }

    /// Seed actually used for a run: the configured stream seed mixed with the
    /// run seed, so different runs see different streams.
    pub fn effective_seed(&self, run_seed: u64) -> u64 {
        self.seed ^ run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gaussian clusters around unit-sphere class means.
pub fn generate_stream(config: &StreamConfig, seed: u64) -> Result<Vec<SessionDataset>> {
    config.validate()?;
    if config.source != StreamSource::Synthetic {
        return Err(Error::Config(
            "generate_stream needs a synthetic source".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..config.total_classes())
        .map(|_| unit_vector(&mut rng, config.dim))
        .collect();
    let noise = Normal::new(0.0, SYNTHETIC_NOISE_STD).expect("valid std");
    let distortion = config
        .distortion
        .then(|| {
            let mut aux = ChaCha8Rng::seed_from_u64(seed);
            aux.set_stream(1);
            Distortion::random(config.dim, &mut aux)
        })
        .transpose()?;

    let draw = |class: usize, rng: &mut ChaCha8Rng| Sample {
        features: means[class].iter().map(|m| m + noise.sample(rng)).collect(),
        label: class,
    };

    let mut sessions = Vec::with_capacity(config.sessions + 1);
    for t in 0..=config.sessions {
        let classes = config.session_classes(t);
        let per_class = if t == 0 {
            config.base_train_per_class
        } else {
            config.k_shot
        };
        let mut train = Vec::with_capacity(classes.len() * per_class);
        let mut val = Vec::with_capacity(classes.len() * config.val_per_class);
        for &c in &classes {
            train.extend((0..per_class).map(|_| draw(c, &mut rng)));
            val.extend((0..config.val_per_class).map(|_| draw(c, &mut rng)));
        }
        if t > 0 {
            if let Some(d) = &distortion {
                train
                    .iter_mut()
                    .chain(val.iter_mut())
                    .for_each(|s| d.apply(s));
            }
        }
        sessions.push(SessionDataset {
            index: t,
            classes,
            train,
            val,
        });
    }
    Ok(sessions)
}

/// Fixed random rotation followed by a per-axis scale in `[0.75, 1.25]`.
struct Distortion {
    rotation: Matrix,
    scale: Vec<f64>,
}

impl Distortion {
    fn random(dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        let g = Matrix::from_vec(
            dim,
            dim,
            (0..dim * dim).map(|_| normal.sample(rng)).collect(),
        )?;
        let rotation = svd(&g)?.u;
        let scale = (0..dim).map(|_| rng.random_range(0.75..=1.25)).collect();
        Ok(Distortion { rotation, scale })
    }

    fn apply(&self, s: &mut Sample) {
        let rotated = self
            .rotation
            .vec_mul(&s.features)
            .expect("dimension checked");
        s.features = rotated
            .iter()
            .zip(&self.scale)
            .map(|(x, k)| x * k)
            .collect();
    }
}

/// Splits a labeled feature set into a base session and `N`-way `K`-shot
/// sessions. Classes are taken in ascending id order.
///
/// Base classes hold out `val_per_class` seeded samples for validation and
/// train on the rest. Incremental classes train on `K` seeded shots and
/// validate on the remainder.
pub fn split_sessions(
    features: &FeatureSet,
    config: &StreamConfig,
    seed: u64,
) -> Result<Vec<SessionDataset>> {
    config.validate()?;
    let mut by_class: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
    for s in &features.samples {
        by_class.entry(s.label).or_default().push(s);
    }
    let ids: Vec<usize> = by_class.keys().copied().collect();
    if ids.len() < config.total_classes() {
        return Err(Error::Layout(format!(
            "layout needs {} classes ({} base + {} × {}), data has {}",
            config.total_classes(),
            config.base_classes,
            config.sessions,
            config.n_way,
            ids.len()
        )));
    }

    let mut sessions = Vec::with_capacity(config.sessions + 1);
    for t in 0..=config.sessions {
        let slots = config.session_classes(t);
        let classes: Vec<usize> = slots.iter().map(|&i| ids[i]).collect();
        let mut train = Vec::new();
        let mut val = Vec::new();
        for &c in &classes {
            let pool = &by_class[&c];
            let mut order: Vec<usize> = (0..pool.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            order.shuffle(&mut rng);
            let (first, rest) = if t == 0 {
                if pool.len() <= config.val_per_class {
                    return Err(Error::Layout(format!(
                        "base class {c} has {} samples, needs more than {} to hold out validation",
                        pool.len(),
                        config.val_per_class
                    )));
                }
                let (held, kept) = order.split_at(config.val_per_class);
                (kept, held)
            } else {
                if pool.len() <= config.k_shot {
                    return Err(Error::Layout(format!(
                        "class {c} has {} samples, needs {} shots plus at least one for validation",
                        pool.len(),
                        config.k_shot
                    )));
                }
                order.split_at(config.k_shot)
            };
            let mut first = first.to_vec();
            let mut rest = rest.to_vec();
            first.sort_unstable();
            rest.sort_unstable();
            train.extend(first.iter().map(|&i| pool[i].clone()));
            val.extend(rest.iter().map(|&i| pool[i].clone()));
        }
        sessions.push(SessionDataset {
            index: t,
            classes,
            train,
            val,
        });
    }
    Ok(sessions)
}

/// `Σ_k coeffs[k] · u_k v_kᵀ`, a target inside the span of the base's
/// singular directions.
pub fn make_in_span_target(base: &SvdFactorization, coeffs: &[f64]) -> Result<Matrix> {
    if coeffs.len() > base.rank() {
        return Err(Error::Range(format!(
            "{} coefficients for a basis of rank {}",
            coeffs.len(),
            base.rank()
        )));
    }
    Ok(base.weighted_sum(coeffs))
}

/// SHA-256 over every label and feature of a stream.
pub fn stream_digest(sessions: &[SessionDataset]) -> String {
    let mut h = Sha256::new();
    for s in sessions {
        h.update((s.index as u64).to_le_bytes());
        for part in [&s.train, &s.val] {
            h.update((part.len() as u64).to_le_bytes());
            for sample in part.iter() {
                h.update((sample.label as u64).to_le_bytes());
                for v in &sample.features {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    hex::encode(h.finalize())
}
