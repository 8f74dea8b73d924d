//! The sequential session protocol: train, freeze, install prototypes,
//! evaluate, and repeat for every session of a stream.

mod compare;
mod metrics;
mod output;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use compare::{compare_strategies, ComparisonRow, ComparisonTable};
pub use metrics::{compute_metrics, median, overfit_gap, GapSeries, Metrics};
pub use output::{sessions_csv, trajectory_csv, write_outputs};

use crate::adapters::{param_count, AdapterKind, FrozenState};
use crate::data::{
    generate_stream, load_feature_file, split_sessions, stream_digest, Sample, SessionDataset,
    StreamConfig, StreamSource,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{compute_prototypes, Adam, Backbone, BackboneConfig, Model};

fn default_epochs_base() -> usize {
    5
}
fn default_epochs_incremental() -> usize {
    2
}
fn default_lr() -> f64 {
    5e-4
}
fn default_batch_size() -> usize {
    16
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_eval_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default = "default_epochs_base")]
    pub epochs_base: usize,
    #[serde(default = "default_epochs_incremental")]
    pub epochs_incremental: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Record train/validation accuracy every this many epochs (and always
    /// after the last one).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            stream: StreamConfig::default(),
            backbone: BackboneConfig::default(),
            epochs_base: default_epochs_base(),
            epochs_incremental: default_epochs_incremental(),
            lr: default_lr(),
            batch_size: default_batch_size(),
            seeds: default_seeds(),
            eval_every: default_eval_every(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.backbone.validate()?;
        if self.stream.dim != self.backbone.input_dim() {
            return Err(Error::Config(format!(
                "stream dimension {} does not match backbone input {}",
                self.stream.dim,
                self.backbone.input_dim()
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Same config with a different adapter kind.
    pub fn with_kind(&self, kind: AdapterKind) -> Self {
        let mut c = self.clone();
        c.backbone.adapter_kind = kind;
        c
    }

    fn epochs(&self, session: usize) -> usize {
        if session == 0 {
            self.epochs_base
        } else {
            self.epochs_incremental
        }
    }
}

/// Parses and validates a JSON config. A relative feature-file path is
/// resolved against the config file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text)?;
    if let StreamSource::FeatureFile(p) = &mut config.stream.source {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// What happened in one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub index: usize,
    pub classes: Vec<usize>,
    /// Epoch (1-based) of each trajectory checkpoint.
    pub epochs: Vec<usize>,
    /// Training-head accuracy on this session's training samples, percent.
    pub train_acc: Vec<f64>,
    /// Training-head accuracy on this session's validation samples, percent.
    pub val_acc: Vec<f64>,
    pub gap: Vec<f64>,
    /// Mean training loss of the last epoch, if the session trained.
    pub final_loss: Option<f64>,
    /// `A_t`: NCM accuracy over the validation samples of every class seen so
    /// far, percent.
    pub accuracy: f64,
    /// NCM accuracy on base-session validation samples among base-session
    /// prototypes only, percent.
    pub base_accuracy: f64,
    /// Per layer: largest off-diagonal of `Uᵀ (W_t − W) V` (SVF layers only).
    pub span_residual: Vec<Option<f64>>,
    /// Per layer digests of the frozen state after the session.
    pub frozen_state: Vec<FrozenState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub kind: AdapterKind,
    pub rank: usize,
    /// `A_t` for every session, percent.
    pub accuracies: Vec<f64>,
    pub a_avg: f64,
    pub pd: f64,
    /// Mean over incremental sessions of the last-checkpoint overfit gap (the
    /// base session's when there are none). `None` if nothing trained.
    pub final_gap: Option<f64>,
    /// Backbone parameters trained in each session.
    pub trainable_params: usize,
    /// Adapter parameters stored after the whole run.
    pub stored_params: usize,
    pub stream_digest: String,
    pub sessions: Vec<SessionRecord>,
    /// Measured, never serialized, so reports compare byte for byte.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Mixes a seed with a purpose tag (splitmix64 finalizer).
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_WEIGHTS: u64 = 1;
const TAG_ADAPTERS: u64 = 2;
const TAG_SHUFFLE: u64 = 3;

/// Builds the session stream for `seed`. Every adapter kind gets the same one.
pub fn build_stream(config: &ExperimentConfig, seed: u64) -> Result<Vec<SessionDataset>> {
    let stream_seed = config.stream.effective_seed(seed);
    match &config.stream.source {
        StreamSource::Synthetic => generate_stream(&config.stream, stream_seed),
        StreamSource::FeatureFile(path) => {
            let set = load_feature_file(path)?;
            if set.dim != config.backbone.input_dim() {
                return Err(Error::Config(format!(
                    "{} holds {}-dimensional features, backbone expects {}",
                    path.display(),
                    set.dim,
                    config.backbone.input_dim()
                )));
            }
            split_sessions(&set, &config.stream, stream_seed)
        }
    }
}

/// Untrained model for `seed`: random base weights shared by every kind.
pub fn initial_model(config: &ExperimentConfig, seed: u64) -> Result<Model> {
    let weights = Backbone::random_weights(&config.backbone, derive_seed(seed, TAG_WEIGHTS));
    let backbone = Backbone::new(
        config.backbone.clone(),
        weights,
        derive_seed(seed, TAG_ADAPTERS),
    )?;
    Ok(Model::new(backbone))
}

pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    run_experiment_with_model(config, seed).map(|(report, _)| report)
}

/// Runs every session and also returns the final model.
pub fn run_experiment_with_model(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(ExperimentReport, Model)> {
    config.validate()?;
    let started = Instant::now();
    let stream = build_stream(config, seed)?;
    let mut model = initial_model(config, seed)?;
    let kind = config.backbone.adapter_kind;
    let base_classes = stream
        .first()
        .map(|s| s.classes.clone())
        .unwrap_or_default();

    let mut records = Vec::with_capacity(stream.len());
    let mut seen_val: Vec<&Sample> = Vec::new();
    for session in &stream {
        let before: Vec<FrozenState> = model
            .backbone
            .layers()
            .iter()
            .map(|l| l.frozen_state())
            .collect();

        let trajectory = if kind == AdapterKind::Frozen {
            Trajectory::default()
        } else {
            train_session(&mut model, session, config, seed)?
        };
        model.backbone.freeze_task();

        let after: Vec<FrozenState> = model
            .backbone
            .layers()
            .iter()
            .map(|l| l.frozen_state())
            .collect();
        check_frozen(session.index, &before, &after)?;

        let prototypes = compute_prototypes(&model.backbone, &session.train, &session.classes)?;
        for (c, p) in prototypes {
            model.head.set_row(c, p.clone());
            model.ncm.install(c, p)?;
        }

        seen_val.extend(session.val.iter());
        let accuracy = ncm_accuracy(&model, &seen_val, |_| true)?;
        let base_val: Vec<&Sample> = stream[0].val.iter().collect();
        let base_accuracy = ncm_accuracy(&model, &base_val, |c| {
            base_classes.binary_search(&c).is_ok()
        })?;

        let gap = overfit_gap(&trajectory.train_acc, &trajectory.val_acc)?;
        records.push(SessionRecord {
            index: session.index,
            classes: session.classes.clone(),
            epochs: trajectory.epochs,
            train_acc: trajectory.train_acc,
            val_acc: trajectory.val_acc,
            gap: gap.gap,
            final_loss: trajectory.final_loss,
            accuracy,
            base_accuracy,
            span_residual: model
                .backbone
                .layers()
                .iter()
                .map(|l| l.span_residual())
                .collect(),
            frozen_state: after,
        });
    }

    let accuracies: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let metrics = compute_metrics(&accuracies)?;
    let report = ExperimentReport {
        seed,
        kind,
        rank: config.backbone.rank,
        a_avg: metrics.a_avg,
        pd: metrics.pd,
        final_gap: final_gap(&records),
        trainable_params: model.backbone.trainable_len(),
        stored_params: stored_params(&config.backbone, stream.len())?,
        stream_digest: stream_digest(&stream),
        accuracies,
        sessions: records,
        wall_time: started.elapsed(),
    };
    Ok((report, model))
}

/// One report per configured seed, run in parallel and returned in seed order.
pub fn run_seeds(config: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .par_iter()
        .map(|&s| run_experiment(config, s))
        .collect()
}

fn final_gap(records: &[SessionRecord]) -> Option<f64> {
    let last = |r: &SessionRecord| r.gap.last().copied();
    let incremental: Vec<f64> = records.iter().skip(1).filter_map(last).collect();
    if !incremental.is_empty() {
        return Some(incremental.iter().sum::<f64>() / incremental.len() as f64);
    }
    records.first().and_then(last)
}

fn stored_params(config: &BackboneConfig, sessions: usize) -> Result<usize> {
    config
        .layer_shapes
        .iter()
        .enumerate()
        .map(|(i, &shape)| param_count(config.layer_kind(i), shape, config.rank, sessions))
        .sum()
}

/// Frozen parts must be bit-identical after a session; the session may only
/// append its own task.
fn check_frozen(session: usize, before: &[FrozenState], after: &[FrozenState]) -> Result<()> {
    for (i, (b, a)) in before.iter().zip(after).enumerate() {
        if b.basis != a.basis || !a.tasks.starts_with(&b.tasks) {
            return Err(Error::Invariant(format!(
                "frozen state of layer {i} changed during session {session}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
struct Trajectory {
    epochs: Vec<usize>,
    train_acc: Vec<f64>,
    val_acc: Vec<f64>,
    final_loss: Option<f64>,
}

/// Adam on the session's cross-entropy over its own classes, updating the
/// current adapter parameters of every layer and the head rows of those
/// classes. Optimizer state starts fresh each session.
fn train_session(
    model: &mut Model,
    session: &SessionDataset,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Trajectory> {
    let classes = &session.classes;
    let dim = model.backbone.output_dim();
    for &c in classes {
        model.head.ensure_class(c, dim);
    }
    let layer_lens: Vec<usize> = model
        .backbone
        .layers()
        .iter()
        .map(|l| l.trainable_len())
        .collect();
    let total = layer_lens.iter().sum::<usize>() + classes.len() * dim;
    let mut adam = Adam::new(total, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_SHUFFLE));
    rng.set_stream(session.index as u64);

    let epochs = config.epochs(session.index);
    let mut order: Vec<usize> = (0..session.train.len()).collect();
    let mut trajectory = Trajectory::default();
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &session.train[i]).collect();
            let grads = model.loss_and_gradients(&batch, classes)?;
            loss_sum += grads.loss * batch.len() as f64;

            let mut params = Vec::with_capacity(total);
            let mut flat = Vec::with_capacity(total);
            for (layer, g) in model.backbone.layers().iter().zip(&grads.layers) {
                params.extend(layer.trainable_params());
                flat.extend_from_slice(g);
            }
            params.extend(model.head.params_for(classes)?);
            flat.extend_from_slice(grads.head.data());
            adam.step(&mut params, &flat)?;

            let mut offset = 0;
            for (i, &len) in layer_lens.iter().enumerate() {
                if len > 0 {
                    let slice = &params[offset..offset + len];
                    model
                        .backbone
                        .update_layer(i, |l| l.set_trainable_params(slice))?;
                }
                offset += len;
            }
            model.head.set_params_for(classes, &params[offset..])?;
        }
        if epoch == epochs {
            trajectory.final_loss = Some(loss_sum / session.train.len().max(1) as f64);
        }
        if epoch % config.eval_every == 0 || epoch == epochs {
            trajectory.epochs.push(epoch);
            trajectory
                .train_acc
                .push(head_accuracy(model, &session.train, classes)?);
            trajectory
                .val_acc
                .push(head_accuracy(model, &session.val, classes)?);
        }
    }
    Ok(trajectory)
}

fn embeddings<'a>(
    model: &Model,
    samples: impl ExactSizeIterator<Item = &'a Sample>,
) -> Result<Matrix> {
    let n = samples.len();
    let d = model.backbone.input_dim();
    let mut x = Matrix::zeros(n.max(1), d);
    for (i, s) in samples.enumerate() {
        if s.features.len() != d {
            return Err(Error::Shape(format!(
                "sample of dimension {} for backbone expecting {d}",
                s.features.len()
            )));
        }
        x.row_mut(i).copy_from_slice(&s.features);
    }
    let cache = model.backbone.forward_batch(&x)?;
    Ok(cache.embeddings().clone())
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Accuracy of the training head's argmax over `classes` (ties to the
/// first listed class).
fn head_accuracy(model: &Model, samples: &[Sample], classes: &[usize]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let head = model.head.matrix_for(classes)?;
    let logits = embeddings(model, samples.iter())?.matmul_t(&head)?;
    let correct = samples
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            let row = logits.row(*i);
            let best = (1..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            classes[best] == s.label
        })
        .count();
    Ok(percent(correct, samples.len()))
}

/// NCM accuracy over `samples`, choosing only among classes accepted by `keep`.
fn ncm_accuracy(model: &Model, samples: &[&Sample], keep: impl Fn(usize) -> bool) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let emb = embeddings(model, samples.iter().copied())?;
    let mut correct = 0;
    for (i, s) in samples.iter().enumerate() {
        if model.ncm.classify_among(emb.row(i), &keep)? == s.label {
            correct += 1;
        }
    }
    Ok(percent(correct, samples.len()))
}
