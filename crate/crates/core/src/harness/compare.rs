use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{median, run_experiment, ExperimentConfig, ExperimentReport};
use crate::adapters::{param_count, AdapterKind};
use crate::error::{Error, Result};

/// Per-kind summary over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub kind: AdapterKind,
    pub seeds: Vec<u64>,
    pub median_a_avg: f64,
    pub median_pd: f64,
    /// `None` when no seed trained anything (the frozen kind).
    pub median_final_gap: Option<f64>,
    /// Backbone parameters trained per session.
    pub trainable_params: usize,
    /// Per layer: parameters one task adds.
    pub per_task_params: Vec<usize>,
    pub stored_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Every run, ordered by kind then seed.
    pub reports: Vec<ExperimentReport>,
}

impl ComparisonTable {
    pub fn row(&self, kind: AdapterKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn reports_for(&self, kind: AdapterKind) -> impl Iterator<Item = &ExperimentReport> {
        self.reports.iter().filter(move |r| r.kind == kind)
    }
}

/// Runs `config` once per kind and seed. Every kind sees the same stream and
/// the same base weights for a given seed; jobs run in parallel and are
/// aggregated in (kind, seed) order.
pub fn compare_strategies(
    config: &ExperimentConfig,
    kinds: &[AdapterKind],
) -> Result<ComparisonTable> {
    if kinds.is_empty() {
        return Err(Error::Config("no adapter kinds to compare".into()));
    }
    let mut kinds = kinds.to_vec();
    kinds.sort_unstable();
    kinds.dedup();
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let configs: Vec<ExperimentConfig> = kinds.iter().map(|&k| config.with_kind(k)).collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..kinds.len())
        .flat_map(|k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(k, s)| run_experiment(&configs[k], s))
        .collect::<Result<Vec<_>>>()?;

    for s in &seeds {
        let mut digests = reports
            .iter()
            .filter(|r| r.seed == *s)
            .map(|r| &r.stream_digest);
        let first = digests.next();
        if digests.any(|d| Some(d) != first) {
            return Err(Error::Invariant(format!(
                "kinds saw different streams for seed {s}"
            )));
        }
    }

    let rows = kinds
        .iter()
        .zip(&configs)
        .map(|(&kind, c)| {
            let runs: Vec<&ExperimentReport> = reports.iter().filter(|r| r.kind == kind).collect();
            let collect =
                |f: fn(&ExperimentReport) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let gaps: Vec<f64> = runs.iter().filter_map(|r| r.final_gap).collect();
            let per_task_params = c
                .backbone
                .layer_shapes
                .iter()
                .enumerate()
                .map(|(i, &shape)| param_count(c.backbone.layer_kind(i), shape, c.backbone.rank, 1))
                .collect::<Result<Vec<_>>>()?;
            Ok(ComparisonRow {
                kind,
                seeds: seeds.clone(),
                median_a_avg: median(&collect(|r| r.a_avg)).expect("at least one seed"),
                median_pd: median(&collect(|r| r.pd)).expect("at least one seed"),
                median_final_gap: median(&gaps),
                trainable_params: runs[0].trainable_params,
                per_task_params,
                stored_params: runs[0].stored_params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable { rows, reports })
}
