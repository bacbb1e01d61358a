//! The quality/quantity sweep: independent cells executed on a worker pool,
//! merged deterministically by cell key.

use crate::config::FileConfig;
use crate::runner::{
    baseline_path, execute_baseline, execute_run, load_pretrained, prepare_data, record_path,
    write_record,
};
use adaptsim_core::harness::primary_metric;
use adaptsim_core::losses::LossKind;
use adaptsim_core::model::ModelState;
use adaptsim_core::scenario::{LabeledDataset, ScenarioKind};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// The sweep axes.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub qualities: Vec<u32>,
    pub quantities: Vec<u32>,
    pub scenarios: Vec<ScenarioKind>,
    pub losses: Vec<LossKind>,
    pub repeats: u32,
    pub base_seed: u64,
}

impl GridSpec {
    pub fn from_config(cfg: &FileConfig) -> Result<Self> {
        let mut quantities = cfg.grid.quantities.clone();
        if cfg.grid.include_quantity_zero && !quantities.contains(&0) {
            quantities.insert(0, 0);
        }
        let spec = GridSpec {
            qualities: cfg.grid.qualities.clone(),
            quantities,
            scenarios: cfg.scenario_kinds()?,
            losses: cfg.loss_kinds()?,
            repeats: cfg.grid.repeats,
            base_seed: cfg.grid.base_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qualities.is_empty()
            || self.quantities.is_empty()
            || self.scenarios.is_empty()
            || self.losses.is_empty()
        {
            bail!("grid axes must be nonempty");
        }
        if self.repeats == 0 {
            bail!("repeats must be >= 1");
        }
        for &v in self.qualities.iter().chain(&self.quantities) {
            if v > 100 {
                bail!("grid percentages must lie in [0, 100], got {v}");
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.base_seed + r).collect()
    }
}

/// Primary metric (percent) of one repeat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetric {
    pub seed: u64,
    pub metric: f64,
}

/// Aggregated outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCellResult {
    pub scenario: String,
    pub loss: String,
    pub quality: u32,
    pub quantity: u32,
    pub per_seed: Vec<SeedMetric>,
    /// Arithmetic mean of the per-seed primary metric, in percent.
    pub mean_metric: f64,
}

/// Source-only reference for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBaseline {
    pub scenario: String,
    pub per_seed: Vec<SeedMetric>,
    pub mean_metric: f64,
}

/// Everything a sweep produces besides the per-run record files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub cells: Vec<GridCellResult>,
    pub baselines: Vec<ScenarioBaseline>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Run the full sweep. Cells are independent; `threads` sizes the worker
/// pool. Results merge by (scenario, loss, quality, quantity) key, so the
/// outcome does not depend on execution order.
pub fn run_grid(
    cfg: &FileConfig,
    spec: &GridSpec,
    out_dir: &Path,
    threads: usize,
) -> Result<GridOutcome> {
    spec.validate()?;
    let seeds = spec.seeds();

    // Load every checkpoint and build every target stream up front; a cell
    // only clones from here.
    let mut contexts: BTreeMap<(ScenarioKind, u64), (ModelState, LabeledDataset)> =
        BTreeMap::new();
    for &kind in &spec.scenarios {
        for &seed in &seeds {
            let state = load_pretrained(out_dir, kind, seed)?;
            let data = prepare_data(cfg, kind, seed)?;
            if data.num_known != state.config.num_known_classes {
                bail!(
                    "checkpoint for {} seed {seed} was trained with {} known classes, \
                     current config implies {}; re-run pretrain",
                    kind.name(),
                    state.config.num_known_classes,
                    data.num_known
                );
            }
            contexts.insert((kind, seed), (state, data.target));
        }
    }

    // Baselines per (scenario, seed).
    let mut baselines = Vec::new();
    for &kind in &spec.scenarios {
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let (state, target) = &contexts[&(kind, seed)];
            let run_cfg = cfg.run_config(spec.losses[0], 0.0, 0.0, seed)?;
            let record = execute_baseline(kind, &run_cfg, state, target)?;
            write_record(&baseline_path(out_dir, kind, seed), &record)?;
            per_seed.push(SeedMetric {
                seed,
                metric: primary_metric(kind, &record.metrics) * 100.0,
            });
        }
        let mean_metric = mean(&per_seed.iter().map(|s| s.metric).collect::<Vec<_>>());
        baselines.push(ScenarioBaseline {
            scenario: kind.name().to_string(),
            per_seed,
            mean_metric,
        });
    }

    // One task per (cell, seed).
    let mut tasks = Vec::new();
    for &kind in &spec.scenarios {
        for &loss in &spec.losses {
            for &quality in &spec.qualities {
                for &quantity in &spec.quantities {
                    for &seed in &seeds {
                        tasks.push((kind, loss, quality, quantity, seed));
                    }
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building worker pool")?;
    let results: Result<Vec<_>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(kind, loss, quality, quantity, seed)| {
                let (state, target) = &contexts[&(kind, seed)];
                let run_cfg =
                    cfg.run_config(loss, quality as f64, quantity as f64, seed)?;
                let record = execute_run(
                    kind,
                    &run_cfg,
                    state.clone(),
                    target,
                    quality as f64,
                    quantity as f64,
                    loss,
                )?;
                write_record(
                    &record_path(out_dir, kind, loss, quality, quantity, seed),
                    &record,
                )?;
                let metric = primary_metric(kind, &record.metrics) * 100.0;
                Ok((kind, loss, quality, quantity, seed, metric))
            })
            .collect()
    });
    let results = results?;

    // Deterministic merge by key.
    let mut grouped: BTreeMap<(usize, usize, u32, u32), Vec<SeedMetric>> = BTreeMap::new();
    let scenario_pos = |k: ScenarioKind| spec.scenarios.iter().position(|&s| s == k).unwrap();
    let loss_pos = |l: LossKind| spec.losses.iter().position(|&x| x == l).unwrap();
    for (kind, loss, quality, quantity, seed, metric) in results {
        grouped
            .entry((scenario_pos(kind), loss_pos(loss), quality, quantity))
            .or_default()
            .push(SeedMetric { seed, metric });
    }
    let mut cells = Vec::new();
    for ((si, li, quality, quantity), mut per_seed) in grouped {
        per_seed.sort_by_key(|s| s.seed);
        let mean_metric = mean(&per_seed.iter().map(|s| s.metric).collect::<Vec<_>>());
        cells.push(GridCellResult {
            scenario: spec.scenarios[si].name().to_string(),
            loss: spec.losses[li].name().to_string(),
            quality,
            quantity,
            per_seed,
            mean_metric,
        });
    }

    let outcome = GridOutcome { cells, baselines };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("grid_cells.json"),
        serde_json::to_string_pretty(&outcome).expect("outcome serializes"),
    )?;
    Ok(outcome)
}

/// Rebuild a [`GridOutcome`] from the per-run records on disk (the `report`
/// command's input).
pub fn load_outcome_from_records(out_dir: &Path) -> Result<GridOutcome> {
    use adaptsim_core::harness::RunRecord;

    let runs_dir = out_dir.join("runs");
    if !runs_dir.is_dir() {
        bail!("no run records under {}; run `adaptsim grid` first", runs_dir.display());
    }
    let mut grouped: BTreeMap<(String, String, u32, u32), Vec<SeedMetric>> = BTreeMap::new();
    let mut paths: Vec<_> = std::fs::read_dir(&runs_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.sort();
    for path in paths {
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let record = RunRecord::from_json(&std::fs::read_to_string(&path)?)
            .with_context(|| format!("reading {}", path.display()))?;
        let kind = ScenarioKind::parse(&record.scenario)?;
        grouped
            .entry((
                record.scenario.clone(),
                record.loss.clone(),
                record.quality as u32,
                record.quantity as u32,
            ))
            .or_default()
            .push(SeedMetric {
                seed: record.seed,
                metric: primary_metric(kind, &record.metrics) * 100.0,
            });
    }
    let mut cells = Vec::new();
    for ((scenario, loss, quality, quantity), mut per_seed) in grouped {
        per_seed.sort_by_key(|s| s.seed);
        let mean_metric = mean(&per_seed.iter().map(|s| s.metric).collect::<Vec<_>>());
        cells.push(GridCellResult {
            scenario,
            loss,
            quality,
            quantity,
            per_seed,
            mean_metric,
        });
    }

    let baselines_dir = out_dir.join("baselines");
    let mut grouped_base: BTreeMap<String, Vec<SeedMetric>> = BTreeMap::new();
    if baselines_dir.is_dir() {
        let mut paths: Vec<_> = std::fs::read_dir(&baselines_dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let record = RunRecord::from_json(&std::fs::read_to_string(&path)?)?;
            let kind = ScenarioKind::parse(&record.scenario)?;
            grouped_base
                .entry(record.scenario.clone())
                .or_default()
                .push(SeedMetric {
                    seed: record.seed,
                    metric: primary_metric(kind, &record.metrics) * 100.0,
                });
        }
    }
    let mut baselines = Vec::new();
    for (scenario, mut per_seed) in grouped_base {
        per_seed.sort_by_key(|s| s.seed);
        let mean_metric = mean(&per_seed.iter().map(|s| s.metric).collect::<Vec<_>>());
        baselines.push(ScenarioBaseline {
            scenario,
            per_seed,
            mean_metric,
        });
    }
    Ok(GridOutcome { cells, baselines })
}
