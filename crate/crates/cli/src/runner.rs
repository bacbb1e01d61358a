//! Deterministic construction of scenarios, datasets, and models for a
//! (scenario, seed) pair, plus execution of single runs and baselines.
//!
//! Every random draw comes from a stream derived from the run seed, so a
//! pair fully determines its splits, data, and initial model.

use crate::config::FileConfig;
use adaptsim_core::harness::{evaluate_source_only, run_stream, RunConfig, RunRecord};
use adaptsim_core::losses::LossKind;
use adaptsim_core::model::{
    init_model, load_checkpoint, pretrain_source, save_checkpoint, ModelState,
};
use adaptsim_core::numerics::RandomSource;
use adaptsim_core::plsim::Label;
use adaptsim_core::scenario::{
    generate_domains, load_feature_file, make_splits, DomainTag, LabeledDataset, ScenarioKind,
    ScenarioSpec,
};
use anyhow::{bail, Context, Result};
use std::path::{Path, PathBuf};

const STREAM_SPLIT: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_PRETRAIN: u64 = 4;

/// Class split for a (scenario, seed) pair.
pub fn scenario_for(cfg: &FileConfig, kind: ScenarioKind, seed: u64) -> Result<ScenarioSpec> {
    let mut rng = RandomSource::new(seed).derive(STREAM_SPLIT);
    Ok(make_splits(kind, cfg.data.num_classes, &mut rng)?)
}

/// Datasets plus the known-class count backing one run.
pub struct PreparedData {
    pub spec: Option<ScenarioSpec>,
    pub num_known: usize,
    pub source: LabeledDataset,
    pub target: LabeledDataset,
}

/// Build (or load) the source and target data for a (scenario, seed) pair.
pub fn prepare_data(cfg: &FileConfig, kind: ScenarioKind, seed: u64) -> Result<PreparedData> {
    if let Some((source_file, target_file, num_known)) = cfg.external_files()? {
        let mut source = load_feature_file(&source_file, num_known, Some(cfg.model.input_dim))
            .with_context(|| format!("loading {}", source_file.display()))?;
        source.domain = DomainTag::Source;
        let target = load_feature_file(&target_file, num_known, Some(cfg.model.input_dim))
            .with_context(|| format!("loading {}", target_file.display()))?;
        return Ok(PreparedData {
            spec: None,
            num_known,
            source,
            target,
        });
    }
    let spec = scenario_for(cfg, kind, seed)?;
    let mut rng = RandomSource::new(seed).derive(STREAM_DATA);
    let (source, target) = generate_domains(&spec, &cfg.shift_config(), &cfg.sizes(), &mut rng)?;
    Ok(PreparedData {
        num_known: spec.num_known(),
        spec: Some(spec),
        source,
        target,
    })
}

/// Checkpoint location for a (scenario, seed) pair under `out_dir`.
pub fn checkpoint_path(out_dir: &Path, kind: ScenarioKind, seed: u64) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("{}_s{}.ckpt", kind.name(), seed))
}

/// Ad-hoc single-run record location under `out_dir`; kept apart from the
/// grid's `runs/` directory so `report` always sees a complete rectangle.
pub fn adhoc_record_path(
    out_dir: &Path,
    kind: ScenarioKind,
    loss: LossKind,
    quality: u32,
    quantity: u32,
    seed: u64,
) -> PathBuf {
    out_dir.join("adhoc").join(format!(
        "{}_{}_q{:03}_n{:03}_s{}.json",
        kind.name(),
        loss.name(),
        quality,
        quantity,
        seed
    ))
}

/// Per-run record location under `out_dir`.
pub fn record_path(
    out_dir: &Path,
    kind: ScenarioKind,
    loss: LossKind,
    quality: u32,
    quantity: u32,
    seed: u64,
) -> PathBuf {
    out_dir.join("runs").join(format!(
        "{}_{}_q{:03}_n{:03}_s{}.json",
        kind.name(),
        loss.name(),
        quality,
        quantity,
        seed
    ))
}

/// Baseline record location under `out_dir`.
pub fn baseline_path(out_dir: &Path, kind: ScenarioKind, seed: u64) -> PathBuf {
    out_dir
        .join("baselines")
        .join(format!("{}_s{}.json", kind.name(), seed))
}

/// Pretrain the source model for one (scenario, seed) pair and write its
/// checkpoint. Returns the checkpoint path and the final-epoch loss.
pub fn pretrain_scenario(
    cfg: &FileConfig,
    kind: ScenarioKind,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, f64)> {
    let data = prepare_data(cfg, kind, seed)?;
    let model_cfg = cfg.model_config(data.num_known);
    let mut state = init_model(&model_cfg, &mut RandomSource::new(seed).derive(STREAM_INIT))?;
    let labels: Vec<usize> = data
        .source
        .labels
        .iter()
        .map(|l| match l {
            Label::Known(c) => Ok(*c),
            Label::Unknown => bail!("source data contains unknown labels"),
        })
        .collect::<Result<_>>()?;
    let final_loss = pretrain_source(
        &mut state,
        &data.source.features,
        &labels,
        &cfg.optim_config(),
        &cfg.pretrain_config(),
        &mut RandomSource::new(seed).derive(STREAM_PRETRAIN),
    )?;
    let path = checkpoint_path(out_dir, kind, seed);
    std::fs::create_dir_all(path.parent().expect("checkpoint dir"))?;
    save_checkpoint(&state, &path)?;
    Ok((path, final_loss))
}

/// Load the pretrained model for a (scenario, seed) pair, with an actionable
/// error when the checkpoint is missing.
pub fn load_pretrained(out_dir: &Path, kind: ScenarioKind, seed: u64) -> Result<ModelState> {
    let path = checkpoint_path(out_dir, kind, seed);
    if !path.exists() {
        bail!(
            "missing checkpoint {}; run `adaptsim pretrain --scenario {} --seed {} --out-dir {}` \
             (with the same config) first",
            path.display(),
            kind.name(),
            seed,
            out_dir.display()
        );
    }
    Ok(load_checkpoint(&path)?)
}

/// Stream one adaptation run and package the record.
pub fn execute_run(
    kind: ScenarioKind,
    run_cfg: &RunConfig,
    mut state: ModelState,
    target: &LabeledDataset,
    quality: f64,
    quantity: f64,
    loss: LossKind,
) -> Result<RunRecord> {
    let metrics = run_stream(&mut state, target, run_cfg)?;
    Ok(RunRecord {
        scenario: kind.name().to_string(),
        loss: loss.name().to_string(),
        quality,
        quantity,
        seed: run_cfg.seed,
        eval_timing: run_cfg.eval_timing.name().to_string(),
        metrics,
    })
}

/// Score the unadapted model on the target stream.
pub fn execute_baseline(
    kind: ScenarioKind,
    run_cfg: &RunConfig,
    state: &ModelState,
    target: &LabeledDataset,
) -> Result<RunRecord> {
    let metrics = evaluate_source_only(state, target, run_cfg)?;
    Ok(RunRecord {
        scenario: kind.name().to_string(),
        loss: "source_only".to_string(),
        quality: 0.0,
        quantity: 0.0,
        seed: run_cfg.seed,
        eval_timing: run_cfg.eval_timing.name().to_string(),
        metrics,
    })
}

/// Write a record as pretty JSON, creating parent directories.
pub fn write_record(path: &Path, record: &RunRecord) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, record.to_json())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
