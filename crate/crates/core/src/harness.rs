//! The online adaptation loop: target batches arrive once and in order;
//! every batch gets an unadapted forward pass, simulated pseudo-labels, one
//! optimizer step under the configured loss, and its share of the stream
//! metrics.

use crate::error::{Error, Result};
use crate::losses::{
    combined_contrastive_objective, cross_entropy_loss, update_prototypes, LossConfig, LossKind,
    PrototypeBank,
};
use crate::model::{backward, forward, sgd_step, ModelState, OptimConfig};
use crate::numerics::{normalized_entropy, Matrix, ProbVector};
use crate::plsim::{
    simulate_pseudo_labels, write_debug_csv_header, write_debug_csv_rows, Label, PseudoLabelConfig,
};
use crate::scenario::{LabeledDataset, ScenarioKind};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

/// When stream predictions are recorded relative to the batch update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTiming {
    /// Score the same unadapted forward pass that feeds the simulator.
    PreUpdate,
    /// Re-run the forward pass after the update and score that.
    PostUpdate,
}

impl EvalTiming {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pre_update" => Ok(EvalTiming::PreUpdate),
            "post_update" => Ok(EvalTiming::PostUpdate),
            other => Err(Error::InvalidInput(format!(
                "unknown eval timing '{other}' (expected 'pre_update' or 'post_update')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EvalTiming::PreUpdate => "pre_update",
            EvalTiming::PostUpdate => "post_update",
        }
    }
}

/// Full configuration of one adaptation run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub batch_size: usize,
    pub eval_timing: EvalTiming,
    /// Entropy threshold for rejecting predictions as unknown.
    pub rejection_threshold: f64,
    pub loss: LossConfig,
    pub pseudo: PseudoLabelConfig,
    pub optim: OptimConfig,
    /// Identifies the run; the loop itself draws no randomness.
    pub seed: u64,
    /// Per-sample simulator dump (CSV) when set.
    pub debug_dump: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch_size: 64,
            eval_timing: EvalTiming::PreUpdate,
            rejection_threshold: 0.5,
            loss: LossConfig::default(),
            pseudo: PseudoLabelConfig::default(),
            optim: OptimConfig::default(),
            seed: 0,
            debug_dump: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rejection_threshold) {
            return Err(Error::InvalidInput(format!(
                "rejection_threshold must be in [0, 1], got {}",
                self.rejection_threshold
            )));
        }
        self.loss.validate()?;
        self.pseudo.validate()?;
        self.optim.validate()
    }
}

/// Pseudo-label bookkeeping for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPseudoStats {
    pub selected: usize,
    pub intended_correct: usize,
}

/// Accuracy of one evaluation label over the stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub label: Label,
    pub correct: usize,
    pub total: usize,
}

/// Aggregated scores for one streamed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub n_samples: usize,
    pub n_known: usize,
    pub n_unknown: usize,
    /// Exact-match accuracy over every sample (rejections of known samples
    /// count as errors); the primary PDA metric.
    pub accuracy: f64,
    /// Among true-known samples: predicted exactly their class.
    pub acc_known: f64,
    /// Among true-unknown samples: predicted unknown. Zero when the stream
    /// has no unknown samples.
    pub acc_unknown: f64,
    /// Harmonic mean of `acc_known` and `acc_unknown`; the ODA/OPDA metric.
    pub h_score: f64,
    pub per_class: Vec<PerClassAccuracy>,
    pub per_batch: Vec<BatchPseudoStats>,
}

/// Entropy-threshold prediction: unknown when I(p) >= threshold, otherwise
/// the argmax class (ties to the lowest index).
pub fn predict(p: &ProbVector, threshold: f64) -> Label {
    if normalized_entropy(p) >= threshold {
        Label::Unknown
    } else {
        Label::Known(p.argmax())
    }
}

/// Harmonic mean of the known- and unknown-class accuracies; 0 when both are 0.
pub fn h_score(acc_known: f64, acc_unknown: f64) -> f64 {
    let sum = acc_known + acc_unknown;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * acc_known * acc_unknown / sum
    }
}

/// The metric a scenario is scored by: accuracy for PDA, H-score otherwise.
pub fn primary_metric(kind: ScenarioKind, metrics: &StreamMetrics) -> f64 {
    match kind {
        ScenarioKind::Pda => metrics.accuracy,
        ScenarioKind::Oda | ScenarioKind::Opda => metrics.h_score,
    }
}

/// Stream `target` through `state` once, adapting after each batch.
pub fn run_stream(
    state: &mut ModelState,
    target: &LabeledDataset,
    cfg: &RunConfig,
) -> Result<StreamMetrics> {
    stream_loop(state, target, cfg, true)
}

/// Score the stream with every update disabled; the source-only baseline.
pub fn evaluate_source_only(
    state: &ModelState,
    target: &LabeledDataset,
    cfg: &RunConfig,
) -> Result<StreamMetrics> {
    let mut frozen = state.clone();
    stream_loop(&mut frozen, target, cfg, false)
}

fn stream_loop(
    state: &mut ModelState,
    target: &LabeledDataset,
    cfg: &RunConfig,
    adapt: bool,
) -> Result<StreamMetrics> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::InvalidInput("target stream is empty".into()));
    }
    if target.features.cols() != state.config.input_dim {
        return Err(Error::Shape(format!(
            "target features have dimension {}, model expects {}",
            target.features.cols(),
            state.config.input_dim
        )));
    }
    let num_known = state.config.num_known_classes;
    for label in &target.labels {
        if let Label::Known(c) = label {
            if *c >= num_known {
                return Err(Error::InvalidInput(format!(
                    "target label {c} outside the {num_known} known classes"
                )));
            }
        }
    }

    let mut bank = PrototypeBank::new(num_known, state.config.projection_dim);
    let mut dump = match &cfg.debug_dump {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path)?);
            write_debug_csv_header(&mut out)?;
            Some(out)
        }
        None => None,
    };

    let n = target.len();
    let mut class_correct = vec![0usize; num_known + 1];
    let mut class_total = vec![0usize; num_known + 1];
    let mut exact_correct = 0usize;
    let mut per_batch = Vec::new();

    let mut start = 0;
    while start < n {
        let end = (start + cfg.batch_size).min(n);
        let batch = target.features.slice_rows(start, end);
        let truth = &target.labels[start..end];

        let record = forward(state, &batch)?;
        let assignments = simulate_pseudo_labels(&record.probs, truth, &cfg.pseudo)?;
        let selected = assignments.iter().filter(|a| a.selected).count();
        let intended_correct = assignments.iter().filter(|a| a.intended_correct).count();
        per_batch.push(BatchPseudoStats {
            selected,
            intended_correct,
        });
        if let Some(out) = dump.as_mut() {
            write_debug_csv_rows(out, start, &record.probs, &assignments)?;
        }

        if adapt && selected > 0 {
            match cfg.loss.kind {
                LossKind::Contrastive => {
                    let combined = combined_contrastive_objective(
                        &record.projections,
                        &record.probs,
                        &assignments,
                        &bank,
                        &cfg.loss,
                    )?;
                    let grads = backward(
                        state,
                        &record,
                        &combined.grad_logits,
                        &combined.grad_projections,
                    )?;
                    sgd_step(state, &grads, &cfg.optim)?;
                    update_prototypes(&mut bank, &record.projections, &assignments, &cfg.loss)?;
                }
                LossKind::CrossEntropy => {
                    let ce = cross_entropy_loss(&record.probs, &assignments)?;
                    let zero_proj = Matrix::zeros(batch.rows(), state.config.projection_dim);
                    let grads = backward(state, &record, &ce.grad_logits, &zero_proj)?;
                    sgd_step(state, &grads, &cfg.optim)?;
                }
            }
        }

        let scored_probs: Vec<ProbVector> = match cfg.eval_timing {
            EvalTiming::PreUpdate => record.probs,
            EvalTiming::PostUpdate => forward(state, &batch)?.probs,
        };
        for (p, truth_label) in scored_probs.iter().zip(truth) {
            let predicted = predict(p, cfg.rejection_threshold);
            let slot = match truth_label {
                Label::Known(c) => *c,
                Label::Unknown => num_known,
            };
            class_total[slot] += 1;
            if predicted == *truth_label {
                class_correct[slot] += 1;
                exact_correct += 1;
            }
        }
        start = end;
    }

    let known_total: usize = class_total[..num_known].iter().sum();
    let known_correct: usize = class_correct[..num_known].iter().sum();
    let unknown_total = class_total[num_known];
    let unknown_correct = class_correct[num_known];
    let ratio = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
    let acc_known = ratio(known_correct, known_total);
    let acc_unknown = ratio(unknown_correct, unknown_total);
    let per_class = (0..=num_known)
        .map(|slot| PerClassAccuracy {
            label: if slot == num_known {
                Label::Unknown
            } else {
                Label::Known(slot)
            },
            correct: class_correct[slot],
            total: class_total[slot],
        })
        .collect();
    Ok(StreamMetrics {
        n_samples: n,
        n_known: known_total,
        n_unknown: unknown_total,
        accuracy: ratio(exact_correct, n),
        acc_known,
        acc_unknown,
        h_score: h_score(acc_known, acc_unknown),
        per_class,
        per_batch,
    })
}

/// One run's persisted record: the self-describing text document written
/// next to grid outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub loss: String,
    pub quality: f64,
    pub quantity: f64,
    pub seed: u64,
    pub eval_timing: String,
    pub metrics: StreamMetrics,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("bad run record: {e}")))
    }
}
