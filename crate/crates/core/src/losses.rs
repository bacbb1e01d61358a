//! The two adaptation objectives: a prototype contrastive loss paired with a
//! known/unknown separation term, and cross-entropy with uniform target
//! vectors for unknown pseudo-labels. All gradients are analytic.

use crate::error::{Error, Result};
use crate::numerics::{normalized_entropy, Matrix, ProbVector, PROB_CLAMP};
use crate::plsim::{Label, PseudoLabelAssignment};

/// Which objective drives adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    CrossEntropy,
}

impl LossKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "contrastive" => Ok(LossKind::Contrastive),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::InvalidInput(format!(
                "unknown loss '{other}' (expected 'contrastive' or 'cross_entropy')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

/// Which side of the combined objective the balancing factor scales.
/// The reference method names only a "balancing factor"; both readings are
/// supported and selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaTarget {
    /// L = lambda * L_con + L_sep.
    Contrastive,
    /// L = L_con + lambda * L_sep.
    Separation,
}

impl LambdaTarget {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "contrastive" => Ok(LambdaTarget::Contrastive),
            "separation" => Ok(LambdaTarget::Separation),
            other => Err(Error::InvalidInput(format!(
                "unknown lambda target '{other}' (expected 'contrastive' or 'separation')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LambdaTarget::Contrastive => "contrastive",
            LambdaTarget::Separation => "separation",
        }
    }
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub kind: LossKind,
    pub temperature: f64,
    /// The balancing factor between the contrastive and separation terms.
    pub lambda_balance: f64,
    /// Which term `lambda_balance` scales.
    pub lambda_target: LambdaTarget,
    pub prototype_momentum: f64,
    /// Maintain a prototype for unknown pseudo-labels as well.
    pub unknown_prototype: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Contrastive,
            temperature: 0.1,
            lambda_balance: 0.01,
            lambda_target: LambdaTarget::Contrastive,
            prototype_momentum: 0.9,
            unknown_prototype: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidInput("temperature must be > 0".into()));
        }
        if !(self.lambda_balance >= 0.0) {
            return Err(Error::InvalidInput("lambda_balance must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.prototype_momentum) {
            return Err(Error::InvalidInput("prototype_momentum must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One unit-norm prototype per known class plus one for unknown, each with an
/// initialized flag. Uninitialized slots take no part in any computation.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    protos: Matrix,
    initialized: Vec<bool>,
    num_known: usize,
}

impl PrototypeBank {
    pub fn new(num_known: usize, dim: usize) -> Self {
        PrototypeBank {
            protos: Matrix::zeros(num_known + 1, dim),
            initialized: vec![false; num_known + 1],
            num_known,
        }
    }

    pub fn num_known(&self) -> usize {
        self.num_known
    }

    pub fn dim(&self) -> usize {
        self.protos.cols()
    }

    fn slot(&self, label: Label) -> usize {
        match label {
            Label::Known(c) => c,
            Label::Unknown => self.num_known,
        }
    }

    pub fn is_initialized(&self, label: Label) -> bool {
        self.initialized[self.slot(label)]
    }

    /// Prototype vector for `label` if it has been initialized.
    pub fn prototype(&self, label: Label) -> Option<&[f64]> {
        let slot = self.slot(label);
        self.initialized[slot].then(|| self.protos.row(slot))
    }

    /// Slots that currently hold a prototype, in slot order.
    fn initialized_slots(&self) -> Vec<usize> {
        (0..self.initialized.len())
            .filter(|&s| self.initialized[s])
            .collect()
    }

    /// Force a prototype value (normalized). Test and setup helper.
    pub fn set_prototype(&mut self, label: Label, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim() {
            return Err(Error::Shape(format!(
                "prototype of length {}, bank dimension {}",
                vector.len(),
                self.dim()
            )));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidInput("prototype must have nonzero norm".into()));
        }
        let slot = self.slot(label);
        for (dst, &src) in self.protos.row_mut(slot).iter_mut().zip(vector) {
            *dst = src / norm;
        }
        self.initialized[slot] = true;
        Ok(())
    }
}

/// Result of the contrastive term.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// Gradient w.r.t. the (normalized) projections, full batch shape.
    pub grad_projections: Matrix,
    /// Samples that actually entered the loss; 0 signals an empty contribution.
    pub contributing: usize,
}

/// Sample-vs-prototype softmax contrast at temperature T, averaged over the
/// contributing samples. Prototypes are constants for the gradient. Selected
/// samples whose pseudo-label has no initialized prototype are skipped.
pub fn contrastive_loss(
    projections: &Matrix,
    assignments: &[PseudoLabelAssignment],
    bank: &PrototypeBank,
    cfg: &LossConfig,
) -> Result<ContrastiveOutput> {
    cfg.validate()?;
    if projections.rows() != assignments.len() {
        return Err(Error::Shape(format!(
            "{} projection rows but {} assignments",
            projections.rows(),
            assignments.len()
        )));
    }
    if projections.cols() != bank.dim() {
        return Err(Error::Shape(format!(
            "projections have dimension {}, bank has {}",
            projections.cols(),
            bank.dim()
        )));
    }
    let slots = bank.initialized_slots();
    let mut grad = Matrix::zeros(projections.rows(), projections.cols());
    let mut contributors: Vec<(usize, usize)> = Vec::new(); // (row, target slot)
    for a in assignments {
        let Some(label) = a.label else { continue };
        if label == Label::Unknown && !cfg.unknown_prototype {
            continue;
        }
        if !bank.is_initialized(label) {
            continue;
        }
        contributors.push((a.sample_index, bank.slot(label)));
    }
    if contributors.is_empty() {
        return Ok(ContrastiveOutput {
            loss: 0.0,
            grad_projections: grad,
            contributing: 0,
        });
    }

    let inv_n = 1.0 / contributors.len() as f64;
    let mut loss = 0.0;
    for &(row, target_slot) in &contributors {
        let z = projections.row(row);
        // Stable log-softmax over the initialized prototypes.
        let scores: Vec<f64> = slots
            .iter()
            .map(|&s| {
                let mu = bank.protos.row(s);
                z.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() / cfg.temperature
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let target_pos = slots.iter().position(|&s| s == target_slot).expect("target initialized");
        loss += -(scores[target_pos] - max - sum.ln());

        let grow = grad.row_mut(row);
        for (pos, &s) in slots.iter().enumerate() {
            let softmax = exps[pos] / sum;
            let weight = (softmax - if pos == target_pos { 1.0 } else { 0.0 })
                * inv_n
                / cfg.temperature;
            for (g, &m) in grow.iter_mut().zip(bank.protos.row(s)) {
                *g += weight * m;
            }
        }
    }

    Ok(ContrastiveOutput {
        loss: loss * inv_n,
        grad_projections: grad,
        contributing: contributors.len(),
    })
}

/// Result of the separation term.
#[derive(Debug, Clone)]
pub struct SeparationOutput {
    pub loss: f64,
    /// Gradient w.r.t. the logits, full batch shape.
    pub grad_logits: Matrix,
    pub known_group: usize,
    pub unknown_group: usize,
}

/// Gradient of the (clamped) normalized entropy w.r.t. the logits of `p`,
/// scaled by `factor`, accumulated into `out`.
fn accumulate_entropy_grad(p: &ProbVector, factor: f64, out: &mut [f64]) {
    let probs = p.as_slice();
    let inv_log_k = 1.0 / (probs.len() as f64).ln();
    // d(p ln p~)/dp is ln(p~) + 1 above the clamp and ln(clamp) below it.
    let u: Vec<f64> = probs
        .iter()
        .map(|&pc| pc.max(PROB_CLAMP).ln() + if pc > PROB_CLAMP { 1.0 } else { 0.0 })
        .collect();
    let mean_u: f64 = u.iter().zip(probs).map(|(a, b)| a * b).sum();
    for ((o, &pj), &uj) in out.iter_mut().zip(probs).zip(&u) {
        *o += factor * (-inv_log_k) * pj * (uj - mean_u);
    }
}

/// Entropy-based separation: pull known-pseudo-labeled predictions toward
/// low entropy and unknown-pseudo-labeled ones toward high entropy.
/// L = mean_known I(p) + mean_unknown (1 - I(p)); an empty group contributes 0.
pub fn separation_loss(
    probs: &[ProbVector],
    assignments: &[PseudoLabelAssignment],
) -> Result<SeparationOutput> {
    if probs.len() != assignments.len() {
        return Err(Error::Shape(format!(
            "{} probability vectors but {} assignments",
            probs.len(),
            assignments.len()
        )));
    }
    let num_classes = probs.first().map(|p| p.num_classes()).unwrap_or(2);
    let mut known: Vec<usize> = Vec::new();
    let mut unknown: Vec<usize> = Vec::new();
    for a in assignments {
        match a.label {
            Some(Label::Known(_)) => known.push(a.sample_index),
            Some(Label::Unknown) => unknown.push(a.sample_index),
            None => {}
        }
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(probs.len(), num_classes);
    if !known.is_empty() {
        let inv = 1.0 / known.len() as f64;
        for &i in &known {
            loss += normalized_entropy(&probs[i]) * inv;
            accumulate_entropy_grad(&probs[i], inv, grad.row_mut(i));
        }
    }
    if !unknown.is_empty() {
        let inv = 1.0 / unknown.len() as f64;
        for &i in &unknown {
            loss += (1.0 - normalized_entropy(&probs[i])) * inv;
            accumulate_entropy_grad(&probs[i], -inv, grad.row_mut(i));
        }
    }
    Ok(SeparationOutput {
        loss,
        grad_logits: grad,
        known_group: known.len(),
        unknown_group: unknown.len(),
    })
}

/// Combined contrastive objective and its per-head gradients.
#[derive(Debug, Clone)]
pub struct CombinedOutput {
    /// The weighted sum of the two terms per `lambda_target`.
    pub loss: f64,
    pub contrastive: f64,
    pub separation: f64,
    /// Separation gradient, routed to the classifier head.
    pub grad_logits: Matrix,
    /// Contrastive gradient, routed to the projection head.
    pub grad_projections: Matrix,
    pub contributing: usize,
}

/// Contrastive plus separation term, with `lambda_balance` scaling the side
/// chosen by `lambda_target` and gradients split across the two heads.
pub fn combined_contrastive_objective(
    projections: &Matrix,
    probs: &[ProbVector],
    assignments: &[PseudoLabelAssignment],
    bank: &PrototypeBank,
    cfg: &LossConfig,
) -> Result<CombinedOutput> {
    let con = contrastive_loss(projections, assignments, bank, cfg)?;
    let sep = separation_loss(probs, assignments)?;
    let (con_weight, sep_weight) = match cfg.lambda_target {
        LambdaTarget::Contrastive => (cfg.lambda_balance, 1.0),
        LambdaTarget::Separation => (1.0, cfg.lambda_balance),
    };
    Ok(CombinedOutput {
        loss: con_weight * con.loss + sep_weight * sep.loss,
        contrastive: con.loss,
        separation: sep.loss,
        grad_logits: sep.grad_logits.scale(sep_weight),
        grad_projections: con.grad_projections.scale(con_weight),
        contributing: con.contributing,
    })
}

/// Result of the cross-entropy objective.
#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub loss: f64,
    /// Gradient w.r.t. the logits, full batch shape: (p - target) / n_selected.
    pub grad_logits: Matrix,
    /// Selected samples; 0 signals an empty contribution.
    pub contributing: usize,
}

/// Cross-entropy against the pseudo-labels; unknown pseudo-labels use a
/// uniform target over the known classes.
pub fn cross_entropy_loss(
    probs: &[ProbVector],
    assignments: &[PseudoLabelAssignment],
) -> Result<CrossEntropyOutput> {
    if probs.len() != assignments.len() {
        return Err(Error::Shape(format!(
            "{} probability vectors but {} assignments",
            probs.len(),
            assignments.len()
        )));
    }
    let num_classes = probs.first().map(|p| p.num_classes()).unwrap_or(2);
    let selected: Vec<&PseudoLabelAssignment> =
        assignments.iter().filter(|a| a.selected).collect();
    let mut grad = Matrix::zeros(probs.len(), num_classes);
    if selected.is_empty() {
        return Ok(CrossEntropyOutput {
            loss: 0.0,
            grad_logits: grad,
            contributing: 0,
        });
    }
    let inv_n = 1.0 / selected.len() as f64;
    let mut loss = 0.0;
    for a in &selected {
        let i = a.sample_index;
        let p = probs[i].as_slice();
        if p.len() != num_classes {
            return Err(Error::Shape("inconsistent class counts across the batch".into()));
        }
        let label = a.label.expect("selected samples carry a label");
        let uniform = 1.0 / num_classes as f64;
        let g = grad.row_mut(i);
        match label {
            Label::Known(c) => {
                if c >= num_classes {
                    return Err(Error::InvalidInput(format!(
                        "pseudo-label {c} outside the {num_classes} known classes"
                    )));
                }
                loss += -p[c].max(PROB_CLAMP).ln() * inv_n;
                for (j, (gj, &pj)) in g.iter_mut().zip(p).enumerate() {
                    *gj = (pj - if j == c { 1.0 } else { 0.0 }) * inv_n;
                }
            }
            Label::Unknown => {
                let mut sample_loss = 0.0;
                for &pj in p {
                    sample_loss -= uniform * pj.max(PROB_CLAMP).ln();
                }
                loss += sample_loss * inv_n;
                for (gj, &pj) in g.iter_mut().zip(p) {
                    *gj = (pj - uniform) * inv_n;
                }
            }
        }
    }
    Ok(CrossEntropyOutput {
        loss,
        grad_logits: grad,
        contributing: selected.len(),
    })
}

/// Class-wise EMA prototype update from this batch's pseudo-labeled
/// projections. First observation of a class adopts the normalized batch
/// mean; later batches blend with momentum and renormalize. A zero-norm
/// batch mean skips the update for that class.
pub fn update_prototypes(
    bank: &mut PrototypeBank,
    projections: &Matrix,
    assignments: &[PseudoLabelAssignment],
    cfg: &LossConfig,
) -> Result<()> {
    cfg.validate()?;
    if projections.rows() != assignments.len() {
        return Err(Error::Shape(format!(
            "{} projection rows but {} assignments",
            projections.rows(),
            assignments.len()
        )));
    }
    if projections.cols() != bank.dim() {
        return Err(Error::Shape(format!(
            "projections have dimension {}, bank has {}",
            projections.cols(),
            bank.dim()
        )));
    }
    let dim = bank.dim();
    let slot_count = bank.num_known + 1;
    let mut sums = vec![0.0; slot_count * dim];
    let mut counts = vec![0usize; slot_count];
    for a in assignments {
        let Some(label) = a.label else { continue };
        if label == Label::Unknown && !cfg.unknown_prototype {
            continue;
        }
        let slot = bank.slot(label);
        counts[slot] += 1;
        for (s, &z) in sums[slot * dim..(slot + 1) * dim]
            .iter_mut()
            .zip(projections.row(a.sample_index))
        {
            *s += z;
        }
    }
    let momentum = cfg.prototype_momentum;
    for slot in 0..slot_count {
        if counts[slot] == 0 {
            continue;
        }
        let mean: Vec<f64> = sums[slot * dim..(slot + 1) * dim]
            .iter()
            .map(|s| s / counts[slot] as f64)
            .collect();
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        if !bank.initialized[slot] {
            for (dst, &m) in bank.protos.row_mut(slot).iter_mut().zip(&mean) {
                *dst = m / norm;
            }
            bank.initialized[slot] = true;
        } else {
            let mut blended: Vec<f64> = bank
                .protos
                .row(slot)
                .iter()
                .zip(&mean)
                .map(|(&old, &m)| momentum * old + (1.0 - momentum) * (m / norm))
                .collect();
            let bnorm = blended.iter().map(|v| v * v).sum::<f64>().sqrt();
            if bnorm < 1e-12 {
                continue;
            }
            for v in &mut blended {
                *v /= bnorm;
            }
            bank.protos.row_mut(slot).copy_from_slice(&blended);
        }
    }
    Ok(())
}
