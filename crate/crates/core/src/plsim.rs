//! Pseudo-label simulation with exactly controlled quality and quantity.
//!
//! From an unadapted forward pass, samples are ranked by the distance of
//! their normalized prediction entropy to the nearest extreme. The top q%
//! are selected for adaptation; of those, the a% with the smallest distances
//! receive their correct pseudo-label and the rest are deliberately
//! mislabeled following the model's own confusion pattern.

use crate::error::{Error, Result};
use crate::numerics::{normalized_entropy, ProbVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

/// A class in the known label space or the distinguished unknown value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Known(usize),
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Known(c) => write!(f, "{c}"),
            Label::Unknown => write!(f, "unknown"),
        }
    }
}

/// Simulator knobs. `quantity_q` and `quality_a` are percentages applied
/// per batch; `alpha` scales the adaptive unknown threshold.
#[derive(Debug, Clone, Copy)]
pub struct PseudoLabelConfig {
    pub quantity_q: f64,
    pub quality_a: f64,
    pub alpha: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            quantity_q: 100.0,
            quality_a: 100.0,
            alpha: 1.0,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("quantity_q", self.quantity_q), ("quality_a", self.quality_a)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a percentage in [0, 100], got {v}"
                )));
            }
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-sample outcome of the simulator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelAssignment {
    pub sample_index: usize,
    pub selected: bool,
    /// Present iff selected.
    pub label: Option<Label>,
    /// True iff the assigned label equals the sample's ground-truth
    /// pseudo-label (its known class, or unknown for target-private samples).
    pub intended_correct: bool,
}

/// Round-half-up count for `percent`% of `n`.
pub fn percent_count(percent: f64, n: usize) -> usize {
    ((percent * n as f64) / 100.0 + 0.5).floor() as usize
}

/// Distance of a normalized entropy to its nearest extreme: min(I, 1 - I).
pub fn confidence_distance(entropy: f64) -> f64 {
    let e = entropy.clamp(0.0, 1.0);
    e.min(1.0 - e)
}

/// Indices ranked by ascending (distance, index); compares with a full sort.
fn ranked_indices(distances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len()).collect();
    idx.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    idx
}

/// Select the round(q% * B) samples with the smallest distances.
/// Ties break toward the lower sample index. Returned in ascending-distance order.
pub fn select_for_adaptation(distances: &[f64], quantity_q: f64) -> Vec<usize> {
    let k = percent_count(quantity_q, distances.len());
    let mut ranked = ranked_indices(distances);
    ranked.truncate(k);
    ranked
}

/// Split the selected set into (correct, incorrect) groups: the round(a% * k)
/// selected samples with the smallest distances get their correct label.
pub fn split_by_quality(
    selected: &[usize],
    distances: &[f64],
    quality_a: f64,
) -> (Vec<usize>, Vec<usize>) {
    let m = percent_count(quality_a, selected.len());
    let mut ordered: Vec<usize> = selected.to_vec();
    ordered.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let incorrect = ordered.split_off(m);
    (ordered, incorrect)
}

/// Pick a deliberately wrong pseudo-label for one sample.
///
/// True unknown: the known class with the highest probability. True known
/// class c: the highest-probability class excluding c, demoted to unknown
/// when that probability falls below the adaptive threshold alpha * I(p).
pub fn assign_incorrect_label(p: &ProbVector, true_label: Label, alpha: f64) -> Result<Label> {
    let tau = alpha * normalized_entropy(p);
    match true_label {
        Label::Unknown => Ok(Label::Known(p.argmax())),
        Label::Known(c) => {
            if c >= p.num_classes() {
                return Err(Error::InvalidInput(format!(
                    "true label {c} outside the {} known classes",
                    p.num_classes()
                )));
            }
            let probs = p.as_slice();
            let mut runner_up: Option<usize> = None;
            for (i, &pi) in probs.iter().enumerate() {
                if i == c {
                    continue;
                }
                match runner_up {
                    None => runner_up = Some(i),
                    Some(b) if pi > probs[b] => runner_up = Some(i),
                    _ => {}
                }
            }
            let second = runner_up.ok_or_else(|| {
                Error::InvalidInput(
                    "no incorrect known class exists besides unknown".into(),
                )
            })?;
            if probs[second] < tau {
                Ok(Label::Unknown)
            } else {
                Ok(Label::Known(second))
            }
        }
    }
}

/// Run the full simulation for one batch of unadapted predictions.
///
/// Deterministic: the outcome is a pure function of (probs, truth, cfg).
/// Returns one assignment per sample; unselected samples are marked excluded.
pub fn simulate_pseudo_labels(
    probs: &[ProbVector],
    truth: &[Label],
    cfg: &PseudoLabelConfig,
) -> Result<Vec<PseudoLabelAssignment>> {
    cfg.validate()?;
    if probs.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} probability vectors but {} truth labels",
            probs.len(),
            truth.len()
        )));
    }
    let distances: Vec<f64> = probs
        .iter()
        .map(|p| confidence_distance(normalized_entropy(p)))
        .collect();
    let selected = select_for_adaptation(&distances, cfg.quantity_q);
    let (correct, incorrect) = split_by_quality(&selected, &distances, cfg.quality_a);

    let mut assignments: Vec<PseudoLabelAssignment> = (0..probs.len())
        .map(|i| PseudoLabelAssignment {
            sample_index: i,
            selected: false,
            label: None,
            intended_correct: false,
        })
        .collect();
    for &i in &correct {
        assignments[i].selected = true;
        assignments[i].label = Some(truth[i]);
        assignments[i].intended_correct = true;
    }
    for &i in &incorrect {
        assignments[i].selected = true;
        assignments[i].label = Some(assign_incorrect_label(&probs[i], truth[i], cfg.alpha)?);
        assignments[i].intended_correct = false;
    }
    Ok(assignments)
}

/// Header for the per-sample debug dump.
pub fn write_debug_csv_header(out: &mut impl Write) -> Result<()> {
    writeln!(out, "index,entropy,distance,selected,label,intended_correct")?;
    Ok(())
}

/// Append one debug row per sample; `index_offset` shifts sample indices so
/// multiple batches can share a file.
pub fn write_debug_csv_rows(
    out: &mut impl Write,
    index_offset: usize,
    probs: &[ProbVector],
    assignments: &[PseudoLabelAssignment],
) -> Result<()> {
    for (p, a) in probs.iter().zip(assignments) {
        let entropy = normalized_entropy(p);
        let distance = confidence_distance(entropy);
        let label = a.label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            a.sample_index + index_offset,
            entropy,
            distance,
            a.selected,
            label,
            a.intended_correct
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use proptest::prelude::*;

    fn random_prob(rng: &mut RandomSource, k: usize) -> ProbVector {
        let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        ProbVector::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
    }

    #[test]
    fn confidence_distance_extremes_and_midpoint() {
        assert_eq!(confidence_distance(0.0), 0.0);
        assert_eq!(confidence_distance(1.0), 0.0);
        assert!((confidence_distance(0.7) - 0.3).abs() < 1e-12);
        assert!((confidence_distance(0.5) - 0.5).abs() < 1e-12);
        // Out-of-range entropies clamp first.
        assert_eq!(confidence_distance(1.0 + 1e-10), 0.0);
    }

    #[test]
    fn percent_count_rounds_half_up() {
        assert_eq!(percent_count(50.0, 5), 3); // 2.5 -> 3
        assert_eq!(percent_count(40.0, 5), 2);
        assert_eq!(percent_count(0.0, 64), 0);
        assert_eq!(percent_count(100.0, 64), 64);
        assert_eq!(percent_count(10.0, 4), 0); // 0.4 -> 0
        assert_eq!(percent_count(10.0, 5), 1); // 0.5 -> 1
        assert_eq!(percent_count(30.0, 64), 19); // 19.2 -> 19
    }

    #[test]
    fn select_full_and_empty() {
        let d = [0.3, 0.1, 0.2];
        assert_eq!(select_for_adaptation(&d, 100.0), vec![1, 2, 0]);
        assert!(select_for_adaptation(&d, 0.0).is_empty());
    }

    #[test]
    fn select_spec_example() {
        let d = [0.10, 0.40, 0.05, 0.30, 0.20];
        let sel = select_for_adaptation(&d, 40.0);
        assert_eq!(sel, vec![2, 0]);
    }

    #[test]
    fn select_matches_full_sort_oracle() {
        let mut rng = RandomSource::new(41);
        for _ in 0..200 {
            let n = 1 + rng.index(64);
            let d: Vec<f64> = (0..n).map(|_| (rng.index(8) as f64) * 0.05).collect();
            let q = (rng.index(11) * 10) as f64;
            // Oracle: sort all (distance, index) pairs, take the first k.
            let mut pairs: Vec<(f64, usize)> = d.iter().cloned().zip(0..n).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let k = percent_count(q, n);
            let expected: Vec<usize> = pairs.iter().take(k).map(|&(_, i)| i).collect();
            assert_eq!(select_for_adaptation(&d, q), expected);
        }
    }

    #[test]
    fn split_extremes() {
        let d = [0.01, 0.02, 0.03, 0.04];
        let sel = vec![0, 1, 2, 3];
        let (c, i) = split_by_quality(&sel, &d, 100.0);
        assert_eq!(c, vec![0, 1, 2, 3]);
        assert!(i.is_empty());
        let (c, i) = split_by_quality(&sel, &d, 0.0);
        assert!(c.is_empty());
        assert_eq!(i, vec![0, 1, 2, 3]);
    }

    #[test]
    fn split_spec_example() {
        let d = [0.01, 0.02, 0.03, 0.04];
        let sel = vec![3, 1, 0, 2];
        let (c, i) = split_by_quality(&sel, &d, 50.0);
        assert_eq!(c, vec![0, 1]);
        assert_eq!(i, vec![2, 3]);
    }

    #[test]
    fn incorrect_label_for_true_unknown_takes_argmax() {
        let p = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert_eq!(
            assign_incorrect_label(&p, Label::Unknown, 1.0).unwrap(),
            Label::Known(0)
        );
    }

    #[test]
    fn incorrect_label_threshold_demotes_to_unknown() {
        // I([0.6, 0.3, 0.1]) = 0.81733...; with alpha=1 the runner-up 0.3 < tau.
        let p = ProbVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        let entropy = normalized_entropy(&p);
        assert!((entropy - 0.8174).abs() < 5e-4);
        assert_eq!(
            assign_incorrect_label(&p, Label::Known(0), 1.0).unwrap(),
            Label::Unknown
        );
    }

    #[test]
    fn incorrect_label_alpha_zero_never_unknown() {
        let p = ProbVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        assert_eq!(
            assign_incorrect_label(&p, Label::Known(0), 0.0).unwrap(),
            Label::Known(1)
        );
    }

    #[test]
    fn simulate_perfect_labels_selects_everything() {
        let mut rng = RandomSource::new(42);
        let probs: Vec<ProbVector> = (0..10).map(|_| random_prob(&mut rng, 4)).collect();
        let truth: Vec<Label> = (0..10)
            .map(|i| if i % 3 == 0 { Label::Unknown } else { Label::Known(i % 4) })
            .collect();
        let out = simulate_pseudo_labels(&probs, &truth, &PseudoLabelConfig::default()).unwrap();
        assert_eq!(out.len(), 10);
        for (a, t) in out.iter().zip(&truth) {
            assert!(a.selected);
            assert!(a.intended_correct);
            assert_eq!(a.label, Some(*t));
        }
    }

    #[test]
    fn simulate_zero_quantity_selects_nothing() {
        let mut rng = RandomSource::new(43);
        let probs: Vec<ProbVector> = (0..8).map(|_| random_prob(&mut rng, 4)).collect();
        let truth = vec![Label::Known(0); 8];
        let cfg = PseudoLabelConfig {
            quantity_q: 0.0,
            ..Default::default()
        };
        let out = simulate_pseudo_labels(&probs, &truth, &cfg).unwrap();
        assert!(out.iter().all(|a| !a.selected && a.label.is_none()));
    }

    /// Independent straight-line reimplementation used as the brute-force oracle.
    fn oracle_simulate(
        probs: &[ProbVector],
        truth: &[Label],
        cfg: &PseudoLabelConfig,
    ) -> Vec<PseudoLabelAssignment> {
        let n = probs.len();
        let mut scored: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let e = normalized_entropy(&probs[i]).clamp(0.0, 1.0);
                (e.min(1.0 - e), i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = ((cfg.quantity_q * n as f64) / 100.0 + 0.5).floor() as usize;
        let m = ((cfg.quality_a * k as f64) / 100.0 + 0.5).floor() as usize;
        let mut out: Vec<PseudoLabelAssignment> = (0..n)
            .map(|i| PseudoLabelAssignment {
                sample_index: i,
                selected: false,
                label: None,
                intended_correct: false,
            })
            .collect();
        for (rank, &(_, i)) in scored.iter().take(k).enumerate() {
            out[i].selected = true;
            if rank < m {
                out[i].label = Some(truth[i]);
                out[i].intended_correct = true;
            } else {
                let tau = cfg.alpha * normalized_entropy(&probs[i]);
                let ps = probs[i].as_slice();
                let label = match truth[i] {
                    Label::Unknown => {
                        let mut best = 0;
                        for c in 1..ps.len() {
                            if ps[c] > ps[best] {
                                best = c;
                            }
                        }
                        Label::Known(best)
                    }
                    Label::Known(t) => {
                        let mut best = usize::MAX;
                        for c in 0..ps.len() {
                            if c != t && (best == usize::MAX || ps[c] > ps[best]) {
                                best = c;
                            }
                        }
                        if ps[best] < tau {
                            Label::Unknown
                        } else {
                            Label::Known(best)
                        }
                    }
                };
                out[i].label = Some(label);
            }
        }
        out
    }

    #[test]
    fn simulate_mixed_batch_matches_oracle() {
        let mut rng = RandomSource::new(44);
        let probs: Vec<ProbVector> = (0..10).map(|_| random_prob(&mut rng, 6)).collect();
        let truth: Vec<Label> = (0..10)
            .map(|i| if i >= 7 { Label::Unknown } else { Label::Known(i % 6) })
            .collect();
        let cfg = PseudoLabelConfig {
            quantity_q: 50.0,
            quality_a: 50.0,
            alpha: 1.0,
        };
        let out = simulate_pseudo_labels(&probs, &truth, &cfg).unwrap();
        let selected = out.iter().filter(|a| a.selected).count();
        let correct = out.iter().filter(|a| a.intended_correct).count();
        assert_eq!(selected, 5);
        assert_eq!(correct, 3); // round half-up of 50% of 5
        assert_eq!(out, oracle_simulate(&probs, &truth, &cfg));
    }

    #[test]
    fn simulate_rejects_bad_config() {
        let probs = vec![ProbVector::new(vec![0.5, 0.5]).unwrap()];
        let truth = vec![Label::Known(0)];
        let cfg = PseudoLabelConfig {
            quantity_q: 120.0,
            ..Default::default()
        };
        assert!(simulate_pseudo_labels(&probs, &truth, &cfg).is_err());
    }

    #[test]
    fn selection_is_nested_across_quantities() {
        let mut rng = RandomSource::new(45);
        let d: Vec<f64> = (0..40).map(|_| rng.uniform() * 0.5).collect();
        let mut previous: Vec<usize> = Vec::new();
        for q in 0..=10 {
            let sel = select_for_adaptation(&d, (q * 10) as f64);
            assert!(sel.len() >= previous.len());
            assert_eq!(&sel[..previous.len()], previous.as_slice());
            previous = sel;
        }
    }

    proptest! {
        #[test]
        fn counts_are_exact(
            batch in 1usize..=64,
            q in 0usize..=10,
            a in 0usize..=10,
            seed in 0u64..1000,
        ) {
            let mut rng = RandomSource::new(seed);
            let k_classes = 3 + rng.index(6);
            let probs: Vec<ProbVector> =
                (0..batch).map(|_| random_prob(&mut rng, k_classes)).collect();
            let truth: Vec<Label> = (0..batch)
                .map(|_| {
                    if rng.uniform() < 0.3 {
                        Label::Unknown
                    } else {
                        Label::Known(rng.index(k_classes))
                    }
                })
                .collect();
            let cfg = PseudoLabelConfig {
                quantity_q: (q * 10) as f64,
                quality_a: (a * 10) as f64,
                alpha: 1.0,
            };
            let out = simulate_pseudo_labels(&probs, &truth, &cfg).unwrap();
            let selected = out.iter().filter(|x| x.selected).count();
            let correct = out.iter().filter(|x| x.intended_correct).count();
            let expect_k = percent_count(cfg.quantity_q, batch);
            let expect_m = percent_count(cfg.quality_a, expect_k);
            prop_assert_eq!(selected, expect_k);
            prop_assert_eq!(correct, expect_m);
            for x in &out {
                prop_assert_eq!(x.label.is_some(), x.selected);
                if x.selected && !x.intended_correct {
                    // A deliberately wrong label never equals the truth.
                    prop_assert_ne!(x.label.unwrap(), truth[x.sample_index]);
                }
            }
            // Purity: a second call reproduces the same outcome.
            let again = simulate_pseudo_labels(&probs, &truth, &cfg).unwrap();
            prop_assert_eq!(out, again);
        }

        #[test]
        fn alpha_zero_never_mislabels_known_as_unknown(
            batch in 1usize..=32,
            seed in 0u64..500,
        ) {
            let mut rng = RandomSource::new(seed.wrapping_mul(31));
            let probs: Vec<ProbVector> =
                (0..batch).map(|_| random_prob(&mut rng, 5)).collect();
            let truth: Vec<Label> = (0..batch).map(|_| Label::Known(rng.index(5))).collect();
            let cfg = PseudoLabelConfig {
                quantity_q: 100.0,
                quality_a: 0.0,
                alpha: 0.0,
            };
            let out = simulate_pseudo_labels(&probs, &truth, &cfg).unwrap();
            for x in &out {
                prop_assert_ne!(x.label, Some(Label::Unknown));
            }
        }
    }
}
