//! Threshold learning.
//!
//! For every predicted class the learner walks the candidate thresholds
//! (zero plus the calibrated confidence of each misclassified example),
//! keeps those whose reject region passes the randomness test, and picks the
//! one with the highest select accuracy on the class. Exact ties go to the
//! smallest threshold.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{apply_calibration, CalibrationMap};
use crate::error::{Error, Result};
use crate::randomness::{region_viable, RegionTally, ViabilityMethod};
use crate::score_model::{argmax, ScoreSet, ThresholdVector};

/// Validation examples predicted as one class, sorted by ascending
/// calibrated confidence.
#[derive(Debug, Clone)]
pub struct ClassSlice {
    class: usize,
    confidences: Vec<f64>,
    correct: Vec<bool>,
    /// `correct_prefix[i]` = correct members among the first `i`.
    correct_prefix: Vec<u64>,
}

impl ClassSlice {
    pub fn new(class: usize, members: impl IntoIterator<Item = (f64, bool)>) -> Self {
        let mut members: Vec<(f64, bool)> = members.into_iter().collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (confidences, correct): (Vec<f64>, Vec<bool>) = members.into_iter().unzip();
        let mut correct_prefix = Vec::with_capacity(correct.len() + 1);
        correct_prefix.push(0);
        let mut acc = 0;
        for &c in &correct {
            acc += c as u64;
            correct_prefix.push(acc);
        }
        Self {
            class,
            confidences,
            correct,
            correct_prefix,
        }
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn len(&self) -> usize {
        self.confidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.confidences.iter().copied().zip(self.correct.iter().copied())
    }

    /// Members with confidence `<= threshold`.
    fn rejected_count(&self, threshold: f64) -> usize {
        self.confidences.partition_point(|c| *c <= threshold)
    }
}

/// Splits a scored set into one slice per predicted class.
pub fn class_slices(set: &ScoreSet, confidences: &[f64]) -> Result<Vec<ClassSlice>> {
    if confidences.len() != set.len() {
        return Err(Error::domain(format!(
            "{} confidences for {} examples",
            confidences.len(),
            set.len()
        )));
    }
    let mut members: Vec<Vec<(f64, bool)>> = vec![Vec::new(); set.class_count()];
    for (ex, &conf) in set.examples().iter().zip(confidences) {
        let pred = argmax(&ex.logits);
        members[pred].push((conf, pred == ex.label));
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(j, m)| ClassSlice::new(j, m))
        .collect())
}

/// Zero plus the confidence of every misclassified member, ascending and
/// deduplicated. Zero stands for "reject nothing".
pub fn candidate_thresholds(slice: &ClassSlice) -> Vec<f64> {
    let mut out = vec![0.0];
    for (conf, correct) in slice.members() {
        if !correct && conf > *out.last().unwrap() {
            out.push(conf);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateEval {
    pub threshold: f64,
    pub tally: RegionTally,
    pub viable: bool,
    /// Correct and total members kept by the threshold.
    pub selected_correct: u64,
    pub selected: u64,
    pub coverage: f64,
}

impl CandidateEval {
    /// `None` when the threshold rejects the whole slice.
    pub fn select_accuracy(&self) -> Option<f64> {
        (self.selected > 0).then(|| self.selected_correct as f64 / self.selected as f64)
    }

    pub fn selectable(&self) -> bool {
        self.selected > 0
    }

    /// Exact comparison of select accuracies by cross-multiplication.
    fn cmp_select_accuracy(&self, other: &Self) -> Ordering {
        let lhs = self.selected_correct as u128 * other.selected as u128;
        let rhs = other.selected_correct as u128 * self.selected as u128;
        lhs.cmp(&rhs)
    }
}

pub fn evaluate_candidate(
    slice: &ClassSlice,
    threshold: f64,
    delta: f64,
    method: ViabilityMethod,
) -> Result<CandidateEval> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::domain(format!("threshold {threshold} outside [0,1]")));
    }
    let rejected = slice.rejected_count(threshold);
    let k = slice.correct_prefix[rejected];
    let total_correct = slice.correct_prefix[slice.len()];
    let tally = RegionTally::new(rejected as u64, k)?;
    let selected = (slice.len() - rejected) as u64;
    Ok(CandidateEval {
        threshold,
        tally,
        viable: region_viable(tally, delta, method)?,
        selected_correct: total_correct - k,
        selected,
        coverage: if slice.is_empty() {
            1.0
        } else {
            selected as f64 / slice.len() as f64
        },
    })
}

/// Best viable candidate for one class. An empty slice yields the zero
/// threshold.
pub fn best_candidate(slice: &ClassSlice, delta: f64, method: ViabilityMethod) -> Result<CandidateEval> {
    let mut best: Option<CandidateEval> = None;
    for t in candidate_thresholds(slice) {
        let ev = evaluate_candidate(slice, t, delta, method)?;
        if !ev.viable || !ev.selectable() {
            continue;
        }
        // Candidates ascend, so keeping the first maximum keeps the smallest threshold.
        if best.is_none_or(|b| ev.cmp_select_accuracy(&b) == Ordering::Greater) {
            best = Some(ev);
        }
    }
    match best {
        Some(b) => Ok(b),
        None => evaluate_candidate(slice, 0.0, delta, method),
    }
}

pub fn learn_class_threshold(slice: &ClassSlice, delta: f64, method: ViabilityMethod) -> Result<f64> {
    Ok(best_candidate(slice, delta, method)?.threshold)
}

/// Learned thresholds along with the chosen candidate of every class.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub thresholds: ThresholdVector,
    pub per_class: Vec<CandidateEval>,
}

/// Calibrates, partitions by predicted class and learns every class's
/// threshold independently.
pub fn learn_thresholds_detailed(
    val: &ScoreSet,
    cal: &CalibrationMap,
    delta: f64,
    method: ViabilityMethod,
) -> Result<LearnOutcome> {
    if val.is_empty() {
        return Err(Error::domain("cannot learn thresholds from an empty score set"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta {delta} outside (0,1)")));
    }
    let confidences = apply_calibration(val, cal)?;
    let slices = class_slices(val, &confidences)?;
    let per_class = slices
        .par_iter()
        .map(|s| best_candidate(s, delta, method))
        .collect::<Result<Vec<_>>>()?;
    let thresholds = ThresholdVector::new(
        per_class.iter().map(|c| c.threshold).collect(),
        delta,
        method,
        cal.temperatures().to_vec(),
    )?;
    Ok(LearnOutcome { thresholds, per_class })
}

pub fn learn_thresholds(
    val: &ScoreSet,
    cal: &CalibrationMap,
    delta: f64,
    method: ViabilityMethod,
) -> Result<ThresholdVector> {
    Ok(learn_thresholds_detailed(val, cal, delta, method)?.thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score_model::Example;

    fn example_slice() -> ClassSlice {
        ClassSlice::new(
            0,
            [(0.95, true), (0.9, true), (0.6, false), (0.55, true), (0.52, false)],
        )
    }

    const BCDF: ViabilityMethod = ViabilityMethod::Bcdf;

    #[test]
    fn candidates() {
        assert_eq!(
            candidate_thresholds(&ClassSlice::new(0, [(0.9, true), (0.7, true)])),
            vec![0.0]
        );
        assert_eq!(candidate_thresholds(&example_slice()), vec![0.0, 0.52, 0.6]);
        let dup = ClassSlice::new(0, [(0.7, false), (0.8, true), (0.7, false)]);
        assert_eq!(candidate_thresholds(&dup), vec![0.0, 0.7]);
    }

    #[test]
    fn slice_is_sorted() {
        let s = example_slice();
        let confs: Vec<f64> = s.members().map(|m| m.0).collect();
        assert_eq!(confs, vec![0.52, 0.55, 0.6, 0.9, 0.95]);
    }

    #[test]
    fn evaluate_examples() {
        let s = example_slice();
        let ev = evaluate_candidate(&s, 0.6, 0.05, BCDF).unwrap();
        assert_eq!(ev.tally, RegionTally { n: 3, k: 1 });
        assert!(ev.viable);
        assert_eq!(ev.select_accuracy(), Some(1.0));

        let ev = evaluate_candidate(&s, 0.52, 0.05, BCDF).unwrap();
        assert_eq!(ev.tally, RegionTally { n: 1, k: 0 });
        assert!(ev.viable);
        assert_eq!(ev.select_accuracy(), Some(0.75));

        let ev = evaluate_candidate(&s, 0.0, 0.05, BCDF).unwrap();
        assert_eq!(ev.tally, RegionTally { n: 0, k: 0 });
        assert!(ev.viable);
        assert_eq!(ev.select_accuracy(), Some(0.6));
        assert_eq!(ev.coverage, 1.0);

        let all = evaluate_candidate(&s, 1.0, 0.05, BCDF).unwrap();
        assert!(!all.selectable());
        assert_eq!(all.select_accuracy(), None);

        assert!(evaluate_candidate(&s, 1.5, 0.05, BCDF).is_err());
    }

    #[test]
    fn learn_class_examples() {
        assert_eq!(learn_class_threshold(&example_slice(), 0.05, BCDF).unwrap(), 0.6);
        let all_correct = ClassSlice::new(1, [(0.6, true), (0.99, true)]);
        assert_eq!(learn_class_threshold(&all_correct, 0.05, BCDF).unwrap(), 0.0);
        let lone_wrong = ClassSlice::new(1, [(0.9, false)]);
        assert_eq!(learn_class_threshold(&lone_wrong, 0.05, BCDF).unwrap(), 0.0);
        assert_eq!(learn_class_threshold(&ClassSlice::new(2, []), 0.05, BCDF).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_smallest_threshold() {
        // Thresholds 0.1 and 0.3 both leave select accuracy 1/2.
        let s = ClassSlice::new(0, [(0.1, false), (0.2, true), (0.3, false), (0.8, true), (0.9, false)]);
        let a = evaluate_candidate(&s, 0.1, 0.5, BCDF).unwrap();
        let b = evaluate_candidate(&s, 0.3, 0.5, BCDF).unwrap();
        assert!(a.viable && b.viable);
        assert_eq!(a.select_accuracy(), b.select_accuracy());
        assert_eq!(learn_class_threshold(&s, 0.5, BCDF).unwrap(), 0.1);
    }

    #[test]
    fn perfect_classifier_rejects_nothing() {
        let examples = (0..30)
            .map(|i| Example {
                id: format!("p{i}"),
                label: i % 3,
                logits: (0..3)
                    .map(|j| if j == i % 3 { 2.0 + (i as f64) * 0.1 } else { 0.0 })
                    .collect(),
                coords: None,
            })
            .collect();
        let set = ScoreSet::new(3, examples).unwrap();
        let tv = learn_thresholds(&set, &CalibrationMap::identity(3), 0.05, BCDF).unwrap();
        assert_eq!(tv.thresholds(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn bad_inputs() {
        let set = ScoreSet::new(2, Vec::new()).unwrap();
        assert!(learn_thresholds(&set, &CalibrationMap::identity(2), 0.05, BCDF).is_err());
        let set = ScoreSet::new(
            2,
            vec![Example {
                id: "a".into(),
                label: 0,
                logits: vec![1.0, 0.0],
                coords: None,
            }],
        )
        .unwrap();
        assert!(learn_thresholds(&set, &CalibrationMap::identity(2), 0.0, BCDF).is_err());
        assert!(learn_thresholds(&set, &CalibrationMap::identity(3), 0.05, BCDF).is_err());
    }
}
