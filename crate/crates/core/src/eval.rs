//! Identification evaluation: repeated stratified k-fold cross-validation and
//! the cross-session permanence experiment.
//!
//! Per subject `s` over the accumulated confusion matrix `C` (rows = truth):
//!
//! - TPR = C[s][s] / row(s)
//! - FNR = (row(s) - C[s][s]) / row(s)
//! - FPR = (col(s) - C[s][s]) / (total - row(s)), one-vs-rest
//!
//! Macro values are unweighted means over subjects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::classify::{self, AlgorithmSpec, ClassifyError, Dataset};
use crate::features::{dataset_from_recordings, FeatureConfig};
use crate::ingest::SessionRecording;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class {label:?} has {count} instances, fewer than k = {k}")]
    ClassTooSmall { label: String, count: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("repeats must be at least 1")]
    InvalidRepeats,
    #[error("training and test subject sets differ: only in training {train_only:?}, only in test {test_only:?}")]
    SubjectMismatch { train_only: Vec<String>, test_only: Vec<String> },
    #[error("no instances to evaluate")]
    Empty,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("report csv line {line}: {reason}")]
    ReportParse { line: usize, reason: String },
}

/// Fold assignments for one or more repeats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub repeats: usize,
    pub k: usize,
    /// `assignment[r][i]`: fold of instance `i` in repeat `r`.
    pub assignment: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Instance indices of `fold` in `repeat`, ascending.
    pub fn fold(&self, repeat: usize, fold: usize) -> Vec<usize> {
        (0..self.assignment[repeat].len()).filter(|&i| self.assignment[repeat][i] == fold).collect()
    }
}

/// Single-repeat stratified assignment.
///
/// Classes are visited in canonical order; within a class the instances are
/// shuffled and dealt round-robin. The dealing position carries over from one
/// class to the next, so overall fold sizes also stay within one.
pub fn stratified_folds(labels: &[String], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidFolds(k));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_str()).or_default().push(i);
    }
    if let Some((label, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(EvalError::ClassTooSmall { label: label.to_string(), count: members.len(), k });
    }
    let mut rng = seed::rng(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { repeats: 1, k, assignment: vec![assignment] })
}

/// `repeats` independent stratified plans; repeat `r` uses `seed::derive(seed, r)`.
pub fn repeated_stratified_folds(labels: &[String], repeats: usize, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if repeats == 0 {
        return Err(EvalError::InvalidRepeats);
    }
    let mut assignment = Vec::with_capacity(repeats);
    for r in 0..repeats {
        assignment.extend(stratified_folds(labels, k, seed::derive(seed, r as u64))?.assignment);
    }
    Ok(FoldPlan { repeats, k, assignment })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMetrics {
    pub subject: String,
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Protocol {
    CrossValidation { repeats: usize, k: usize },
    Permanence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    /// `confusion[truth][predicted]`, summed over every repeat and fold.
    pub confusion: Vec<Vec<u64>>,
    pub subjects: Vec<SubjectMetrics>,
    /// Set when some subject's FPR had no negatives to measure (reported as 0).
    pub fpr_undefined: bool,
    pub protocol: Protocol,
    pub algorithm: AlgorithmSpec,
    pub seed: u64,
}

impl EvalReport {
    fn from_confusion(
        labels: Vec<String>,
        confusion: Vec<Vec<u64>>,
        protocol: Protocol,
        algorithm: AlgorithmSpec,
        seed: u64,
    ) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let mut fpr_undefined = false;
        let subjects = labels
            .iter()
            .enumerate()
            .map(|(s, label)| {
                let row: u64 = confusion[s].iter().sum();
                let col: u64 = confusion.iter().map(|r| r[s]).sum();
                let diag = confusion[s][s];
                let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
                let negatives = total - row;
                if negatives == 0 {
                    fpr_undefined = true;
                }
                SubjectMetrics {
                    subject: label.clone(),
                    tpr: ratio(diag, row),
                    fnr: ratio(row - diag, row),
                    fpr: ratio(col - diag, negatives),
                }
            })
            .collect();
        EvalReport { labels, confusion, subjects, fpr_undefined, protocol, algorithm, seed }
    }

    fn mean(&self, f: impl Fn(&SubjectMetrics) -> f64) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        self.subjects.iter().map(f).sum::<f64>() / self.subjects.len() as f64
    }

    pub fn macro_tpr(&self) -> f64 {
        self.mean(|m| m.tpr)
    }

    pub fn macro_fpr(&self) -> f64 {
        self.mean(|m| m.fpr)
    }

    pub fn macro_fnr(&self) -> f64 {
        self.mean(|m| m.fnr)
    }

    /// Per-subject TPR values, for spread estimates.
    pub fn tprs(&self) -> Vec<f64> {
        self.subjects.iter().map(|m| m.tpr).collect()
    }
}

fn accumulate(confusion: &mut [Vec<u64>], other: &[Vec<u64>]) {
    for (row, o) in confusion.iter_mut().zip(other) {
        for (c, v) in row.iter_mut().zip(o) {
            *c += v;
        }
    }
}

/// Repeated stratified k-fold cross-validation.
///
/// Fold `f` of repeat `r` trains with seed `seed::derive(seed, r*k + f)`.
/// Fold jobs run in parallel; their confusion counts are summed, so the
/// report equals the sequential one.
pub fn cross_validate(
    data: &Dataset,
    algorithm: &AlgorithmSpec,
    repeats: usize,
    k: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if data.is_empty() {
        return Err(EvalError::Empty);
    }
    let plan = repeated_stratified_folds(data.labels(), repeats, k, seed)?;
    let (labels, y) = data.encode();
    let l = labels.len();
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let partials: Vec<Vec<Vec<u64>>> = jobs
        .par_iter()
        .map(|&(r, f)| -> Result<Vec<Vec<u64>>, EvalError> {
            let assign = &plan.assignment[r];
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| assign[i] == f);
            let model = classify::train(&data.subset(&train), algorithm, seed::derive(seed, (r * k + f) as u64))?;
            // Every class has >= k instances, so each training split sees every label.
            debug_assert_eq!(model.labels(), labels.as_slice());
            let mut confusion = vec![vec![0u64; l]; l];
            for i in test {
                let predicted = model.predict_index(data.row(i))?;
                confusion[y[i] as usize][predicted] += 1;
            }
            Ok(confusion)
        })
        .collect::<Result<_, _>>()?;
    let mut confusion = vec![vec![0u64; l]; l];
    for p in &partials {
        accumulate(&mut confusion, p);
    }
    Ok(EvalReport::from_confusion(labels, confusion, Protocol::CrossValidation { repeats, k }, *algorithm, seed))
}

/// Trains on every session-1 instance and scores every session-2 instance.
pub fn permanence_eval(
    train: &[SessionRecording],
    test: &[SessionRecording],
    algorithm: &AlgorithmSpec,
    features: &FeatureConfig,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let subjects = |recs: &[SessionRecording]| -> BTreeSet<String> {
        recs.iter().map(|r| r.subject_id().to_string()).collect()
    };
    let (train_subjects, test_subjects) = (subjects(train), subjects(test));
    if train_subjects != test_subjects {
        return Err(EvalError::SubjectMismatch {
            train_only: train_subjects.difference(&test_subjects).cloned().collect(),
            test_only: test_subjects.difference(&train_subjects).cloned().collect(),
        });
    }
    let train_data = dataset_from_recordings(train, features);
    let test_data = dataset_from_recordings(test, features);
    if train_data.is_empty() || test_data.is_empty() {
        return Err(EvalError::Empty);
    }
    let model = classify::train(&train_data, algorithm, seed)?;
    let labels = model.labels().to_vec();
    let l = labels.len();
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut confusion = vec![vec![0u64; l]; l];
    for i in 0..test_data.len() {
        // A subject whose test session yields instances but whose training
        // session yields none (e.g. too short for one window) is not in the model.
        let Some(&truth) = index.get(test_data.label(i)) else { continue };
        confusion[truth][model.predict_index(test_data.row(i))?] += 1;
    }
    Ok(EvalReport::from_confusion(labels, confusion, Protocol::Permanence, *algorithm, seed))
}

/// `subject,tpr,fpr,fnr` with four decimals, then a `MACRO` row.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("subject,tpr,fpr,fnr\n");
    for m in &report.subjects {
        let _ = writeln!(out, "{},{:.4},{:.4},{:.4}", m.subject, m.tpr, m.fpr, m.fnr);
    }
    let _ = writeln!(
        out,
        "MACRO,{:.4},{:.4},{:.4}",
        report.macro_tpr(),
        report.macro_fpr(),
        report.macro_fnr()
    );
    out
}

/// Parses `report_csv` output back into `(subject, [tpr, fpr, fnr])` rows,
/// including the `MACRO` row.
pub fn parse_report_csv(text: &str) -> Result<Vec<(String, [f64; 3])>, EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "subject,tpr,fpr,fnr")) => {}
        _ => return Err(EvalError::ReportParse { line: 1, reason: "missing header".into() }),
    }
    lines
        .map(|(i, line)| {
            let err = |reason: &str| EvalError::ReportParse { line: i + 1, reason: reason.into() };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(err("expected 4 columns"));
            }
            let mut values = [0.0; 3];
            for (v, f) in values.iter_mut().zip(&fields[1..]) {
                *v = f.parse().map_err(|_| err("bad number"))?;
            }
            Ok((fields[0].to_string(), values))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(spec: &[(&str, usize)]) -> Vec<String> {
        spec.iter().flat_map(|(l, n)| std::iter::repeat(l.to_string()).take(*n)).collect()
    }

    #[test]
    fn single_class_even_folds() {
        let plan = stratified_folds(&labels(&[("a", 100)]), 10, 3).unwrap();
        for f in 0..10 {
            assert_eq!(plan.fold(0, f).len(), 10);
        }
    }

    #[test]
    fn two_classes_fifteen_each() {
        let ls = labels(&[("a", 15), ("b", 15)]);
        let plan = stratified_folds(&ls, 10, 8).unwrap();
        for f in 0..10 {
            let members = plan.fold(0, f);
            for class in ["a", "b"] {
                let c = members.iter().filter(|&&i| ls[i] == class).count();
                assert!((1..=2).contains(&c), "fold {f} class {class}: {c}");
            }
        }
    }

    #[test]
    fn class_too_small() {
        let ls = labels(&[("a", 20), ("tiny", 7)]);
        assert_eq!(
            stratified_folds(&ls, 10, 0).unwrap_err(),
            EvalError::ClassTooSmall { label: "tiny".into(), count: 7, k: 10 }
        );
    }

    #[test]
    fn metrics_from_confusion() {
        let confusion = vec![vec![8, 2, 0], vec![1, 9, 0], vec![0, 0, 10]];
        let r = EvalReport::from_confusion(
            vec!["a".into(), "b".into(), "c".into()],
            confusion,
            Protocol::Permanence,
            AlgorithmSpec::default(),
            0,
        );
        let a = &r.subjects[0];
        assert_eq!(a.tpr, 0.8);
        assert!((a.fnr - 0.2).abs() < 1e-15);
        assert_eq!(a.fpr, 1.0 / 20.0);
        assert_eq!(r.subjects[1].fpr, 2.0 / 20.0);
        assert_eq!(r.subjects[2].fpr, 0.0);
        assert!(!r.fpr_undefined);
    }

    #[test]
    fn single_subject_report_flags_fpr() {
        let r = EvalReport::from_confusion(
            vec!["s1".into()],
            vec![vec![7]],
            Protocol::Permanence,
            AlgorithmSpec::default(),
            0,
        );
        assert!(r.fpr_undefined);
        assert_eq!(report_csv(&r), "subject,tpr,fpr,fnr\ns1,1.0000,0.0000,0.0000\nMACRO,1.0000,0.0000,0.0000\n");
    }

    #[test]
    fn report_parses_back() {
        let r = EvalReport::from_confusion(
            vec!["x".into(), "y".into()],
            vec![vec![2, 1], vec![0, 3]],
            Protocol::Permanence,
            AlgorithmSpec::default(),
            0,
        );
        let rows = parse_report_csv(&report_csv(&r)).unwrap();
        assert_eq!(rows.len(), 3);
        for (m, (name, v)) in r.subjects.iter().zip(&rows) {
            assert_eq!(name, &m.subject);
            for (parsed, actual) in v.iter().zip([m.tpr, m.fpr, m.fnr]) {
                assert!((parsed - actual).abs() <= 0.5e-4 + 1e-12);
            }
        }
        assert_eq!(rows[2].0, "MACRO");
        assert!((rows[2].1[0] - (rows[0].1[0] + rows[1].1[0]) / 2.0).abs() <= 1e-4);
    }
}
