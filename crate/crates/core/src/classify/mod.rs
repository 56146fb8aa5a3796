//! Random forest, k-nearest-neighbors and one-vs-one linear SVM behind one
//! train/predict interface.
//!
//! Labels are strings. Every model keeps its label set sorted by byte order;
//! that order is the tie-break basis everywhere ("smaller label wins").

mod forest;
mod knn;
mod serial;
mod svm;
mod tree;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use forest::{train_forest, ForestParams};
pub use knn::{train_knn, KnnModel};
pub use svm::{train_svm_ovo, PairSeparator, SvmParams};
pub use tree::{best_split, gini, train_tree, DecisionTree, Node, Split, TreeParams};

use crate::features::FeatureMode;

pub const MODEL_MAGIC: &str = "#popa-model v1";

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("label counts are empty")]
    EmptyCounts,
    #[error("dataset has no instances")]
    EmptyDataset,
    #[error("expected a {expected}-dimensional input, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds the {n} stored instances")]
    KTooLarge { k: usize, n: usize },
    #[error("need at least two labels, found {0}")]
    SingleClass(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
}

/// Labelled feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset { dim, values: Vec::new(), labels: Vec::new() }
    }

    /// Panics if `x` does not have `dim` components.
    pub fn push(&mut self, x: &[f64], label: &str) {
        assert_eq!(x.len(), self.dim, "instance dimension");
        self.values.extend_from_slice(x);
        self.labels.push(label.to_string());
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Distinct labels in canonical (byte-wise) order.
    pub fn label_set(&self) -> Vec<String> {
        self.labels.iter().collect::<BTreeSet<_>>().into_iter().cloned().collect()
    }

    /// Canonical label set plus each instance's index into it.
    pub fn encode(&self) -> (Vec<String>, Vec<u32>) {
        let classes = self.label_set();
        let lookup: BTreeMap<&str, u32> = classes.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
        let y = self.labels.iter().map(|l| lookup[l.as_str()]).collect();
        (classes, y)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.dim);
        for &i in indices {
            out.push(self.row(i), &self.labels[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &Dataset) {
        assert_eq!(other.dim, self.dim, "dataset dimension");
        self.values.extend_from_slice(&other.values);
        self.labels.extend_from_slice(&other.labels);
    }

    /// Same instances, every label replaced by `label`.
    pub fn relabeled(&self, label: &str) -> Dataset {
        Dataset { dim: self.dim, values: self.values.clone(), labels: vec![label.to_string(); self.len()] }
    }

    /// Same instances with labels rewritten by `f`.
    pub fn map_labels(&self, f: impl Fn(&str) -> String) -> Dataset {
        Dataset { dim: self.dim, values: self.values.clone(), labels: self.labels.iter().map(|l| f(l)).collect() }
    }
}

/// Which classifier to train and with what hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlgorithmSpec {
    Forest(ForestParams),
    Knn { k: usize },
    Svm(SvmParams),
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        AlgorithmSpec::Forest(ForestParams::default())
    }
}

impl AlgorithmSpec {
    /// Short name: `rf`, `knn1`, `knn3`, `knn5`, `svm` (`knn<k>` in general).
    pub fn name(&self) -> String {
        match self {
            AlgorithmSpec::Forest(_) => "rf".into(),
            AlgorithmSpec::Knn { k } => format!("knn{k}"),
            AlgorithmSpec::Svm(_) => "svm".into(),
        }
    }

    /// Default hyperparameters for a short name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "rf" => Some(AlgorithmSpec::Forest(ForestParams::default())),
            "svm" => Some(AlgorithmSpec::Svm(SvmParams::default())),
            _ => {
                let k: usize = name.strip_prefix("knn")?.parse().ok()?;
                (k >= 1).then_some(AlgorithmSpec::Knn { k })
            }
        }
    }

    /// Hyperparameters as ordered `key=value` pairs (excluding the name).
    pub fn hyperparams(&self) -> Vec<(&'static str, String)> {
        match self {
            AlgorithmSpec::Forest(p) => vec![
                ("n_trees", p.n_trees.to_string()),
                ("mtry", p.mtry.map_or("auto".into(), |m| m.to_string())),
                ("max_depth", p.max_depth.to_string()),
                ("min_leaf", p.min_leaf.to_string()),
            ],
            AlgorithmSpec::Knn { k } => vec![("k", k.to_string())],
            AlgorithmSpec::Svm(p) => vec![("lambda", p.lambda.to_string()), ("epochs", p.epochs.to_string())],
        }
    }

    /// Overrides one hyperparameter. Returns `Ok(false)` when the key does not
    /// belong to this algorithm.
    pub fn set_hyperparam(&mut self, key: &str, value: &str) -> Result<bool, ClassifyError> {
        let bad = || ClassifyError::InvalidParams(format!("{key}={value}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        match (self, key) {
            (AlgorithmSpec::Forest(p), "n_trees") => p.n_trees = int()?,
            (AlgorithmSpec::Forest(p), "mtry") => p.mtry = if value == "auto" { None } else { Some(int()?) },
            (AlgorithmSpec::Forest(p), "max_depth") => p.max_depth = int()?,
            (AlgorithmSpec::Forest(p), "min_leaf") => p.min_leaf = int()? as u64,
            (AlgorithmSpec::Knn { k }, "k") => *k = int()?,
            (AlgorithmSpec::Svm(p), "lambda") => p.lambda = value.parse().map_err(|_| bad())?,
            (AlgorithmSpec::Svm(p), "epochs") => p.epochs = int()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Payload {
    Forest { params: ForestParams, mtry: usize, trees: Vec<DecisionTree> },
    Knn(KnnModel),
    Svm { params: SvmParams, separators: Vec<PairSeparator> },
}

/// A trained, immutable classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    labels: Vec<String>,
    dim: usize,
    seed: u64,
    payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    /// Vote fractions per label; sums to 1.
    pub scores: BTreeMap<String, f64>,
}

impl TrainedModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> AlgorithmSpec {
        match &self.payload {
            Payload::Forest { params, .. } => AlgorithmSpec::Forest(*params),
            Payload::Knn(m) => AlgorithmSpec::Knn { k: m.k() },
            Payload::Svm { params, .. } => AlgorithmSpec::Svm(*params),
        }
    }

    pub fn trees(&self) -> Option<&[DecisionTree]> {
        match &self.payload {
            Payload::Forest { trees, .. } => Some(trees),
            _ => None,
        }
    }

    pub fn knn(&self) -> Option<&KnnModel> {
        match &self.payload {
            Payload::Knn(m) => Some(m),
            _ => None,
        }
    }

    pub fn separators(&self) -> Option<&[PairSeparator]> {
        match &self.payload {
            Payload::Svm { separators, .. } => Some(separators),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ClassifyError> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(ClassifyError::DimensionMismatch { expected: self.dim, found: x.len() })
        }
    }

    /// Per-label vote counts for `x` (length = number of labels).
    fn votes(&self, x: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.labels.len()];
        match &self.payload {
            Payload::Forest { trees, .. } => {
                for t in trees {
                    votes[t.predict_index(x)] += 1;
                }
            }
            Payload::Knn(m) => {
                for (_, i) in m.neighbors(x) {
                    votes[m.class_of(i) as usize] += 1;
                }
            }
            Payload::Svm { separators, .. } => {
                for s in separators {
                    votes[s.vote(x) as usize] += 1;
                }
            }
        }
        votes
    }

    /// Index into `labels()` of the predicted label.
    pub fn predict_index(&self, x: &[f64]) -> Result<usize, ClassifyError> {
        self.check_dim(x)?;
        Ok(argmax_first(&self.votes(x)))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<&str, ClassifyError> {
        Ok(&self.labels[self.predict_index(x)?])
    }

    /// Serialized form; identical inputs give identical bytes.
    pub fn to_text(&self) -> String {
        serial::write_model(self)
    }
}

/// First index holding the maximum.
fn argmax_first(votes: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = i;
        }
    }
    best
}

/// Majority label with vote-fraction scores; vote ties go to the smaller label.
pub fn predict(model: &TrainedModel, x: &[f64]) -> Result<Prediction, ClassifyError> {
    model.check_dim(x)?;
    let votes = model.votes(x);
    let total: u32 = votes.iter().sum();
    let best = argmax_first(&votes);
    let scores = model
        .labels
        .iter()
        .zip(&votes)
        .map(|(l, &v)| (l.clone(), f64::from(v) / f64::from(total.max(1))))
        .collect();
    Ok(Prediction { label: model.labels[best].clone(), scores })
}

/// Trains the requested classifier; `seed` fixes every random choice.
pub fn train(data: &Dataset, algorithm: &AlgorithmSpec, seed: u64) -> Result<TrainedModel, ClassifyError> {
    match algorithm {
        AlgorithmSpec::Forest(p) => train_forest(data, p, seed),
        AlgorithmSpec::Knn { k } => train_knn(data, *k, seed),
        AlgorithmSpec::Svm(p) => train_svm_ovo(data, p, seed),
    }
}

/// Feature dimension an algorithm will see in a given mode.
pub fn feature_dim(mode: FeatureMode) -> usize {
    mode.dim()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for name in ["rf", "knn1", "knn3", "knn5", "svm"] {
            assert_eq!(AlgorithmSpec::from_name(name).unwrap().name(), name);
        }
        assert!(AlgorithmSpec::from_name("knn0").is_none());
        assert!(AlgorithmSpec::from_name("gbdt").is_none());
    }

    #[test]
    fn hyperparams_can_be_overridden() {
        let mut spec = AlgorithmSpec::default();
        assert!(spec.set_hyperparam("n_trees", "7").unwrap());
        assert!(!spec.set_hyperparam("k", "3").unwrap());
        assert!(spec.set_hyperparam("n_trees", "x").is_err());
        assert_eq!(spec.hyperparams()[0], ("n_trees", "7".to_string()));
    }

    #[test]
    fn dataset_encoding_is_canonical() {
        let mut d = Dataset::new(1);
        for l in ["b", "a", "c", "a"] {
            d.push(&[0.0], l);
        }
        let (classes, y) = d.encode();
        assert_eq!(classes, vec!["a", "b", "c"]);
        assert_eq!(y, vec![1, 0, 2, 0]);
    }
}
