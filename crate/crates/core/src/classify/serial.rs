//! `#popa-model v1` text form.
//!
//! ```text
//! #popa-model v1
//! algorithm=rf
//! seed=1
//! dim=16
//! labels=s01,s02,...
//! n_trees=100            (hyperparameters, one per line)
//! tree=0 nodes=37
//! S 3 0.41
//! L 0:5 2:1
//! ```
//!
//! Trees are preorder node lists: `S <feature> <threshold>` is followed by its
//! left subtree, then its right subtree; `L` lists `class:count` pairs.
//! KNN payloads list `I <class> <values...>` rows, SVM payloads
//! `P <positive> <negative> <bias> <weights...>`. Floats use Rust's shortest
//! round-trip formatting.

use std::fmt::Write as _;

use super::{Node, Payload, TrainedModel, MODEL_MAGIC};

pub(super) fn write_model(model: &TrainedModel) -> String {
    let mut out = String::new();
    out.push_str(MODEL_MAGIC);
    out.push('\n');
    let algorithm = model.algorithm();
    let _ = writeln!(out, "algorithm={}", algorithm.name());
    let _ = writeln!(out, "seed={}", model.seed);
    let _ = writeln!(out, "dim={}", model.dim);
    let _ = writeln!(out, "labels={}", model.labels.join(","));
    for (k, v) in algorithm.hyperparams() {
        let _ = writeln!(out, "{k}={v}");
    }
    match &model.payload {
        Payload::Forest { mtry, trees, .. } => {
            let _ = writeln!(out, "resolved_mtry={mtry}");
            for (t, tree) in trees.iter().enumerate() {
                let _ = writeln!(out, "tree={t} nodes={}", tree.nodes().len());
                for node in tree.nodes() {
                    match node {
                        Node::Split { feature, threshold, .. } => {
                            let _ = writeln!(out, "S {feature} {threshold}");
                        }
                        Node::Leaf { counts, .. } => {
                            out.push('L');
                            for (class, count) in counts {
                                let _ = write!(out, " {class}:{count}");
                            }
                            out.push('\n');
                        }
                    }
                }
            }
        }
        Payload::Knn(m) => {
            for (row, class) in m.instances() {
                let _ = write!(out, "I {class}");
                for v in row {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        Payload::Svm { separators, .. } => {
            for s in separators {
                let _ = write!(out, "P {} {} {}", s.positive, s.negative, s.bias);
                for w in &s.weights {
                    let _ = write!(out, " {w}");
                }
                out.push('\n');
            }
        }
    }
    out
}
