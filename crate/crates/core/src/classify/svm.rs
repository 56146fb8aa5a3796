//! One-vs-one linear SVMs trained with Pegasos-style stochastic subgradient
//! descent on the regularized hinge loss.
//!
//! The bias is folded in as the weight of a constant 1 feature, so it is
//! regularized together with the other weights. Weights are kept as
//! `scale * v` so the per-step shrink is O(1).

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{ClassifyError, Dataset, Payload, TrainedModel};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { lambda: 1e-3, epochs: 50 }
    }
}

/// Linear separator for one label pair; `w·x + b >= 0` votes for `positive`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSeparator {
    pub positive: u32,
    pub negative: u32,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PairSeparator {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn vote(&self, x: &[f64]) -> u32 {
        if self.margin(x) >= 0.0 {
            self.positive
        } else {
            self.negative
        }
    }
}

fn train_pair(
    data: &Dataset,
    members: &[(usize, f64)],
    positive: u32,
    negative: u32,
    params: &SvmParams,
    seed: u64,
) -> PairSeparator {
    let dim = data.dim();
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..members.len()).collect();
    // weights = scale * v; v[dim] is the bias weight.
    let mut v = vec![0.0; dim + 1];
    let mut scale = 1.0;
    let mut t = 0u64;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &j in &order {
            t += 1;
            let (i, label) = members[j];
            let x = data.row(i);
            let eta = 1.0 / (params.lambda * t as f64);
            let dot = scale * (v[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + v[dim]);
            let shrink = 1.0 - eta * params.lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|c| *c = 0.0);
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if label * dot < 1.0 {
                let step = eta * label / scale;
                for (c, xv) in v[..dim].iter_mut().zip(x) {
                    *c += step * xv;
                }
                v[dim] += step;
            }
            if scale < 1e-100 {
                v.iter_mut().for_each(|c| *c *= scale);
                scale = 1.0;
            }
        }
    }
    PairSeparator {
        positive,
        negative,
        weights: v[..dim].iter().map(|c| c * scale).collect(),
        bias: v[dim] * scale,
    }
}

/// One separator per unordered label pair `(a, b)`, `a < b`, in lexicographic
/// pair order. Pair `p` shuffles from `seed::derive(seed, p)`.
pub fn train_svm_ovo(data: &Dataset, params: &SvmParams, seed: u64) -> Result<TrainedModel, ClassifyError> {
    if !(params.lambda > 0.0 && params.lambda.is_finite()) || params.epochs == 0 {
        return Err(ClassifyError::InvalidParams(format!("{params:?}")));
    }
    let (labels, y) = data.encode();
    if labels.len() < 2 {
        return Err(ClassifyError::SingleClass(labels.len()));
    }
    let l = labels.len() as u32;
    let pairs: Vec<(u32, u32)> = (0..l).flat_map(|a| (a + 1..l).map(move |b| (a, b))).collect();
    let separators = pairs
        .par_iter()
        .enumerate()
        .map(|(p, &(a, b))| {
            let members: Vec<(usize, f64)> = y
                .iter()
                .enumerate()
                .filter_map(|(i, &c)| match c {
                    c if c == a => Some((i, 1.0)),
                    c if c == b => Some((i, -1.0)),
                    _ => None,
                })
                .collect();
            train_pair(data, &members, a, b, params, seed::derive(seed, p as u64))
        })
        .collect();
    Ok(TrainedModel { labels, dim: data.dim(), seed, payload: Payload::Svm { params: *params, separators } })
}
