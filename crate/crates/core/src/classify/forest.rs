use rand::Rng;
use rayon::prelude::*;

use super::tree::{validate_tree_params, Columns, Grower, TreeParams};
use super::{ClassifyError, Dataset, Payload, TrainedModel};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` means `ceil(sqrt(dim))`.
    pub mtry: Option<usize>,
    pub max_depth: usize,
    pub min_leaf: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, mtry: None, max_depth: 16, min_leaf: 1 }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, dim: usize) -> usize {
        self.mtry.unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
    }
}

/// Bagged CART forest.
///
/// Tree `t` draws its bootstrap (n draws with replacement) and its feature
/// subsets from `seed::derive(seed, t)`. Trees may be grown in parallel and are
/// assembled in index order, so the result does not depend on thread count.
pub fn train_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<TrainedModel, ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    if params.n_trees == 0 {
        return Err(ClassifyError::InvalidParams("n_trees must be positive".into()));
    }
    let mtry = params.resolved_mtry(data.dim());
    let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf, mtry };
    validate_tree_params(&tree_params, data.dim())?;

    let (labels, y) = data.encode();
    let cols = Columns::new(data);
    let n = data.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(seed, t as u64));
            let mut weights = vec![0u32; n];
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1;
            }
            let mut idx: Vec<u32> = (0..n as u32).filter(|&i| weights[i as usize] > 0).collect();
            Grower::new(&cols, &y, &weights, labels.len(), tree_params).grow(&mut idx, &mut rng)
        })
        .collect();
    Ok(TrainedModel {
        labels,
        dim: data.dim(),
        seed,
        payload: Payload::Forest { params: *params, mtry, trees },
    })
}
