use super::{ClassifyError, Dataset, Payload, TrainedModel};

/// Lazy neighbor store.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    dim: usize,
    values: Vec<f64>,
    y: Vec<u32>,
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub(crate) fn class_of(&self, instance: usize) -> u32 {
        self.y[instance]
    }

    pub(crate) fn instances(&self) -> impl Iterator<Item = (&[f64], u32)> {
        self.values.chunks_exact(self.dim).zip(self.y.iter().copied())
    }

    /// The k nearest stored instances as `(squared distance, index)`, nearest
    /// first; equal distances order by smaller index.
    ///
    /// Brute force with partial-distance pruning: a candidate is abandoned
    /// once its running sum reaches the current k-th best, which cannot
    /// change the result because later indices lose distance ties.
    pub fn neighbors(&self, x: &[f64]) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        'instances: for (i, row) in self.values.chunks_exact(self.dim).enumerate() {
            let bound = if best.len() == self.k { best[self.k - 1].0 } else { f64::INFINITY };
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                let d = a - b;
                acc += d * d;
                if acc >= bound {
                    continue 'instances;
                }
            }
            let pos = best.iter().position(|&(d, _)| acc < d).unwrap_or(best.len());
            best.insert(pos, (acc, i));
            best.truncate(self.k);
        }
        best
    }
}

/// Stores `data` for k-nearest-neighbor voting under euclidean distance.
pub fn train_knn(data: &Dataset, k: usize, seed: u64) -> Result<TrainedModel, ClassifyError> {
    if k == 0 {
        return Err(ClassifyError::InvalidParams("k must be positive".into()));
    }
    if k > data.len() {
        return Err(ClassifyError::KTooLarge { k, n: data.len() });
    }
    let (labels, y) = data.encode();
    let values = (0..data.len()).flat_map(|i| data.row(i).iter().copied()).collect();
    Ok(TrainedModel {
        labels,
        dim: data.dim(),
        seed,
        payload: Payload::Knn(KnnModel { k, dim: data.dim(), values, y }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::predict;

    #[test]
    fn single_point_wins_everywhere() {
        let mut d = Dataset::new(2);
        d.push(&[0.5, 0.5], "p");
        let m = train_knn(&d, 1, 0).unwrap();
        for q in [[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]] {
            assert_eq!(m.predict_label(&q).unwrap(), "p");
        }
    }

    #[test]
    fn majority_of_three() {
        let mut d = Dataset::new(1);
        d.push(&[0.0], "A");
        d.push(&[0.1], "A");
        d.push(&[0.2], "B");
        d.push(&[5.0], "B");
        d.push(&[6.0], "B");
        let m = train_knn(&d, 3, 0).unwrap();
        let p = predict(&m, &[0.05]).unwrap();
        assert_eq!(p.label, "A");
        assert!((p.scores["A"] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_too_large() {
        let mut d = Dataset::new(1);
        d.push(&[0.0], "A");
        d.push(&[1.0], "B");
        assert_eq!(train_knn(&d, 5, 0).unwrap_err(), ClassifyError::KTooLarge { k: 5, n: 2 });
    }

    #[test]
    fn k1_reproduces_training_labels() {
        let mut d = Dataset::new(2);
        for i in 0..30 {
            let v = i as f64 / 30.0;
            d.push(&[v, 1.0 - v], ["x", "y", "z"][i % 3]);
        }
        // Exact duplicate with a different label: the smaller index must win.
        d.push(d.row(0).to_vec().as_slice(), "z");
        let m = train_knn(&d, 1, 0).unwrap();
        for i in 0..30 {
            assert_eq!(m.predict_label(d.row(i)).unwrap(), d.label(i));
        }
    }

    #[test]
    fn vote_tie_goes_to_smaller_label() {
        let mut d = Dataset::new(1);
        d.push(&[1.0], "b");
        d.push(&[-1.0], "a");
        let m = train_knn(&d, 2, 0).unwrap();
        assert_eq!(m.predict_label(&[0.0]).unwrap(), "a");
    }
}
