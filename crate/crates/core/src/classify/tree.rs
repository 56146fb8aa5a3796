//! CART classification trees with Gini impurity.
//!
//! Features are reduced to per-column dense ranks once per dataset, so node
//! split searches sort small integers instead of floats. Split quality is
//! compared with exact integer arithmetic: for a candidate split the weighted
//! child impurity is `1 - (SL/nl + SR/nr)/n`, where `SL`/`SR` are the sums of
//! squared class counts on each side, so maximizing `SL/nl + SR/nr` as a
//! rational is equivalent and free of rounding ties.
//!
//! Routing rule: `x[feature] < threshold` goes left.

use rand::Rng;

use super::{ClassifyError, Dataset};

/// `1 - Σ (c/n)²` over the given class counts.
pub fn gini<I: IntoIterator<Item = u64>>(counts: I) -> Result<f64, ClassifyError> {
    let counts: Vec<u64> = counts.into_iter().collect();
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(ClassifyError::EmptyCounts);
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Parent Gini minus the size-weighted child Gini.
    pub decrease: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: u64,
    pub mtry: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Nonzero class counts, ascending by class index.
    Leaf { counts: Vec<(u32, u64)>, majority: u32 },
}

/// Nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] < *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    /// Majority class of the leaf reached by `x`; ties go to the smaller class index.
    pub fn predict_index(&self, x: &[f64]) -> usize {
        match self.leaf(x) {
            Node::Leaf { majority, .. } => *majority as usize,
            Node::Split { .. } => unreachable!(),
        }
    }
}

/// Maps an f64 to a u64 whose unsigned order matches `f64::total_cmp`.
fn total_order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 1 << 63
    }
}

/// Column-wise dense ranks of a dataset.
pub(crate) struct Columns {
    /// `ranks[f][i]`: position of instance i's value among the sorted distinct values of feature f.
    ranks: Vec<Vec<u32>>,
    /// `values[f]`: sorted distinct values of feature f.
    values: Vec<Vec<f64>>,
}

impl Columns {
    pub(crate) fn new(data: &Dataset) -> Self {
        let n = data.len();
        let mut ranks = Vec::with_capacity(data.dim());
        let mut values = Vec::with_capacity(data.dim());
        let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(n);
        for f in 0..data.dim() {
            keyed.clear();
            keyed.extend((0..n).map(|i| (total_order_key(data.row(i)[f]), i as u32)));
            keyed.sort_unstable();
            let mut rank = vec![0u32; n];
            let mut distinct: Vec<f64> = Vec::new();
            let mut last_key = None;
            for &(key, i) in &keyed {
                if last_key != Some(key) {
                    distinct.push(data.row(i as usize)[f]);
                    last_key = Some(key);
                }
                rank[i as usize] = (distinct.len() - 1) as u32;
            }
            ranks.push(rank);
            values.push(distinct);
        }
        Columns { ranks, values }
    }

    fn dim(&self) -> usize {
        self.ranks.len()
    }

    fn threshold(&self, feature: usize, left_rank: u32, right_rank: u32) -> f64 {
        let lo = self.values[feature][left_rank as usize];
        let hi = self.values[feature][right_rank as usize];
        let mid = (lo + hi) / 2.0;
        // Adjacent floats: the midpoint rounds onto `lo`, which would route `lo` right.
        if mid > lo {
            mid
        } else {
            hi
        }
    }
}

/// Best split of a node, kept as an exact rational score `num / den`.
#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    left_rank: u32,
    right_rank: u32,
    num: u128,
    den: u128,
}

impl Candidate {
    fn beats(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(o) => self.num * o.den > o.num * self.den,
        }
    }
}

/// Running best split. `approx` mirrors `exact` in floating point so most
/// candidates are rejected without the 128-bit comparison.
#[derive(Default)]
struct Best {
    exact: Option<Candidate>,
    approx: f64,
}

/// Left/right class tallies while sweeping one feature's sorted instances.
struct Scan<'s> {
    feature: usize,
    left: &'s mut [u64],
    total: &'s [u64],
    sl: u64,
    sr: u64,
    nl: u64,
    nr: u64,
    min_leaf: u64,
    /// Last rank fed ([`NONE`] before the first).
    prev_rank: u32,
    /// Class shared by every instance of `prev_rank`, or [`NONE`] if mixed.
    prev_class: u32,
}

const NONE: u32 = u32::MAX;

impl Scan<'_> {
    /// Moves one instance (`class << 16 | weight`) to the left side.
    #[inline(always)]
    fn add(&mut self, key: u32) {
        let class = (key >> 16) as usize;
        let w = u64::from(key & 0xFFFF);
        let lc = self.left[class];
        let rc = self.total[class] - lc;
        self.sl += 2 * lc * w + w * w;
        self.sr -= 2 * rc * w - w * w;
        self.left[class] = lc + w;
        self.nl += w;
        self.nr -= w;
    }

    /// Feeds every instance of `rank` (ascending across calls), first
    /// scoring the cut that separates it from the previous rank.
    ///
    /// Cuts inside a run of single-class ranks are skipped. Along such a run
    /// the score is strictly convex in the cut position, so an interior cut
    /// always loses to one of the run's ends. With `min_leaf > 1` an end may
    /// be inadmissible, so nothing is skipped then.
    #[inline(always)]
    fn run<K: Copy>(&mut self, rank: u32, keys: &[K], key: impl Fn(K) -> u32, best: &mut Best) {
        let first = key(keys[0]) >> 16;
        let class = if keys[1..].iter().all(|&k| key(k) >> 16 == first) { first } else { NONE };
        if self.prev_rank != NONE && (class == NONE || class != self.prev_class || self.min_leaf > 1) {
            self.boundary(self.prev_rank, rank, best);
        }
        for &k in keys {
            self.add(key(k));
        }
        self.prev_rank = rank;
        self.prev_class = class;
    }

    /// Considers splitting between the occupied ranks `lo < hi`.
    #[inline(always)]
    fn boundary(&self, lo: u32, hi: u32, best: &mut Best) {
        if self.nl < self.min_leaf || self.nr < self.min_leaf {
            return;
        }
        // Tallies stay far below 2^63; the signed conversion is a single instruction.
        let f = |v: u64| v as i64 as f64;
        let (nl_f, nr_f) = (f(self.nl), f(self.nr));
        let num_f = f(self.sl) * nr_f + f(self.sr) * nl_f;
        let den_f = nl_f * nr_f;
        // The float score is within a few ulps of the exact one; only a
        // clear loss can be decided without exact arithmetic.
        if best.exact.is_some() && num_f < best.approx * den_f * (1.0 - 1e-12) {
            return;
        }
        let (nl, nr) = (u128::from(self.nl), u128::from(self.nr));
        let cand = Candidate {
            feature: self.feature,
            left_rank: lo,
            right_rank: hi,
            num: u128::from(self.sl) * nr + u128::from(self.sr) * nl,
            den: nl * nr,
        };
        if cand.beats(&best.exact) {
            best.exact = Some(cand);
            best.approx = num_f / den_f;
        }
    }
}

pub(crate) struct Grower<'a> {
    cols: &'a Columns,
    y: &'a [u32],
    w: &'a [u32],
    params: TreeParams,
    nodes: Vec<Node>,
    total: Vec<u64>,
    left: Vec<u64>,
    /// Node instances as `class << 16 | weight`, bucketed by rank.
    keys: Vec<u32>,
    /// Small nodes: `rank << 32 | class << 16 | weight`, sorted.
    sorted: Vec<u64>,
    buckets: Vec<u32>,
    /// Per instance `class << 16 | weight`.
    packed: Vec<u32>,
    features: Vec<usize>,
}

impl<'a> Grower<'a> {
    pub(crate) fn new(cols: &'a Columns, y: &'a [u32], w: &'a [u32], n_classes: usize, params: TreeParams) -> Self {
        assert!(n_classes <= 1 << 16, "at most 65536 classes");
        assert!(w.iter().all(|&x| x < 1 << 16), "instance weights below 65536");
        Grower {
            cols,
            y,
            w,
            params,
            nodes: Vec::new(),
            total: vec![0; n_classes],
            left: vec![0; n_classes],
            keys: vec![0; y.len()],
            sorted: Vec::new(),
            buckets: vec![0; cols.values.iter().map(Vec::len).max().unwrap_or(0)],
            features: (0..cols.dim()).collect(),
            packed: y.iter().zip(w).map(|(&c, &x)| (c << 16) | x).collect(),
        }
    }

    /// Grows a tree over the instances in `idx` (weights from `w`).
    pub(crate) fn grow(mut self, idx: &mut [u32], rng: &mut impl Rng) -> DecisionTree {
        self.grow_node(idx, 0, rng);
        DecisionTree { nodes: self.nodes }
    }

    fn count_classes(&mut self, idx: &[u32]) -> u64 {
        self.total.iter_mut().for_each(|c| *c = 0);
        let mut n = 0;
        for &i in idx {
            let w = u64::from(self.w[i as usize]);
            self.total[self.y[i as usize] as usize] += w;
            n += w;
        }
        n
    }

    fn make_leaf(&self) -> Node {
        let counts: Vec<(u32, u64)> = self
            .total
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| (k as u32, c))
            .collect();
        // max_by_key keeps the last maximum; scan manually for the first.
        let mut majority = counts[0];
        for &(k, c) in &counts[1..] {
            if c > majority.1 {
                majority = (k, c);
            }
        }
        Node::Leaf { counts, majority: majority.0 }
    }

    fn grow_node(&mut self, idx: &mut [u32], depth: usize, rng: &mut impl Rng) -> usize {
        let me = self.nodes.len();
        let n = self.count_classes(idx);
        let pure = self.total.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            let leaf = self.make_leaf();
            self.nodes.push(leaf);
            return me;
        }

        let dim = self.features.len();
        let mtry = self.params.mtry.min(dim);
        for i in 0..mtry {
            let j = rng.random_range(i..dim);
            self.features.swap(i, j);
        }
        let mut candidates: Vec<usize> = self.features[..mtry].to_vec();
        candidates.sort_unstable();

        let Some(best) = self.search(idx, &candidates, n, self.params.min_leaf) else {
            let leaf = self.make_leaf();
            self.nodes.push(leaf);
            return me;
        };

        let threshold = self.cols.threshold(best.feature, best.left_rank, best.right_rank);
        self.nodes.push(Node::Split { feature: best.feature, threshold, left: 0, right: 0 });
        let ranks = &self.cols.ranks[best.feature];
        let mut split_at = 0;
        for k in 0..idx.len() {
            if ranks[idx[k] as usize] <= best.left_rank {
                idx.swap(k, split_at);
                split_at += 1;
            }
        }
        let (lo, hi) = idx.split_at_mut(split_at);
        let left = self.grow_node(lo, depth + 1, rng);
        let right = self.grow_node(hi, depth + 1, rng);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[me] {
            *l = left;
            *r = right;
        }
        me
    }

    /// Highest-scoring split over `candidates` (ascending). Requires
    /// `self.total` to hold the node's class counts. Ties keep the earlier
    /// feature, then the lower threshold.
    fn search(&mut self, idx: &[u32], candidates: &[usize], n: u64, min_leaf: u64) -> Option<Candidate> {
        // Disjoint borrows keep every buffer in a register across the hot loops.
        let Grower { cols, total, left, keys, sorted, buckets, packed, .. } = self;
        let (total, packed) = (&total[..], &packed[..]);
        if total.iter().filter(|&&c| c > 0).count() <= 1 {
            return None;
        }
        let sum_sq_total: u64 = total.iter().map(|&c| c * c).sum();
        let mut best = Best::default();
        for &feature in candidates {
            let ranks = &cols.ranks[feature][..];
            left.fill(0);
            let mut scan = Scan {
                feature,
                left: &mut left[..],
                total,
                sl: 0,
                sr: sum_sq_total,
                nl: 0,
                nr: n,
                min_leaf,
                prev_rank: NONE,
                prev_class: NONE,
            };
            // Count ranks into the (all-zero between uses) buckets while
            // finding the node's rank range.
            let (mut lo, mut hi) = (usize::MAX, 0usize);
            for &i in idx {
                let r = ranks[i as usize] as usize;
                buckets[r] += 1;
                lo = lo.min(r);
                hi = hi.max(r);
            }
            if lo == hi {
                buckets[lo] = 0;
                continue;
            }
            if idx.len() * 4 > hi - lo {
                // Counting sort over the node's rank range, then a scan bucket
                // by bucket so boundaries are only visited between occupied ranks.
                let buckets = &mut buckets[lo..=hi];
                let keys = &mut keys[..idx.len()];
                let mut running = 0;
                for b in buckets.iter_mut() {
                    let count = *b;
                    *b = running;
                    running += count;
                }
                for &i in idx {
                    let slot = &mut buckets[ranks[i as usize] as usize - lo];
                    keys[*slot as usize] = packed[i as usize];
                    *slot += 1;
                }
                // Each bucket now holds the end of its rank's run.
                let mut start = 0usize;
                for (r, b) in buckets.iter_mut().enumerate() {
                    let end = *b as usize;
                    *b = 0;
                    if end == start {
                        continue;
                    }
                    scan.run((r + lo) as u32, &keys[start..end], |k| k, &mut best);
                    start = end;
                }
            } else {
                for &i in idx {
                    buckets[ranks[i as usize] as usize] = 0;
                }
                sorted.clear();
                sorted.extend(idx.iter().map(|&i| (u64::from(ranks[i as usize]) << 32) | u64::from(packed[i as usize])));
                sorted.sort_unstable();
                for run in sorted.chunk_by(|a, b| a >> 32 == b >> 32) {
                    scan.run((run[0] >> 32) as u32, run, |k| k as u32, &mut best);
                }
            }
        }
        best.exact
    }

    fn decrease(&self, best: &Candidate, n: u64) -> f64 {
        let n = n as f64;
        let sum_sq: f64 = self.total.iter().map(|&c| (c as f64) * (c as f64)).sum();
        let score = best.num as f64 / best.den as f64;
        score / n - sum_sq / (n * n)
    }
}

/// Exhaustive CART split search over the whole dataset.
///
/// Thresholds are midpoints between consecutive distinct values of a
/// feature. Returns `None` when the data is pure or no feature has two
/// distinct values.
pub fn best_split(data: &Dataset, candidate_features: &[usize]) -> Option<Split> {
    if data.is_empty() {
        return None;
    }
    let (classes, y) = data.encode();
    let cols = Columns::new(data);
    let w = vec![1u32; data.len()];
    let params = TreeParams { max_depth: 1, min_leaf: 1, mtry: data.dim() };
    let mut grower = Grower::new(&cols, &y, &w, classes.len(), params);
    let idx: Vec<u32> = (0..data.len() as u32).collect();
    let n = grower.count_classes(&idx);
    let mut candidates: Vec<usize> = candidate_features.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    assert!(candidates.iter().all(|&f| f < data.dim()), "candidate feature out of range");
    let best = grower.search(&idx, &candidates, n, 1)?;
    Some(Split {
        feature: best.feature,
        threshold: cols.threshold(best.feature, best.left_rank, best.right_rank),
        decrease: grower.decrease(&best, n),
    })
}

/// Grows one unbagged tree over every instance of `data`.
///
/// Class indices in the returned tree follow `data.label_set()`.
pub fn train_tree(data: &Dataset, params: TreeParams, rng: &mut impl Rng) -> Result<DecisionTree, ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    validate_tree_params(&params, data.dim())?;
    let (classes, y) = data.encode();
    let cols = Columns::new(data);
    let w = vec![1u32; data.len()];
    let mut idx: Vec<u32> = (0..data.len() as u32).collect();
    Ok(Grower::new(&cols, &y, &w, classes.len(), params).grow(&mut idx, rng))
}

pub(crate) fn validate_tree_params(params: &TreeParams, dim: usize) -> Result<(), ClassifyError> {
    if params.mtry == 0 || params.mtry > dim {
        return Err(ClassifyError::InvalidParams(format!("mtry {} must be in 1..={dim}", params.mtry)));
    }
    if params.max_depth == 0 || params.min_leaf == 0 {
        return Err(ClassifyError::InvalidParams("max_depth and min_leaf must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn one_d(points: &[(f64, &str)]) -> Dataset {
        let mut d = Dataset::new(1);
        for (x, l) in points {
            d.push(&[*x], l);
        }
        d
    }

    #[test]
    fn gini_hand_cases() {
        assert_eq!(gini([5]).unwrap(), 0.0);
        assert_eq!(gini([1, 1]).unwrap(), 0.5);
        assert_eq!(gini([3, 1]).unwrap(), 0.375);
        assert!(matches!(gini([0, 0]), Err(ClassifyError::EmptyCounts)));
        assert!(matches!(gini(std::iter::empty()), Err(ClassifyError::EmptyCounts)));
    }

    #[test]
    fn pure_data_has_no_split() {
        let d = one_d(&[(0.1, "A"), (0.5, "A"), (0.9, "A")]);
        assert_eq!(best_split(&d, &[0]), None);
        let constant = one_d(&[(0.3, "A"), (0.3, "B")]);
        assert_eq!(best_split(&constant, &[0]), None);
    }

    #[test]
    fn one_dimensional_midpoint() {
        let d = one_d(&[(0.1, "A"), (0.2, "A"), (0.8, "B"), (0.9, "B")]);
        let s = best_split(&d, &[0]).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 0.5);
        assert!((s.decrease - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equal_features_prefer_lower_index() {
        let mut d = Dataset::new(2);
        for (x, l) in [(0.1, "A"), (0.2, "A"), (0.8, "B"), (0.9, "B")] {
            d.push(&[x, x], l);
        }
        assert_eq!(best_split(&d, &[1, 0]).unwrap().feature, 0);
        assert_eq!(best_split(&d, &[1]).unwrap().feature, 1);
    }

    #[test]
    fn single_instance_is_leaf() {
        let d = one_d(&[(0.4, "only")]);
        let params = TreeParams { max_depth: 16, min_leaf: 1, mtry: 1 };
        let t = train_tree(&d, params, &mut seed::rng(1)).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict_index(&[0.9]), 0);
    }

    #[test]
    fn separable_data_gives_depth_one_tree() {
        let d = one_d(&[(0.05, "A"), (0.1, "A"), (0.3, "A"), (0.6, "B"), (0.7, "B"), (0.95, "B")]);
        let params = TreeParams { max_depth: 16, min_leaf: 1, mtry: 1 };
        let t = train_tree(&d, params, &mut seed::rng(3)).unwrap();
        assert_eq!(t.depth(), 1);
        let (_, y) = d.encode();
        for i in 0..d.len() {
            assert_eq!(t.predict_index(d.row(i)), y[i] as usize);
        }
    }

    #[test]
    fn same_seed_same_tree() {
        let mut d = Dataset::new(3);
        let mut r = seed::rng(9);
        for i in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| r.random::<f64>()).collect();
            d.push(&x, ["a", "b", "c"][i % 3]);
        }
        let params = TreeParams { max_depth: 8, min_leaf: 2, mtry: 2 };
        let a = train_tree(&d, params, &mut seed::rng(5)).unwrap();
        let b = train_tree(&d, params, &mut seed::rng(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.depth() <= 8);
        for node in a.nodes() {
            if let Node::Leaf { counts, .. } = node {
                assert!(counts.iter().map(|c| c.1).sum::<u64>() >= 1);
            }
        }
    }

    #[test]
    fn depth_limit_and_min_leaf_respected() {
        let mut d = Dataset::new(1);
        for i in 0..64 {
            d.push(&[i as f64], if (i / 2) % 2 == 0 { "x" } else { "y" });
        }
        let params = TreeParams { max_depth: 3, min_leaf: 5, mtry: 1 };
        let t = train_tree(&d, params, &mut seed::rng(0)).unwrap();
        assert!(t.depth() <= 3);
        for node in t.nodes() {
            if let Node::Leaf { counts, .. } = node {
                assert!(counts.iter().map(|c| c.1).sum::<u64>() >= 5);
            }
        }
        let bad = TreeParams { max_depth: 3, min_leaf: 1, mtry: 2 };
        assert!(train_tree(&d, bad, &mut seed::rng(0)).is_err());
    }
}
