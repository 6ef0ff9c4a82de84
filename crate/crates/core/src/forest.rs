//! Classification random forest with out-of-bag error and permutation
//! importance.
//!
//! Importance of feature `j` is the mean over trees of the increase in a
//! tree's out-of-bag misclassification rate after the feature's values are
//! permuted within that tree's out-of-bag sample.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub ntree: usize,
    /// Features tried at each node.
    pub mtry: usize,
    /// Nodes with fewer samples become leaves.
    pub min_node: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            ntree: 400,
            mtry: 2,
            min_node: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        counts: [u32; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary tree; `x[feature] <= threshold` goes left. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> &[u32; 2] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Majority class of the reached leaf; ties go to 0.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let c = self.leaf_for(x);
        u8::from(c[1] > c[0])
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Sorted out-of-bag indices per tree.
    pub oob: Vec<Vec<usize>>,
    /// Bootstrap sample (with repeats) per tree.
    pub in_bag: Vec<Vec<usize>>,
    pub config: ForestConfig,
    pub n_features: usize,
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = counts[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

struct Grower<'a, R: Rng> {
    data: &'a Dataset,
    mtry: usize,
    min_node: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, root: Vec<usize>) {
        self.nodes.push(Node::Leaf { counts: [0, 0] });
        let mut stack = vec![(0usize, root)];
        while let Some((slot, idx)) = stack.pop() {
            let mut counts = [0usize; 2];
            for &i in &idx {
                counts[self.data.y[i] as usize] += 1;
            }
            let leaf = Node::Leaf {
                counts: [counts[0] as u32, counts[1] as u32],
            };
            if idx.len() < self.min_node.max(2) || counts[0] == 0 || counts[1] == 0 {
                self.nodes[slot] = leaf;
                continue;
            }
            match self.best_split(&idx, counts) {
                None => self.nodes[slot] = leaf,
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx
                        .iter()
                        .partition(|&&i| self.data.x.row(i)[feature] <= threshold);
                    let left = self.nodes.len();
                    self.nodes.push(Node::Leaf { counts: [0, 0] });
                    let right = self.nodes.len();
                    self.nodes.push(Node::Leaf { counts: [0, 0] });
                    self.nodes[slot] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((right, r));
                    stack.push((left, l));
                }
            }
        }
    }

    /// Largest Gini decrease over `mtry` sampled features.
    fn best_split(&mut self, idx: &[usize], counts: [usize; 2]) -> Option<(usize, f64)> {
        let d = self.data.dim();
        let parent = gini(counts);
        let n = idx.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let features = index::sample(self.rng, d, self.mtry.min(d));
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        for feature in features.iter() {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.data.x.row(i)[feature], self.data.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..pairs.len() - 1 {
                left[pairs[k].1 as usize] += 1;
                let (a, b) = (pairs[k].0, pairs[k + 1].0);
                if a == b {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let nl = (k + 1) as f64;
                let decrease = parent - (nl / n) * gini(left) - ((n - nl) / n) * gini(right);
                if best.is_none_or(|(bd, _, _)| decrease > bd) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((decrease, feature, threshold));
                }
            }
        }
        match best {
            Some((decrease, feature, threshold)) if decrease > 0.0 => Some((feature, threshold)),
            _ => None,
        }
    }
}

pub fn fit_forest(data: &Dataset, config: &ForestConfig) -> Result<Forest> {
    let n = data.len();
    let d = data.dim();
    if n < 2 {
        return Err(Error::Insufficient(format!("forest needs >= 2 rows, got {n}")));
    }
    data.require_both_classes()?;
    if config.mtry == 0 || config.mtry > d {
        return Err(Error::InvalidParameter(format!(
            "mtry must be in 1..={d}, got {}",
            config.mtry
        )));
    }
    if config.ntree == 0 {
        return Err(Error::InvalidParameter("ntree must be >= 1".into()));
    }
    let grown: Vec<(Tree, Vec<usize>, Vec<usize>)> = (0..config.ntree)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(config.seed, &[rng::tag::FOREST, t as u64]);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut drawn = vec![false; n];
            for &i in &sample {
                drawn[i] = true;
            }
            let oob: Vec<usize> = (0..n).filter(|&i| !drawn[i]).collect();
            let mut grower = Grower {
                data,
                mtry: config.mtry,
                min_node: config.min_node,
                rng: &mut rng,
                nodes: Vec::new(),
            };
            grower.grow(sample.clone());
            (Tree { nodes: grower.nodes }, oob, sample)
        })
        .collect();
    let mut trees = Vec::with_capacity(config.ntree);
    let mut oob = Vec::with_capacity(config.ntree);
    let mut in_bag = Vec::with_capacity(config.ntree);
    for (t, o, s) in grown {
        trees.push(t);
        oob.push(o);
        in_bag.push(s);
    }
    Ok(Forest {
        trees,
        oob,
        in_bag,
        config: *config,
        n_features: d,
    })
}

impl Forest {
    /// Majority vote over all trees; ties go to 0.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let votes: usize = self.trees.iter().map(|t| t.predict(x) as usize).sum();
        u8::from(2 * votes > self.trees.len())
    }

    /// Misclassification rate of tree `t` on its out-of-bag rows; `None` when
    /// that set is empty.
    pub fn per_tree_oob_error(&self, data: &Dataset, t: usize) -> Option<f64> {
        let oob = &self.oob[t];
        if oob.is_empty() {
            return None;
        }
        let wrong = oob
            .iter()
            .filter(|&&i| self.trees[t].predict(data.x.row(i)) != data.y[i])
            .count();
        Some(wrong as f64 / oob.len() as f64)
    }

    pub fn mean_oob_fraction(&self) -> f64 {
        let n = self.in_bag.first().map_or(0, Vec::len) as f64;
        self.oob.iter().map(|o| o.len() as f64 / n).sum::<f64>() / self.oob.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OobReport {
    pub error: f64,
    /// Rows with at least one tree voting out-of-bag.
    pub n_scored: usize,
    /// Trees whose out-of-bag set was empty.
    pub empty_trees: usize,
}

/// Ensemble out-of-bag error: each row is classified by majority vote over
/// the trees for which it is out-of-bag.
pub fn oob_error(forest: &Forest, data: &Dataset) -> Result<OobReport> {
    if data.dim() != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            actual: data.dim(),
        });
    }
    let n = data.len();
    let mut votes = vec![[0u32; 2]; n];
    let mut empty_trees = 0;
    for (tree, oob) in forest.trees.iter().zip(&forest.oob) {
        if oob.is_empty() {
            empty_trees += 1;
            continue;
        }
        for &i in oob {
            if i >= n {
                return Err(Error::DimensionMismatch {
                    expected: i + 1,
                    actual: n,
                });
            }
            votes[i][tree.predict(data.x.row(i)) as usize] += 1;
        }
    }
    if empty_trees > 0 {
        log::warn!("{empty_trees} trees have an empty out-of-bag set");
    }
    let mut scored = 0;
    let mut wrong = 0;
    for (v, &y) in votes.iter().zip(&data.y) {
        if v[0] + v[1] == 0 {
            continue;
        }
        scored += 1;
        if u8::from(v[1] > v[0]) != y {
            wrong += 1;
        }
    }
    Ok(OobReport {
        error: if scored == 0 { f64::NAN } else { wrong as f64 / scored as f64 },
        n_scored: scored,
        empty_trees,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    /// Mean increase in out-of-bag error per feature.
    pub raw: Vec<f64>,
    /// `raw` in percentage points of accuracy ("mean decrease accuracy").
    pub percent: Vec<f64>,
}

/// Shuffles `values` for tree `t` and feature `j`.
pub fn permute_for(seed: u64, t: usize, j: usize, values: &mut [f64]) {
    let mut r = rng::stream(seed, &[rng::tag::IMPORTANCE, t as u64, j as u64]);
    values.shuffle(&mut r);
}

pub fn permutation_importance(forest: &Forest, data: &Dataset, seed: u64) -> Result<Importance> {
    if data.dim() != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            actual: data.dim(),
        });
    }
    let d = forest.n_features;
    let ntree = forest.trees.len();
    let base: Vec<Option<f64>> = (0..ntree).map(|t| forest.per_tree_oob_error(data, t)).collect();
    let raw: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            let mut row = vec![0.0; d];
            for (t, (oob, &base_err)) in forest.oob.iter().zip(&base).enumerate() {
                let Some(base_err) = base_err else { continue };
                if oob.len() < 2 {
                    continue;
                }
                let mut values: Vec<f64> = oob.iter().map(|&i| data.x.row(i)[j]).collect();
                permute_for(seed, t, j, &mut values);
                let mut wrong = 0usize;
                for (&i, &v) in oob.iter().zip(&values) {
                    row.copy_from_slice(data.x.row(i));
                    row[j] = v;
                    if forest.trees[t].predict(&row) != data.y[i] {
                        wrong += 1;
                    }
                }
                total += wrong as f64 / oob.len() as f64 - base_err;
            }
            total / ntree as f64
        })
        .collect();
    let percent = raw.iter().map(|v| 100.0 * v).collect();
    Ok(Importance { raw, percent })
}

/// Pearson correlation matrix of the columns; constant columns correlate 0
/// with everything except themselves.
pub fn correlation_matrix(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    let d = x.n_cols();
    let n = x.n_rows() as f64;
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
    let centered: Vec<(Vec<f64>, f64)> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n;
            let v: Vec<f64> = c.iter().map(|x| x - m).collect();
            let ss = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (v, ss)
        })
        .collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        out[i][i] = 1.0;
        for j in i + 1..d {
            let (a, sa) = &centered[i];
            let (b, sb) = &centered[j];
            let r = if *sa > 0.0 && *sb > 0.0 {
                a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (sa * sb)
            } else {
                0.0
            };
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Chosen feature indices in descending importance.
    pub features: Vec<usize>,
    /// Fewer than `k` features survived the correlation filter.
    pub short: bool,
}

/// Walks features by descending importance, skipping any whose absolute
/// correlation with an already-chosen feature exceeds `corr_threshold`.
pub fn select_features(
    importance: &[f64],
    correlations: &[Vec<f64>],
    k: usize,
    corr_threshold: f64,
) -> Result<Selection> {
    let d = importance.len();
    if k > d {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds {d} features")));
    }
    if correlations.len() != d || correlations.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: correlations.len(),
        });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let mut features = Vec::with_capacity(k);
    for j in order {
        if features.len() == k {
            break;
        }
        if features
            .iter()
            .all(|&s: &usize| correlations[j][s].abs() <= corr_threshold)
        {
            features.push(j);
        }
    }
    let short = features.len() < k;
    if short {
        log::warn!("only {} of {k} features passed the correlation filter", features.len());
    }
    Ok(Selection { features, short })
}

/// Indices of features sorted by descending importance.
pub fn ranking(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order
}
