//! Gradient-boosted depth-2 regression trees with quantile split candidates.
//! Fitting is deterministic: no subsampling, ties in split gain go to the
//! lowest feature and threshold index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    /// Upper bound on split candidates per feature.
    pub max_bins: usize,
    pub min_leaf: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self { n_trees: 100, learning_rate: 0.1, max_bins: 32, min_leaf: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    base: f64,
    learning_rate: f64,
    trees: Vec<Node>,
}

impl BoostedTrees {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

struct Binned {
    thresholds: Vec<Vec<f64>>,
    /// `bins[f][i]` = number of thresholds of feature `f` below `x[i][f]`.
    bins: Vec<Vec<u16>>,
}

fn bin_features(x: &[Vec<f64>], max_bins: usize) -> Binned {
    let d = x[0].len();
    let n = x.len();
    let mut thresholds = Vec::with_capacity(d);
    let mut bins = Vec::with_capacity(d);
    for f in 0..d {
        let mut v: Vec<f64> = x.iter().map(|r| r[f]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        let th: Vec<f64> = if v.len() <= max_bins + 1 {
            v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
        } else {
            let mut th: Vec<f64> = (1..=max_bins)
                .map(|q| {
                    let pos = q * (v.len() - 1) / (max_bins + 1);
                    0.5 * (v[pos] + v[pos + 1])
                })
                .collect();
            th.dedup();
            th
        };
        bins.push((0..n).map(|i| th.partition_point(|t| *t < x[i][f]) as u16).collect());
        thresholds.push(th);
    }
    Binned { thresholds, bins }
}

struct SplitChoice {
    feature: usize,
    bin: usize,
    gain: f64,
}

fn best_split(rows: &[usize], resid: &[f64], binned: &Binned, min_leaf: usize) -> Option<SplitChoice> {
    if rows.len() < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| resid[i]).sum();
    let n = rows.len() as f64;
    let mut best: Option<SplitChoice> = None;
    for (f, th) in binned.thresholds.iter().enumerate() {
        if th.is_empty() {
            continue;
        }
        let mut sum = vec![0.0; th.len() + 1];
        let mut cnt = vec![0usize; th.len() + 1];
        for &i in rows {
            let b = binned.bins[f][i] as usize;
            sum[b] += resid[i];
            cnt[b] += 1;
        }
        let (mut sl, mut nl) = (0.0, 0usize);
        for t in 0..th.len() {
            sl += sum[t];
            nl += cnt[t];
            let nr = rows.len() - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let sr = total - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - total * total / n;
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice { feature: f, bin: t, gain });
            }
        }
    }
    best
}

fn leaf(rows: &[usize], resid: &[f64]) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&i| resid[i]).sum::<f64>() / rows.len() as f64
    }
}

fn grow(rows: &[usize], resid: &[f64], binned: &Binned, min_leaf: usize, depth: usize) -> Node {
    if depth == 0 {
        return Node::Leaf(leaf(rows, resid));
    }
    match best_split(rows, resid, binned, min_leaf) {
        None => Node::Leaf(leaf(rows, resid)),
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| binned.bins[s.feature][i] as usize <= s.bin);
            Node::Split {
                feature: s.feature,
                threshold: binned.thresholds[s.feature][s.bin],
                left: Box::new(grow(&l, resid, binned, min_leaf, depth - 1)),
                right: Box::new(grow(&r, resid, binned, min_leaf, depth - 1)),
            }
        }
    }
}

/// Least-squares boosting of depth-2 trees.
pub fn fit_boosted(x: &[Vec<f64>], y: &[f64], cfg: &BoostConfig) -> Result<BoostedTrees> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput("boosting needs matching, nonempty inputs".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite regression target".into()));
    }
    if !(cfg.learning_rate > 0.0) || cfg.max_bins == 0 || cfg.max_bins > u16::MAX as usize - 1 {
        return Err(Error::Config("invalid boosting configuration".into()));
    }
    let base = crate::stats::mean(y);
    let binned = bin_features(x, cfg.max_bins);
    let mut pred = vec![base; y.len()];
    let mut resid: Vec<f64> = y.iter().map(|v| v - base).collect();
    let rows: Vec<usize> = (0..y.len()).collect();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        let tree = grow(&rows, &resid, &binned, cfg.min_leaf.max(1), 2);
        if matches!(tree, Node::Leaf(v) if v.abs() < 1e-15) {
            break;
        }
        for i in 0..y.len() {
            pred[i] += cfg.learning_rate * tree.predict(&x[i]);
            resid[i] = y[i] - pred[i];
        }
        trees.push(tree);
    }
    Ok(BoostedTrees { base, learning_rate: cfg.learning_rate, trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_is_reproduced() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let m = fit_boosted(&x, &vec![2.5; 50], &BoostConfig::default()).unwrap();
        assert_eq!(m.n_trees(), 0);
        assert_eq!(m.predict(&[7.0, 1.0]), 2.5);
    }

    #[test]
    fn step_function_is_learned() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 100.0 - 1.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.0 { 1.0 } else { -1.0 }).collect();
        let m = fit_boosted(&x, &y, &BoostConfig { n_trees: 200, ..BoostConfig::default() }).unwrap();
        assert!((m.predict(&[0.5]) - 1.0).abs() < 0.01);
        assert!((m.predict(&[-0.5]) + 1.0).abs() < 0.01);
    }

    #[test]
    fn fitting_is_deterministic() {
        let x: Vec<Vec<f64>> = (0..120).map(|i| vec![(i * 37 % 101) as f64, (i % 2) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] / 10.0).sin() + r[1]).collect();
        let a = fit_boosted(&x, &y, &BoostConfig::default()).unwrap();
        let b = fit_boosted(&x, &y, &BoostConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
