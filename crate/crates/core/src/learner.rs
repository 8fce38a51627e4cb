//! Weighted hinge-loss policy learner.
//!
//! Minimizes `(1/n) sum_i |W_i| max(0, 1 - sign(W_i) L_i g(x_i)) + (lambda/2) |beta|^2`
//! over linear decision functions `g(x) = beta0 + beta^T x` by full-batch
//! subgradient descent with iterate averaging. The intercept is not
//! penalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, LinearPolicy};
use crate::nuisance::kappa::content_folds;
use crate::weights::WeightVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Minimum decrease of the best objective over a 50-iteration window.
    pub tolerance: f64,
    /// Candidate penalties for cross-validation; empty disables it.
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Multiplier on the base step `1 / (L sqrt(t))`.
    pub step_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { lambda: 0.01, max_iter: 5000, tolerance: 1e-9, lambda_grid: vec![], cv_folds: 5, step_scale: 1.0 }
    }
}

const WINDOW: usize = 50;

/// The penalized weighted hinge objective over a fixed sample.
#[derive(Debug, Clone)]
pub struct HingeObjective {
    /// Rows of `(1, x)` for nonzero weights.
    design: Vec<Vec<f64>>,
    abs_w: Vec<f64>,
    /// `sign(W_i) L_i`.
    target: Vec<f64>,
    n: f64,
    lambda: f64,
}

impl HingeObjective {
    pub fn new(xs: &[&[f64]], weights: &[f64], labels: &[i8], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        if xs.len() != weights.len() || xs.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: xs.len(), got: weights.len().min(labels.len()) });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("non-finite weight".into()));
        }
        let mut design = Vec::new();
        let mut abs_w = Vec::new();
        let mut target = Vec::new();
        for ((x, &w), &l) in xs.iter().zip(weights).zip(labels) {
            if w == 0.0 || l == 0 {
                continue;
            }
            design.push(std::iter::once(1.0).chain(x.iter().copied()).collect());
            abs_w.push(w.abs());
            target.push(w.signum() * l as f64);
        }
        if design.is_empty() {
            return Err(Error::InvalidInput("all weights are zero".into()));
        }
        Ok(Self { design, abs_w, target, n: xs.len() as f64, lambda })
    }

    pub fn dim(&self) -> usize {
        self.design[0].len()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let mut loss = 0.0;
        for ((d, w), t) in self.design.iter().zip(&self.abs_w).zip(&self.target) {
            let g: f64 = d.iter().zip(theta).map(|(a, b)| a * b).sum();
            loss += w * (1.0 - t * g).max(0.0);
        }
        let pen: f64 = theta[1..].iter().map(|b| b * b).sum();
        loss / self.n + 0.5 * self.lambda * pen
    }

    fn subgradient(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((d, w), t) in self.design.iter().zip(&self.abs_w).zip(&self.target) {
            let g: f64 = d.iter().zip(theta).map(|(a, b)| a * b).sum();
            if t * g < 1.0 {
                for (o, a) in out.iter_mut().zip(d) {
                    *o -= w * t * a / self.n;
                }
            }
        }
        for j in 1..out.len() {
            out[j] += self.lambda * theta[j];
        }
    }

    fn lipschitz(&self) -> f64 {
        let s: f64 = self.design.iter().zip(&self.abs_w).map(|(d, w)| w * d.iter().map(|a| a * a).sum::<f64>().sqrt()).sum();
        s / self.n + self.lambda
    }

    /// Deterministic subgradient descent from zero.
    pub fn minimize(&self, cfg: &LearnerConfig) -> Result<Vec<f64>> {
        let p = self.dim();
        let base = cfg.step_scale / self.lipschitz();
        let mut theta = vec![0.0; p];
        let mut avg = vec![0.0; p];
        let mut avg_weight = 0.0;
        let mut grad = vec![0.0; p];
        let mut best = theta.clone();
        let mut best_val = self.value(&theta);
        if !best_val.is_finite() {
            return Err(Error::Numerical("non-finite objective".into()));
        }
        let mut history: Vec<f64> = Vec::with_capacity(cfg.max_iter + 1);
        history.push(best_val);
        for t in 1..=cfg.max_iter {
            self.subgradient(&theta, &mut grad);
            let eta = base / (t as f64).sqrt();
            for (th, g) in theta.iter_mut().zip(&grad) {
                *th -= eta * g;
            }
            avg_weight += eta;
            for (a, th) in avg.iter_mut().zip(&theta) {
                *a += eta / avg_weight * (th - *a);
            }
            for cand in [&theta, &avg] {
                let v = self.value(cand);
                if !v.is_finite() {
                    return Err(Error::Numerical("non-finite objective".into()));
                }
                if v < best_val {
                    best_val = v;
                    best.copy_from_slice(cand);
                }
            }
            history.push(best_val);
            if t >= WINDOW && history[t - WINDOW] - best_val < cfg.tolerance {
                break;
            }
        }
        Ok(best)
    }
}

fn objective_for(dataset: &Dataset, weights: &WeightVector, idx: &[usize], lambda: f64) -> Result<HingeObjective> {
    let xs: Vec<&[f64]> = idx.iter().map(|&i| dataset.rows()[i].x.as_slice()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| weights.values[i]).collect();
    let l: Vec<i8> = idx.iter().map(|&i| weights.labels[i]).collect();
    HingeObjective::new(&xs, &w, &l, lambda)
}

fn to_policy(theta: Vec<f64>) -> LinearPolicy {
    LinearPolicy::new(theta[0], theta[1..].to_vec())
}

/// Fits the penalized weighted hinge objective at `cfg.lambda`.
pub fn learn_policy(dataset: &Dataset, weights: &WeightVector, cfg: &LearnerConfig) -> Result<LinearPolicy> {
    if weights.len() != dataset.len() {
        return Err(Error::DimensionMismatch { expected: dataset.len(), got: weights.len() });
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let obj = objective_for(dataset, weights, &idx, cfg.lambda)?;
    Ok(to_policy(obj.minimize(cfg)?))
}

/// Cross-validated weighted agreement `sum |W_i| I{sign(W_i) L_i = pi(x_i)}`
/// on held-out folds, per candidate penalty.
pub fn cv_scores(dataset: &Dataset, weights: &WeightVector, cfg: &LearnerConfig) -> Result<Vec<(f64, f64)>> {
    if cfg.lambda_grid.is_empty() {
        return Err(Error::InvalidInput("lambda grid is empty".into()));
    }
    if cfg.cv_folds < 2 {
        return Err(Error::InvalidInput("cross-validation needs at least 2 folds".into()));
    }
    let folds = content_folds(dataset, cfg.cv_folds);
    let mut grid = cfg.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let mut score = 0.0;
        for f in 0..cfg.cv_folds {
            let train: Vec<usize> = (0..dataset.len()).filter(|&i| folds[i] != f).collect();
            let obj = match objective_for(dataset, weights, &train, lambda) {
                Ok(o) => o,
                Err(Error::InvalidInput(_)) => continue,
                Err(e) => return Err(e),
            };
            let pol = to_policy(obj.minimize(&LearnerConfig { lambda, ..cfg.clone() })?);
            for i in (0..dataset.len()).filter(|&i| folds[i] == f) {
                let w = weights.values[i];
                if w != 0.0 && (w.signum() as i8) * weights.labels[i] == pol.decide_unchecked(&dataset.rows()[i].x) {
                    score += w.abs();
                }
            }
        }
        out.push((lambda, score));
    }
    Ok(out)
}

/// The penalty with the best cross-validated agreement; ties go to the
/// smallest penalty.
pub fn select_lambda(dataset: &Dataset, weights: &WeightVector, cfg: &LearnerConfig) -> Result<f64> {
    if cfg.lambda_grid.len() == 1 {
        return Ok(cfg.lambda_grid[0]);
    }
    let scores = cv_scores(dataset, weights, cfg)?;
    let mut best = scores[0];
    for &(l, s) in &scores[1..] {
        if s > best.1 {
            best = (l, s);
        }
    }
    Ok(best.0)
}
