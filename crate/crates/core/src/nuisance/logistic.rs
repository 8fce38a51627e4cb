//! Binary logistic regression by iteratively reweighted least squares, and
//! the instrument propensity model built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{clip_prob, design_row, validate_mask};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::stats::expit;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 1e4;

/// Maximum-likelihood logistic fit of `labels` (0/1) on `design` rows.
pub fn fit_logistic(design: &[Vec<f64>], labels: &[f64]) -> Result<Vec<f64>> {
    let n = design.len();
    if n == 0 {
        return Err(Error::Empty("logistic design"));
    }
    let p = design[0].len();
    let mut beta = DVector::<f64>::zeros(p);
    for iter in 0..MAX_ITER {
        let mut score = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for (row, &yl) in design.iter().zip(labels) {
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let w = (mu * (1.0 - mu)).max(1e-12);
            for a in 0..p {
                score[a] += row[a] * (yl - mu);
                for b in 0..=a {
                    info[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .or_else(|| info.lu().solve(&score))
            .ok_or_else(|| Error::Fit(format!("singular information matrix at iteration {iter}")))?;
        if score.amax() < SCORE_TOL {
            // A vanishing score with a non-vanishing Newton step means the
            // likelihood is still increasing along a direction at infinity.
            if step.norm() > 1e-4 * beta.norm().max(1.0) {
                return Err(Error::Fit("logistic likelihood has no finite maximizer; data look separated".into()));
            }
            return Ok(beta.iter().copied().collect());
        }
        beta += step;
        if beta.norm() > SEPARATION_NORM || !beta.iter().all(|v| v.is_finite()) {
            return Err(Error::Fit(format!("logistic coefficients diverged (norm {:.3e}); data look separated", beta.norm())));
        }
    }
    log::debug!("logistic IRLS stopped at {MAX_ITER} iterations");
    Ok(beta.iter().copied().collect())
}

/// `p(Z = 1 | X)` by logistic regression on the retained covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentModel {
    /// Intercept first, then one coefficient per retained covariate.
    pub coef: Vec<f64>,
    pub mask: Vec<usize>,
}

impl InstrumentModel {
    /// A fixed propensity, e.g. a randomized design.
    pub fn constant(p_plus: f64) -> Self {
        Self { coef: vec![crate::stats::logit(p_plus)], mask: vec![] }
    }

    pub fn p_plus(&self, x: &[f64]) -> f64 {
        let eta = self.coef[0] + self.mask.iter().zip(&self.coef[1..]).map(|(&j, b)| b * x[j]).sum::<f64>();
        clip_prob(expit(eta))
    }

    /// `f(z | x)`.
    pub fn prob(&self, z: i8, x: &[f64]) -> f64 {
        let p = self.p_plus(x);
        if z > 0 {
            p
        } else {
            1.0 - p
        }
    }
}

pub fn fit_instrument(dataset: &Dataset, mask: &[usize]) -> Result<InstrumentModel> {
    validate_mask(mask, dataset.dim_x())?;
    if !dataset.has_both_arms() {
        return Err(Error::InvalidInput("instrument model needs both arms".into()));
    }
    let design: Vec<Vec<f64>> = dataset.rows().iter().map(|r| design_row(&r.x, mask)).collect();
    let labels: Vec<f64> = dataset.rows().iter().map(|r| if r.z > 0 { 1.0 } else { 0.0 }).collect();
    let coef = fit_logistic(&design, &labels)?;
    Ok(InstrumentModel { coef, mask: mask.to_vec() })
}
