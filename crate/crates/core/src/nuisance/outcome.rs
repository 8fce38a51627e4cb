//! Outcome law of `Y | A = Z = z, X` per arm: Gaussian linear regression for
//! continuous outcomes, logistic regression for outcomes coded `-1/+1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::logistic::fit_logistic;
use super::multinomial::arm_index;
use super::{clip_prob, design_row, validate_mask};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::sensitivity::{tilt_moments, SharedDraws};
use crate::stats::expit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeFamily {
    #[default]
    Gaussian,
    /// `Y` in `{-1, +1}`.
    Sign,
}

/// Conditional law at one `(z, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmLaw {
    Normal { mean: f64, sd: f64 },
    Sign { p_plus: f64 },
}

impl ArmLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Normal { mean, .. } => mean,
            Self::Sign { p_plus } => 2.0 * p_plus - 1.0,
        }
    }

    /// `(gamma, Q)` for `G = c + s y`. Normal laws use the shared standard
    /// normal draws; two-point laws are summed exactly.
    pub fn tilt(&self, c: f64, s: f64, draws: &SharedDraws) -> (f64, f64) {
        match *self {
            Self::Normal { mean, sd } => tilt_moments(c, s, draws.base.iter().map(|e| mean + sd * e)),
            Self::Sign { p_plus } => {
                let (wp, wm) = (expit(c + s), expit(c - s));
                (p_plus * wp + (1.0 - p_plus) * wm, p_plus * wp - (1.0 - p_plus) * wm)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    /// Intercept first.
    pub coef: Vec<f64>,
    /// Residual standard deviation; unused for the sign family.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDensityModel {
    pub family: OutcomeFamily,
    /// Index 0 is `Z = -1`, index 1 is `Z = +1`.
    pub arms: [ArmOutcome; 2],
    pub mask: Vec<usize>,
}

impl OutcomeDensityModel {
    pub fn law(&self, z: i8, x: &[f64]) -> ArmLaw {
        let arm = &self.arms[arm_index(z)];
        let d = design_row(x, &self.mask);
        let eta: f64 = arm.coef.iter().zip(&d).map(|(a, b)| a * b).sum();
        match self.family {
            OutcomeFamily::Gaussian => ArmLaw::Normal { mean: eta, sd: arm.sd },
            OutcomeFamily::Sign => ArmLaw::Sign { p_plus: clip_prob(expit(eta)) },
        }
    }
}

pub fn fit_outcome(dataset: &Dataset, mask: &[usize], family: OutcomeFamily) -> Result<OutcomeDensityModel> {
    validate_mask(mask, dataset.dim_x())?;
    let fit_arm = |z: i8| -> Result<ArmOutcome> {
        let rows: Vec<_> = dataset.rows().iter().filter(|r| r.a == z && r.z == z).collect();
        let p = mask.len() + 1;
        if rows.len() <= p {
            return Err(Error::Fit(format!("only {} rows with A = Z = {z}; need more than {p}", rows.len())));
        }
        let design: Vec<Vec<f64>> = rows.iter().map(|r| design_row(&r.x, mask)).collect();
        match family {
            OutcomeFamily::Gaussian => {
                let n = rows.len();
                let xm = DMatrix::from_fn(n, p, |i, j| design[i][j]);
                let yv = DVector::from_iterator(n, rows.iter().map(|r| r.y));
                let xtx = xm.transpose() * &xm;
                let xty = xm.transpose() * &yv;
                let beta = xtx
                    .cholesky()
                    .map(|c| c.solve(&xty))
                    .ok_or_else(|| Error::Fit(format!("collinear outcome design in arm {z}")))?;
                let resid = &yv - &xm * &beta;
                let sd = (resid.norm_squared() / (n - p) as f64).sqrt();
                if !(sd > 0.0) {
                    return Err(Error::Fit(format!("zero residual variance in arm {z}")));
                }
                Ok(ArmOutcome { coef: beta.iter().copied().collect(), sd })
            }
            OutcomeFamily::Sign => {
                if rows.iter().any(|r| r.y != 1.0 && r.y != -1.0) {
                    return Err(Error::InvalidInput("sign family needs outcomes in {-1, +1}".into()));
                }
                let labels: Vec<f64> = rows.iter().map(|r| if r.y > 0.0 { 1.0 } else { 0.0 }).collect();
                Ok(ArmOutcome { coef: fit_logistic(&design, &labels)?, sd: 0.0 })
            }
        }
    };
    Ok(OutcomeDensityModel { family, arms: [fit_arm(-1)?, fit_arm(1)?], mask: mask.to_vec() })
}
