//! Multinomial logistic compliance model `f(A | Z, X)`, fitted separately in
//! each instrument arm with `A = 0` as the reference category.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{design_row, validate_mask, PROB_EPS};
use crate::error::{Error, Result};
use crate::model::Dataset;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 1e4;

/// Fit within one arm. `categories[0]` is the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCompliance {
    pub categories: Vec<i8>,
    /// One coefficient vector per non-reference category.
    pub coef: Vec<Vec<f64>>,
}

impl ArmCompliance {
    fn raw(&self, d: &[f64]) -> [f64; 3] {
        let mut eta = vec![0.0; self.categories.len()];
        for (c, b) in self.coef.iter().enumerate() {
            eta[c + 1] = b.iter().zip(d).map(|(a, v)| a * v).sum();
        }
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let den: f64 = eta.iter().map(|e| (e - m).exp()).sum();
        let mut out = [0.0; 3];
        for (c, &cat) in self.categories.iter().enumerate() {
            out[(cat + 1) as usize] = (eta[c] - m).exp() / den;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceModel {
    /// Index 0 is `Z = -1`, index 1 is `Z = +1`.
    pub arms: [ArmCompliance; 2],
    pub mask: Vec<usize>,
}

impl ComplianceModel {
    /// Unclipped probabilities of `A = -1, 0, +1`.
    pub fn raw_probs(&self, z: i8, x: &[f64]) -> [f64; 3] {
        self.arms[arm_index(z)].raw(&design_row(x, &self.mask))
    }

    /// Probabilities of `A = -1, 0, +1`, floored away from 0 and 1.
    pub fn probs(&self, z: i8, x: &[f64]) -> [f64; 3] {
        let raw = self.raw_probs(z, x);
        raw.map(|p| PROB_EPS + (1.0 - 3.0 * PROB_EPS) * p)
    }

    pub fn prob(&self, a: i8, z: i8, x: &[f64]) -> f64 {
        self.probs(z, x)[(a + 1) as usize]
    }
}

pub(crate) fn arm_index(z: i8) -> usize {
    if z > 0 {
        1
    } else {
        0
    }
}

pub fn fit_compliance(dataset: &Dataset, mask: &[usize]) -> Result<ComplianceModel> {
    validate_mask(mask, dataset.dim_x())?;
    for cat in [-1i8, 0, 1] {
        if !dataset.rows().iter().any(|r| r.a == cat) {
            return Err(Error::MissingCategory { category: cat });
        }
    }
    let fit_arm = |z: i8| -> Result<ArmCompliance> {
        let rows: Vec<_> = dataset.rows().iter().filter(|r| r.z == z).collect();
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!("no rows in instrument arm {z}")));
        }
        let categories: Vec<i8> = [0i8, -1, 1].into_iter().filter(|c| rows.iter().any(|r| r.a == *c)).collect();
        let design: Vec<Vec<f64>> = rows.iter().map(|r| design_row(&r.x, mask)).collect();
        let labels: Vec<usize> = rows.iter().map(|r| categories.iter().position(|c| *c == r.a).unwrap()).collect();
        let coef = fit_softmax(&design, &labels, categories.len())?;
        Ok(ArmCompliance { categories, coef })
    };
    Ok(ComplianceModel { arms: [fit_arm(-1)?, fit_arm(1)?], mask: mask.to_vec() })
}

/// Newton-Raphson on the full Hessian of the multinomial log-likelihood.
fn fit_softmax(design: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 1 {
        return Ok(vec![]);
    }
    let p = design[0].len();
    let m = k - 1;
    let dim = m * p;
    let mut beta = DVector::<f64>::zeros(dim);
    for iter in 0..MAX_ITER {
        let mut score = DVector::<f64>::zeros(dim);
        let mut info = DMatrix::<f64>::zeros(dim, dim);
        let mut probs = vec![0.0; k];
        for (d, &lab) in design.iter().zip(labels) {
            probs[0] = 0.0;
            for c in 0..m {
                probs[c + 1] = (0..p).map(|j| beta[c * p + j] * d[j]).sum();
            }
            let mx = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let den: f64 = probs.iter().map(|e| (e - mx).exp()).sum();
            for v in probs.iter_mut() {
                *v = (*v - mx).exp() / den;
            }
            for c in 0..m {
                let resid = if lab == c + 1 { 1.0 } else { 0.0 } - probs[c + 1];
                for j in 0..p {
                    score[c * p + j] += d[j] * resid;
                }
                for e in 0..=c {
                    let wce = probs[c + 1] * (if c == e { 1.0 } else { 0.0 } - probs[e + 1]);
                    for j in 0..p {
                        for l in 0..p {
                            info[(c * p + j, e * p + l)] += wce * d[j] * d[l];
                        }
                    }
                }
            }
        }
        for r in 0..dim {
            for c in (r + 1)..dim {
                info[(r, c)] = info[(c, r)];
            }
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .or_else(|| info.lu().solve(&score))
            .ok_or_else(|| Error::Fit(format!("singular multinomial information at iteration {iter}")))?;
        if score.amax() < SCORE_TOL {
            if step.norm() > 1e-4 * beta.norm().max(1.0) {
                return Err(Error::Fit("multinomial likelihood has no finite maximizer; data look separated".into()));
            }
            break;
        }
        beta += step;
        if beta.norm() > SEPARATION_NORM || !beta.iter().all(|v| v.is_finite()) {
            return Err(Error::Fit(format!("multinomial coefficients diverged (norm {:.3e})", beta.norm())));
        }
    }
    Ok((0..m).map(|c| beta.as_slice()[c * p..(c + 1) * p].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;
    use crate::rng::keyed;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> Dataset {
        let mut rng = keyed(seed, 0, 1);
        let rows = (0..n)
            .map(|_| {
                let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let z = if rng.random::<bool>() { 1 } else { -1 };
                let u: f64 = rng.random();
                let t = 0.3 + 0.2 * x[0] * z as f64;
                let a = if u < t { -1 } else if u < 0.7 { 0 } else { 1 };
                Observation { x, z, a, y: 0.0 }
            })
            .collect();
        Dataset::new(rows).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = fit_compliance(&data(2000, 1), &[0, 1]).unwrap();
        let mut rng = keyed(9, 0, 0);
        for _ in 0..1000 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let z = if rng.random::<bool>() { 1 } else { -1 };
            let p = m.probs(z, &x);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| *v >= PROB_EPS && *v < 1.0 - PROB_EPS));
        }
    }

    #[test]
    fn intercept_only_matches_frequencies() {
        let ds = data(3000, 2);
        let m = fit_compliance(&ds, &[]).unwrap();
        for z in [-1i8, 1] {
            let arm: Vec<_> = ds.rows().iter().filter(|r| r.z == z).collect();
            for a in [-1i8, 0, 1] {
                let freq = arm.iter().filter(|r| r.a == a).count() as f64 / arm.len() as f64;
                assert!((m.raw_probs(z, &[0.0, 0.0])[(a + 1) as usize] - freq).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn missing_category_is_reported() {
        let rows = (0..20).map(|i| Observation { x: vec![i as f64], z: if i % 2 == 0 { 1 } else { -1 }, a: (i % 2) as i8, y: 0.0 }).collect();
        let err = fit_compliance(&Dataset::new(rows).unwrap(), &[0]).unwrap_err();
        assert!(matches!(err, Error::MissingCategory { category: -1 }));
    }

    #[test]
    fn structural_zero_in_an_arm() {
        let rows = (0..40)
            .map(|i| {
                let z = if i % 2 == 0 { 1 } else { -1 };
                let a = if i % 4 < 2 { z } else { 0 };
                Observation { x: vec![(i % 7) as f64], z, a, y: 0.0 }
            })
            .collect();
        let m = fit_compliance(&Dataset::new(rows).unwrap(), &[]).unwrap();
        assert_eq!(m.probs(1, &[0.0])[0], PROB_EPS);
        assert!((m.raw_probs(1, &[0.0])[2] - 0.5).abs() < 1e-9);
    }
}
