//! Per-subject classification weights.
//!
//! Every learner minimizes `E[|W| I{sign(W) L != pi(X)}]` for a weight `W`
//! and a label `L`. The label is the instrument `Z` for the IPW, MR and OWL
//! weights and the received treatment `A` for the IVT baseline.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{Dataset, Method, Observation};
use crate::nuisance::{arm, NuisanceRow, NuisanceTable, PROB_EPS};
use crate::sensitivity::{complier_weight, SensitivityParams};

/// Weights and labels for one method over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub labels: Vec<i8>,
    pub method: Method,
    /// Rows whose inverse-weight denominator sat on the probability floor.
    pub clipped: usize,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_fraction(&self) -> f64 {
        self.values.iter().filter(|v| **v == 0.0).count() as f64 / self.values.len().max(1) as f64
    }

    pub fn negated(&self) -> Self {
        Self { values: self.values.iter().map(|v| -v).collect(), ..self.clone() }
    }

    /// `row,weight,method` lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,weight,method")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{v:?},{}", self.method)?;
        }
        Ok(())
    }
}

/// `a (a + z)`, which equals `2 I(a = z)` on `{-1,0,1} x {-1,1}`.
#[inline]
pub fn a_az(a: i8, z: i8) -> f64 {
    (a as f64) * ((a + z) as f64)
}

fn on_floor(p: f64) -> bool {
    p <= PROB_EPS
}

/// `A(A+Z) Y w / (2 gamma f(A|Z,X) f(Z|X))`.
pub fn ipw_weight(obs: &Observation, row: &NuisanceRow, params: &SensitivityParams) -> Result<f64> {
    let k = a_az(obs.a, obs.z);
    if k == 0.0 {
        return Ok(0.0);
    }
    let w = complier_weight(params, obs.a, obs.z, &obs.x, obs.y)?;
    let j = arm(obs.z);
    Ok(k * obs.y * w / (2.0 * row.gamma[j] * row.fa_obs * row.fz[j]))
}

/// `Delta(x) = Q(1,1,x)/gamma(1,1,x) - Q(-1,-1,x)/gamma(-1,-1,x)`.
pub fn blip(row: &NuisanceRow) -> f64 {
    row.blip()
}

/// The bracketed augmentation
/// `A(A+Z)/(2 gamma f(A,Z|X)) [Y w - Q - delta (w - gamma)]`.
pub(crate) fn mr_augmentation(obs: &Observation, row: &NuisanceRow, params: &SensitivityParams) -> Result<f64> {
    let k = a_az(obs.a, obs.z);
    if k == 0.0 {
        return Ok(0.0);
    }
    let w = complier_weight(params, obs.a, obs.z, &obs.x, obs.y)?;
    let j = arm(obs.z);
    let (g, q) = (row.gamma[j], row.q[j]);
    let delta = q / g;
    Ok(k / (2.0 * g * row.fa_obs * row.fz[j]) * (obs.y * w - q - delta * (w - g)))
}

/// `W_mr = A(A+Z)/(2 gamma f(A,Z|X)) [Y w - Q - delta (w - gamma)] + Z Delta(X)`.
pub fn mr_weight(obs: &Observation, row: &NuisanceRow, params: &SensitivityParams) -> Result<f64> {
    Ok(mr_augmentation(obs, row, params)? + obs.z as f64 * row.blip())
}

/// Intention-to-treat weight `Y / f(Z|X)`.
pub fn owl_weight(obs: &Observation, row: &NuisanceRow) -> f64 {
    obs.y / row.fz[arm(obs.z)]
}

/// `p(A=1|Z=1) - p(A=1|Z=-1)` from arm-wise sample proportions.
pub fn compliance_rate_difference(dataset: &Dataset) -> Result<f64> {
    let rate = |z: i8| -> Result<f64> {
        let arm: Vec<_> = dataset.rows().iter().filter(|r| r.z == z).collect();
        if arm.is_empty() {
            return Err(Error::InvalidInput(format!("no rows in instrument arm {z}")));
        }
        Ok(arm.iter().filter(|r| r.a == 1).count() as f64 / arm.len() as f64)
    };
    let d = rate(1)? - rate(-1)?;
    if d <= 0.0 {
        return Err(Error::InvalidInput(format!("compliance-rate difference {d} is not positive; the instrument is weak or invalid")));
    }
    Ok(d)
}

/// `Z A Y / (f(Z|X) dp)`, classified against the received treatment `A`.
pub fn ivt_weight(obs: &Observation, row: &NuisanceRow, rate_difference: f64) -> f64 {
    (obs.z as f64) * (obs.a as f64) * obs.y / (row.fz[arm(obs.z)] * rate_difference)
}

/// Weights for `method` at every row.
pub fn weight_vector(method: Method, dataset: &Dataset, table: &NuisanceTable, params: &SensitivityParams) -> Result<WeightVector> {
    table.check_len(dataset.len())?;
    let rows = dataset.rows().iter().zip(table.rows());
    let mut clipped = 0usize;
    let mut values = Vec::with_capacity(dataset.len());
    let dp = if method == Method::Ivt { compliance_rate_difference(dataset)? } else { 0.0 };
    for (obs, row) in rows {
        let j = arm(obs.z);
        let uses_fa = matches!(method, Method::Ipw | Method::Mr) && obs.a == obs.z;
        if on_floor(row.fz[j]) || (uses_fa && on_floor(row.fa_obs)) {
            clipped += 1;
        }
        let v = match method {
            Method::Ipw => ipw_weight(obs, row, params)?,
            Method::Mr => mr_weight(obs, row, params)?,
            Method::Owl => owl_weight(obs, row),
            Method::Ivt => ivt_weight(obs, row, dp),
            Method::MrKnownFz => return Err(Error::InvalidInput("MR_KNOWN_FZ is a value estimator, not a weight".into())),
        };
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite {method} weight")));
        }
        values.push(v);
    }
    let labels = dataset.rows().iter().map(|r| if method == Method::Ivt { r.a } else { r.z }).collect();
    Ok(WeightVector { values, labels, method, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> NuisanceRow {
        NuisanceRow { fz: [0.4, 0.6], fa_obs: 0.5, gamma: [0.55, 0.6], q: [0.3, 0.9], kappa: None }
    }

    fn obs(z: i8, a: i8, y: f64) -> Observation {
        Observation { x: vec![0.0, 0.0], z, a, y }
    }

    #[test]
    fn a_az_identity_exhaustive() {
        for a in [-1i8, 0, 1] {
            for z in [-1i8, 1] {
                assert_eq!(a_az(a, z), if a == z { 2.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn ipw_examples() {
        let p = SensitivityParams::y_only(0.5, 0.5);
        assert_eq!(ipw_weight(&obs(1, 0, 3.0), &row(), &p).unwrap(), 0.0);
        assert_eq!(ipw_weight(&obs(1, -1, 3.0), &row(), &p).unwrap(), 0.0);
        assert_eq!(ipw_weight(&obs(1, 1, 0.0), &row(), &p).unwrap(), 0.0);
        let w = ipw_weight(&obs(1, 1, 2.0), &row(), &p).unwrap();
        let expected = 2.0 * crate::stats::expit(1.0) / (0.6 * 0.5 * 0.6);
        assert!((w - expected).abs() < 1e-12);
    }

    #[test]
    fn mr_zero_compliance_row_is_blip_term() {
        let p = SensitivityParams::y_only(0.5, 0.5);
        let r = row();
        let b = 0.9 / 0.6 - 0.3 / 0.55;
        assert_eq!(mr_weight(&obs(-1, 0, 5.0), &r, &p).unwrap(), -b);
        assert_eq!(mr_weight(&obs(1, 0, 5.0), &r, &p).unwrap(), b);
    }

    #[test]
    fn symmetric_arms_have_zero_blip() {
        let r = NuisanceRow { gamma: [0.5, 0.5], q: [0.4, 0.4], ..row() };
        assert_eq!(blip(&r), 0.0);
    }

    #[test]
    fn baselines() {
        assert_eq!(owl_weight(&obs(1, 1, 0.0), &row()), 0.0);
        let rand = NuisanceRow { fz: [0.5, 0.5], ..row() };
        assert_eq!(owl_weight(&obs(-1, 0, 1.5), &rand), 3.0);
        assert_eq!(ivt_weight(&obs(1, 0, 2.0), &row(), 0.3), 0.0);
    }

    #[test]
    fn ivt_requires_positive_difference() {
        let rows = vec![obs(1, 0, 1.0), obs(-1, 1, 1.0), obs(1, 1, 1.0), obs(-1, 1, 1.0)];
        let ds = Dataset::new(rows).unwrap();
        assert!(compliance_rate_difference(&ds).is_err());
    }
}
