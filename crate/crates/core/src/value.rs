//! Complier value of a fixed regime, and the average blip among compliers.

use crate::error::{Error, Result};
use crate::model::{Dataset, EstimateWithSE, LinearPolicy, Method};
use crate::nuisance::{arm, NuisanceTable};
use crate::sensitivity::SensitivityParams;
use crate::weights::{ipw_weight, mr_augmentation, mr_weight};

/// An estimate with its per-row centered influence contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub estimate: EstimateWithSE,
    pub contributions: Vec<f64>,
}

fn finish(values: Vec<f64>, method: Method) -> Result<ValueEstimate> {
    let (estimate, contributions) = EstimateWithSE::from_values(&values, method)?;
    Ok(ValueEstimate { estimate, contributions })
}

fn check(dataset: &Dataset, policy: &LinearPolicy, table: &NuisanceTable) -> Result<()> {
    table.check_len(dataset.len())?;
    if policy.dim() != dataset.dim_x() {
        return Err(Error::DimensionMismatch { expected: dataset.dim_x(), got: policy.dim() });
    }
    Ok(())
}

/// Per-row `W I{pi(X) = Z}` with the IPW weight.
pub fn ipw_terms(dataset: &Dataset, policy: &LinearPolicy, table: &NuisanceTable, params: &SensitivityParams) -> Result<Vec<f64>> {
    check(dataset, policy, table)?;
    let mut v = Vec::with_capacity(dataset.len());
    for (obs, row) in dataset.rows().iter().zip(table.rows()) {
        v.push(if policy.decide_unchecked(&obs.x) == obs.z { ipw_weight(obs, row, params)? } else { 0.0 });
    }
    Ok(v)
}

/// Mean of `W I{pi(X) = Z}` with the IPW weight.
pub fn ipw_value(dataset: &Dataset, policy: &LinearPolicy, table: &NuisanceTable, params: &SensitivityParams) -> Result<ValueEstimate> {
    finish(ipw_terms(dataset, policy, table, params)?, Method::Ipw)
}

/// Per-row efficient influence function display without the trailing value:
/// `I [aug + theta(Z,X)/f(Z|X) - kappa(Z,X)/f(Z|X)] + kappa'(X)`
/// with `I = I{pi(X) = Z}` and `kappa'(X) = kappa(pi(X), X)`.
pub fn mr_terms(dataset: &Dataset, policy: &LinearPolicy, table: &NuisanceTable, params: &SensitivityParams) -> Result<Vec<f64>> {
    check(dataset, policy, table)?;
    if !table.has_kappa() {
        return Err(Error::InvalidInput("kappa has not been fitted".into()));
    }
    let mut v = Vec::with_capacity(dataset.len());
    for (obs, row) in dataset.rows().iter().zip(table.rows()) {
        let kappa = row.kappa.expect("checked");
        let d = policy.decide_unchecked(&obs.x);
        let mut xi = kappa[arm(d)];
        if d == obs.z {
            let j = arm(obs.z);
            xi += mr_augmentation(obs, row, params)? + (row.delta(obs.z) - kappa[j]) / row.fz[j];
        }
        v.push(xi);
    }
    Ok(v)
}

/// One-step estimator solving the efficient influence function equation.
pub fn mr_value(dataset: &Dataset, policy: &LinearPolicy, table: &NuisanceTable, params: &SensitivityParams) -> Result<ValueEstimate> {
    finish(mr_terms(dataset, policy, table, params)?, Method::Mr)
}

/// Per-row terms of the known-propensity estimator.
pub fn mr_known_fz_terms(
    dataset: &Dataset,
    policy: &LinearPolicy,
    table: &NuisanceTable,
    params: &SensitivityParams,
    p_plus: f64,
) -> Result<Vec<f64>> {
    check(dataset, policy, table)?;
    if !(p_plus > 0.0 && p_plus < 1.0) {
        return Err(Error::InvalidInput(format!("known instrument propensity {p_plus} outside (0, 1)")));
    }
    let known = table.with_known_fz(p_plus);
    let mut v = Vec::with_capacity(dataset.len());
    for (obs, row) in dataset.rows().iter().zip(known.rows()) {
        v.push(if policy.decide_unchecked(&obs.x) == obs.z {
            mr_augmentation(obs, row, params)? + row.delta(obs.z) / row.fz[arm(obs.z)]
        } else {
            0.0
        });
    }
    Ok(v)
}

/// The simplified estimator for a known instrument propensity
/// `p(Z = 1 | X) = p_plus`; no `kappa` term.
pub fn mr_value_known_fz(
    dataset: &Dataset,
    policy: &LinearPolicy,
    table: &NuisanceTable,
    params: &SensitivityParams,
    p_plus: f64,
) -> Result<ValueEstimate> {
    finish(mr_known_fz_terms(dataset, policy, table, params, p_plus)?, Method::MrKnownFz)
}

/// Per-row `Z W_mr = Z aug + Delta(X)`, whose mean estimates the average blip.
pub fn psi_terms(dataset: &Dataset, table: &NuisanceTable, params: &SensitivityParams) -> Result<Vec<f64>> {
    table.check_len(dataset.len())?;
    dataset.rows().iter().zip(table.rows()).map(|(o, r)| Ok(o.z as f64 * mr_weight(o, r, params)?)).collect()
}

/// Multiply robust average blip among compliers.
pub fn psi_mr(dataset: &Dataset, table: &NuisanceTable, params: &SensitivityParams) -> Result<ValueEstimate> {
    finish(psi_terms(dataset, table, params)?, Method::Mr)
}

/// Dispatches on the value method tag.
pub fn value(
    method: Method,
    dataset: &Dataset,
    policy: &LinearPolicy,
    table: &NuisanceTable,
    params: &SensitivityParams,
    known_p_plus: Option<f64>,
) -> Result<ValueEstimate> {
    match method {
        Method::Ipw => ipw_value(dataset, policy, table, params),
        Method::Mr => mr_value(dataset, policy, table, params),
        Method::MrKnownFz => {
            let p = known_p_plus.ok_or_else(|| Error::InvalidInput("MR_KNOWN_FZ needs a known propensity".into()))?;
            mr_value_known_fz(dataset, policy, table, params, p)
        }
        other => Err(Error::InvalidInput(format!("{other} is not a value estimator"))),
    }
}
