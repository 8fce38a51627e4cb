//! Nuisance functions: instrument propensity `f(Z|X)`, compliance
//! `f(A|Z,X)`, the outcome law on the `A = Z` event, and the derived
//! `gamma`, `Q`, `delta`, `theta` and cross-fitted `kappa`.
//!
//! Estimators consume a [`NuisanceTable`], the per-row evaluation of every
//! nuisance. A table can come from fitted models ([`NuisanceSet::table`]) or
//! be assembled directly from known values, which is how exact oracles and
//! deliberately corrupted nuisances enter.

pub mod boost;
pub mod kappa;
pub mod logistic;
pub mod multinomial;
pub mod outcome;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::sensitivity::{SensitivityParams, SharedDraws};

pub use boost::BoostConfig;
pub use kappa::{fit_kappa, KappaModel};
pub use logistic::{fit_instrument, InstrumentModel};
pub use multinomial::{fit_compliance, ComplianceModel};
pub use outcome::{fit_outcome, ArmLaw, OutcomeDensityModel, OutcomeFamily};

/// Probability floor guarding inverse weights.
pub const PROB_EPS: f64 = 1e-6;

/// Default Monte-Carlo size for `gamma` and `Q`.
pub const DEFAULT_N_MC: usize = 5000;

pub(crate) fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub(crate) fn design_row(x: &[f64], mask: &[usize]) -> Vec<f64> {
    std::iter::once(1.0).chain(mask.iter().map(|&j| x[j])).collect()
}

pub(crate) fn validate_mask(mask: &[usize], dim_x: usize) -> Result<()> {
    if let Some(&j) = mask.iter().find(|&&j| j >= dim_x) {
        return Err(Error::InvalidInput(format!("mask index {j} out of range for {dim_x} covariates")));
    }
    let mut m = mask.to_vec();
    m.sort_unstable();
    m.dedup();
    if m.len() != mask.len() {
        return Err(Error::InvalidInput("duplicate mask index".into()));
    }
    Ok(())
}

/// `0` for `z = -1`, `1` for `z = +1`.
#[inline]
pub fn arm(z: i8) -> usize {
    if z > 0 {
        1
    } else {
        0
    }
}

/// Retained covariate indices per model; `None` keeps every covariate.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MisspecMasks {
    #[serde(rename = "fZ", default, skip_serializing_if = "Option::is_none")]
    pub fz: Option<Vec<usize>>,
    #[serde(rename = "fA", default, skip_serializing_if = "Option::is_none")]
    pub fa: Option<Vec<usize>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<usize>>,
}

impl MisspecMasks {
    fn resolve(m: &Option<Vec<usize>>, dim_x: usize) -> Vec<usize> {
        m.clone().unwrap_or_else(|| (0..dim_x).collect())
    }
}

/// Fitted nuisance models plus the shared outcome draws.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    pub instrument: InstrumentModel,
    pub compliance: ComplianceModel,
    /// Outcome model behind `gamma` (and `Q` unless `q_outcome` is set).
    pub outcome: OutcomeDensityModel,
    /// Separately specified outcome model used only for `Q`.
    pub q_outcome: Option<OutcomeDensityModel>,
    pub draws: SharedDraws,
}

/// Fits every nuisance model. `gamma` always uses the full outcome model;
/// a `Q` mask fits a second outcome model used for `Q` alone.
pub fn fit_nuisances<R: Rng + ?Sized>(
    dataset: &Dataset,
    masks: &MisspecMasks,
    family: OutcomeFamily,
    n_mc: usize,
    rng: &mut R,
) -> Result<NuisanceSet> {
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be positive".into()));
    }
    let k = dataset.dim_x();
    let full: Vec<usize> = (0..k).collect();
    let instrument = fit_instrument(dataset, &MisspecMasks::resolve(&masks.fz, k))?;
    let compliance = fit_compliance(dataset, &MisspecMasks::resolve(&masks.fa, k))?;
    let outcome = fit_outcome(dataset, &full, family)?;
    let q_mask = MisspecMasks::resolve(&masks.q, k);
    let q_outcome = if q_mask == full { None } else { Some(fit_outcome(dataset, &q_mask, family)?) };
    let draws = SharedDraws::standard_normal(n_mc, rng);
    Ok(NuisanceSet { instrument, compliance, outcome, q_outcome, draws })
}

impl NuisanceSet {
    fn q_model(&self) -> &OutcomeDensityModel {
        self.q_outcome.as_ref().unwrap_or(&self.outcome)
    }

    /// `gamma(a, z, x)`; zero off the `A = Z` event.
    pub fn estimate_gamma(&self, params: &SensitivityParams, a: i8, z: i8, x: &[f64]) -> Result<f64> {
        if a != z {
            return Ok(0.0);
        }
        let (c, s) = params.affine(z, x)?;
        Ok(self.outcome.law(z, x).tilt(c, s, &self.draws).0)
    }

    /// `Q(a, z, x) = E[Y w | A = a, Z = z, x]`; zero off the `A = Z` event.
    pub fn estimate_q(&self, params: &SensitivityParams, a: i8, z: i8, x: &[f64]) -> Result<f64> {
        if a != z {
            return Ok(0.0);
        }
        let (c, s) = params.affine(z, x)?;
        Ok(self.q_model().law(z, x).tilt(c, s, &self.draws).1)
    }

    /// `delta = Q / gamma`.
    pub fn estimate_delta(&self, params: &SensitivityParams, a: i8, z: i8, x: &[f64]) -> Result<f64> {
        let g = self.estimate_gamma(params, a, z, x)?;
        if g < 1e-12 {
            return Err(Error::Numerical(format!("gamma({a},{z},x) = {g:e} is too small")));
        }
        Ok(self.estimate_q(params, a, z, x)? / g)
    }

    /// `theta(z, x) = sum_a a(a+z) Q(a,z,x) / (2 gamma(a,z,x))`, which
    /// collapses to `delta(z, z, x)`.
    pub fn compute_theta(&self, params: &SensitivityParams, z: i8, x: &[f64]) -> Result<f64> {
        self.estimate_delta(params, z, z, x)
    }

    /// Evaluates every nuisance at every row of `dataset`.
    pub fn table(&self, dataset: &Dataset, params: &SensitivityParams) -> Result<NuisanceTable> {
        params.validate(dataset.dim_x())?;
        let mut clip_events = 0usize;
        let mut rows = Vec::with_capacity(dataset.len());
        for r in dataset.rows() {
            let p_plus = self.instrument.p_plus(&r.x);
            if p_plus <= PROB_EPS || p_plus >= 1.0 - PROB_EPS {
                clip_events += 1;
            }
            let raw_a = self.compliance.raw_probs(r.z, &r.x)[(r.a + 1) as usize];
            if raw_a < PROB_EPS {
                clip_events += 1;
            }
            let mut gamma = [0.0; 2];
            let mut q = [0.0; 2];
            for z in [-1i8, 1] {
                let (c, s) = params.affine(z, &r.x)?;
                let (g, qq) = self.outcome.law(z, &r.x).tilt(c, s, &self.draws);
                gamma[arm(z)] = g;
                q[arm(z)] = match &self.q_outcome {
                    None => qq,
                    Some(m) => m.law(z, &r.x).tilt(c, s, &self.draws).1,
                };
            }
            rows.push(NuisanceRow {
                fz: [1.0 - p_plus, p_plus],
                fa_obs: self.compliance.prob(r.a, r.z, &r.x),
                gamma,
                q,
                kappa: None,
            });
        }
        NuisanceTable::new(rows, clip_events)
    }
}

/// Every nuisance evaluated at one row's covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceRow {
    /// `f(Z = -1 | x)`, `f(Z = +1 | x)`.
    pub fz: [f64; 2],
    /// `f(A = a_i | Z = z_i, x)` at the observed `(a_i, z_i)`.
    pub fa_obs: f64,
    /// `gamma(z, z, x)` per arm.
    pub gamma: [f64; 2],
    /// `Q(z, z, x)` per arm.
    pub q: [f64; 2],
    /// Out-of-fold `kappa(z, x)` per arm.
    pub kappa: Option<[f64; 2]>,
}

impl NuisanceRow {
    #[inline]
    pub fn delta(&self, z: i8) -> f64 {
        self.q[arm(z)] / self.gamma[arm(z)]
    }

    /// `Delta(x) = delta(+1) - delta(-1)`.
    #[inline]
    pub fn blip(&self) -> f64 {
        self.delta(1) - self.delta(-1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceTable {
    rows: Vec<NuisanceRow>,
    clip_events: usize,
}

impl NuisanceTable {
    pub fn new(rows: Vec<NuisanceRow>, clip_events: usize) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            let probs = [r.fz[0], r.fz[1], r.fa_obs];
            if probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
                return Err(Error::Numerical(format!("row {i}: probability outside (0, 1]")));
            }
            if r.gamma.iter().any(|g| !(*g >= 1e-12 && *g <= 1.0)) {
                return Err(Error::Numerical(format!("row {i}: gamma outside [1e-12, 1]")));
            }
            if r.q.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("row {i}: non-finite Q")));
            }
        }
        Ok(Self { rows, clip_events })
    }

    pub fn rows(&self) -> &[NuisanceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clip_events(&self) -> usize {
        self.clip_events
    }

    pub fn has_kappa(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.kappa.is_some())
    }

    pub fn set_kappa(&mut self, kappa: Vec<[f64; 2]>) -> Result<()> {
        if kappa.len() != self.rows.len() {
            return Err(Error::DimensionMismatch { expected: self.rows.len(), got: kappa.len() });
        }
        for (r, k) in self.rows.iter_mut().zip(kappa) {
            r.kappa = Some(k);
        }
        Ok(())
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.rows.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.rows.len() });
        }
        Ok(())
    }

    /// Replaces the instrument propensity with a known value, e.g. `0.5`
    /// under randomization.
    pub fn with_known_fz(&self, p_plus: f64) -> Self {
        let mut t = self.clone();
        for r in &mut t.rows {
            r.fz = [1.0 - p_plus, p_plus];
        }
        t
    }
}
