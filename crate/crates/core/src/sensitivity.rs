//! The sensitivity model.
//!
//! On the `A = Z = z` event the log-odds of complier membership is
//! `G(X, Y, alpha_z)`, so the complier weight is `w = I(A = Z) expit(G)`.
//! Every supported form of `G` is affine in `y` once `(z, x)` is fixed, which
//! lets the Monte-Carlo integrals below run on a precomputed
//! `(intercept, slope)` pair.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::stats::{expit, NormalQuadrature};

/// Functional form of the sensitivity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SensitivityForm {
    YOnly,
    #[serde(rename = "LINEAR_XY")]
    LinearXY,
    #[serde(rename = "PCA1")]
    Pca1,
}

/// Parameters for one instrument arm.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmAlpha {
    #[serde(default)]
    pub a0: f64,
    #[serde(rename = "aX", default, skip_serializing_if = "Vec::is_empty")]
    pub ax: Vec<f64>,
    #[serde(rename = "aY", default)]
    pub ay: f64,
    #[serde(rename = "aPCA", default, skip_serializing_if = "is_zero")]
    pub apca: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl ArmAlpha {
    pub fn y_only(a0: f64, ay: f64) -> Self {
        Self { a0, ay, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPair {
    pub minus: ArmAlpha,
    pub plus: ArmAlpha,
}

/// First principal component of the standardized `(x, y)` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaLoading {
    /// Column centers, covariates first then the outcome.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Unit-norm loading with non-negative outcome entry.
    pub loading: Vec<f64>,
}

impl PcaLoading {
    pub fn dim_x(&self) -> usize {
        self.loading.len() - 1
    }

    pub fn project(&self, x: &[f64], y: f64) -> f64 {
        let k = self.dim_x();
        let mut s = self.loading[k] * (y - self.center[k]) / self.scale[k];
        for j in 0..k {
            s += self.loading[j] * (x[j] - self.center[j]) / self.scale[j];
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub form: SensitivityForm,
    pub alpha: ArmPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaLoading>,
}

impl SensitivityParams {
    pub fn y_only(ay_minus: f64, ay_plus: f64) -> Self {
        Self {
            form: SensitivityForm::YOnly,
            alpha: ArmPair { minus: ArmAlpha::y_only(0.0, ay_minus), plus: ArmAlpha::y_only(0.0, ay_plus) },
            pca: None,
        }
    }

    /// `alpha == 0` in both arms; the weight is `0.5` on the `A = Z` event.
    pub fn null() -> Self {
        Self::y_only(0.0, 0.0)
    }

    pub fn arm(&self, z: i8) -> &ArmAlpha {
        if z > 0 {
            &self.alpha.plus
        } else {
            &self.alpha.minus
        }
    }

    pub fn arm_mut(&mut self, z: i8) -> &mut ArmAlpha {
        if z > 0 {
            &mut self.alpha.plus
        } else {
            &mut self.alpha.minus
        }
    }

    /// Checks the form/dimension contract against a covariate dimension.
    pub fn validate(&self, dim_x: usize) -> Result<()> {
        for (name, arm) in [("minus", &self.alpha.minus), ("plus", &self.alpha.plus)] {
            let vals = [arm.a0, arm.ay, arm.apca];
            if vals.iter().chain(&arm.ax).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite sensitivity parameter in arm {name}")));
            }
            match self.form {
                SensitivityForm::YOnly if !arm.ax.is_empty() => {
                    return Err(Error::InvalidInput("Y_ONLY form takes no aX".into()));
                }
                SensitivityForm::LinearXY if arm.ax.len() != dim_x => {
                    return Err(Error::DimensionMismatch { expected: dim_x, got: arm.ax.len() });
                }
                _ => {}
            }
        }
        if self.form == SensitivityForm::Pca1 {
            let pca = self.pca.as_ref().ok_or_else(|| Error::InvalidInput("PCA1 form without fitted loadings".into()))?;
            if pca.dim_x() != dim_x {
                return Err(Error::DimensionMismatch { expected: dim_x, got: pca.dim_x() });
            }
        }
        Ok(())
    }

    /// `G = intercept + slope * y` at fixed `(z, x)`.
    pub fn affine(&self, z: i8, x: &[f64]) -> Result<(f64, f64)> {
        let arm = self.arm(z);
        match self.form {
            SensitivityForm::YOnly => Ok((arm.a0, arm.ay)),
            SensitivityForm::LinearXY => {
                if arm.ax.len() != x.len() {
                    return Err(Error::DimensionMismatch { expected: arm.ax.len(), got: x.len() });
                }
                let lin: f64 = arm.ax.iter().zip(x).map(|(a, v)| a * v).sum();
                Ok((arm.a0 + lin, arm.ay))
            }
            SensitivityForm::Pca1 => {
                let pca = self.pca.as_ref().ok_or_else(|| Error::InvalidInput("PCA1 form without fitted loadings".into()))?;
                if pca.dim_x() != x.len() {
                    return Err(Error::DimensionMismatch { expected: pca.dim_x(), got: x.len() });
                }
                let at0 = pca.project(x, 0.0);
                let k = pca.dim_x();
                let slope = pca.loading[k] / pca.scale[k];
                Ok((arm.a0 + arm.apca * at0, arm.apca * slope))
            }
        }
    }
}

/// `G(x, y, alpha_z)` for the selected form.
pub fn sensitivity_score(params: &SensitivityParams, z: i8, x: &[f64], y: f64) -> Result<f64> {
    let (c, s) = params.affine(z, x)?;
    Ok(c + s * y)
}

/// `I(a = z) expit(G)`.
pub fn complier_weight(params: &SensitivityParams, a: i8, z: i8, x: &[f64], y: f64) -> Result<f64> {
    check_az(a, z)?;
    if a != z {
        return Ok(0.0);
    }
    Ok(expit(sensitivity_score(params, z, x, y)?))
}

fn check_az(a: i8, z: i8) -> Result<()> {
    if z != 1 && z != -1 {
        return Err(Error::InvalidInput(format!("instrument must be -1 or +1, got {z}")));
    }
    if !(-1..=1).contains(&a) {
        return Err(Error::InvalidInput(format!("compliance must be in {{-1,0,1}}, got {a}")));
    }
    Ok(())
}

/// A conditional law of `Y` given `(A = z, Z = z, X = x)` that can be sampled.
pub trait OutcomeSampler {
    fn draw(&self, rng: &mut dyn rand::RngCore) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalOutcome {
    pub mean: f64,
    pub sd: f64,
}

impl OutcomeSampler for NormalOutcome {
    fn draw(&self, rng: &mut dyn rand::RngCore) -> Result<f64> {
        let n = Normal::new(self.mean, self.sd).map_err(|e| Error::Sampler(e.to_string()))?;
        Ok(n.sample(rng))
    }
}

/// `Y = +1` with probability `p_plus`, else `-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignOutcome {
    pub p_plus: f64,
}

impl OutcomeSampler for SignOutcome {
    fn draw(&self, rng: &mut dyn rand::RngCore) -> Result<f64> {
        if !(0.0..=1.0).contains(&self.p_plus) {
            return Err(Error::Sampler(format!("probability {} outside [0,1]", self.p_plus)));
        }
        Ok(if rng.random::<f64>() < self.p_plus { 1.0 } else { -1.0 })
    }
}

/// Monte-Carlo estimate of `gamma(a, z, x) = E[w | A = Z = z, x]`.
pub fn gamma_mc(
    params: &SensitivityParams,
    a: i8,
    z: i8,
    x: &[f64],
    sampler: &dyn OutcomeSampler,
    n_mc: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<f64> {
    check_az(a, z)?;
    if a != z {
        return Err(Error::InvalidInput("gamma is only defined on the A = Z event".into()));
    }
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be positive".into()));
    }
    let (c, s) = params.affine(z, x)?;
    let mut acc = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        acc.push(expit(c + s * sampler.draw(rng)?));
    }
    Ok(crate::stats::mean(&acc))
}

/// Draws of `N(0, 1)` (or any base law) reused across rows so that `gamma`
/// and `Q` at one `(z, x)` come from the same set of outcome values.
#[derive(Debug, Clone)]
pub struct SharedDraws {
    pub base: Vec<f64>,
}

impl SharedDraws {
    pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self { base: (0..n).map(|_| StandardNormal.sample(rng)).collect() }
    }

    pub fn uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self { base: (0..n).map(|_| rng.random::<f64>()).collect() }
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }
}

/// Sample means of `w` and `y w` over outcome values `y_j`, with
/// `G = c + s y`. Returns `(gamma, Q)`.
pub fn tilt_moments<I: IntoIterator<Item = f64>>(c: f64, s: f64, ys: I) -> (f64, f64) {
    let mut g = 0.0;
    let mut q = 0.0;
    let mut n = 0usize;
    for y in ys {
        let w = expit(c + s * y);
        g += w;
        q += y * w;
        n += 1;
    }
    (g / n as f64, q / n as f64)
}

/// Law of `Y | A = Z = z` used to calibrate `alpha0`.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeLaw {
    /// `Y` in `{-1, +1}` with `P(Y = +1) = p_plus`.
    Sign { p_plus: f64 },
    Normal { mean: f64, sd: f64 },
    /// Equally weighted support points (observed outcomes or MC draws).
    Empirical(Vec<f64>),
}

impl OutcomeLaw {
    fn expected_weight(&self, a0: f64, ay: f64, quad: &NormalQuadrature) -> f64 {
        match self {
            Self::Sign { p_plus } => p_plus * expit(a0 + ay) + (1.0 - p_plus) * expit(a0 - ay),
            Self::Normal { mean, sd } => quad.expect(*mean, *sd, |y| expit(a0 + ay * y)),
            Self::Empirical(ys) => ys.iter().map(|y| expit(a0 + ay * y)).sum::<f64>() / ys.len() as f64,
        }
    }
}

/// Calibrates `alpha0_z` so that `E[expit(alpha0 + alphaY Y) | A = Z = z]`
/// equals `p_s4 / p_comply_z`.
pub fn solve_alpha0(p_s4: f64, p_comply_z: f64, outcome: &OutcomeLaw, alpha_y: f64) -> Result<f64> {
    if !(p_s4 > 0.0 && p_s4 <= p_comply_z && p_comply_z <= 1.0) || !alpha_y.is_finite() {
        return Err(Error::InvalidInput(format!(
            "need 0 < p_s4 <= p_comply <= 1, got p_s4={p_s4}, p_comply={p_comply_z}"
        )));
    }
    let target = p_s4 / p_comply_z;
    if target >= 1.0 {
        return Err(Error::NoRoot(format!("target complier share {target} is not below 1; alpha0 would be infinite")));
    }
    let quad = NormalQuadrature::new(64);
    let alpha0 = match outcome {
        OutcomeLaw::Sign { p_plus } => {
            if !(0.0..=1.0).contains(p_plus) {
                return Err(Error::InvalidInput(format!("P(Y=+1) = {p_plus} outside [0,1]")));
            }
            solve_alpha0_sign(target, *p_plus, alpha_y)?
        }
        OutcomeLaw::Normal { sd, .. } if *sd <= 0.0 => {
            return Err(Error::InvalidInput("outcome sd must be positive".into()));
        }
        OutcomeLaw::Empirical(ys) if ys.is_empty() => return Err(Error::Empty("outcome support")),
        _ => bisect_alpha0(target, |a0| outcome.expected_weight(a0, alpha_y, &quad))?,
    };
    let resid = (outcome.expected_weight(alpha0, alpha_y, &quad) - target).abs();
    if resid >= 1e-8 {
        return Err(Error::NoRoot(format!("plug-back residual {resid:e} for target {target}")));
    }
    Ok(alpha0)
}

fn solve_alpha0_sign(target: f64, p_plus: f64, ay: f64) -> Result<f64> {
    let p_minus = 1.0 - p_plus;
    let (em, ep) = ((-ay).exp(), ay.exp());
    let a = target;
    let b = target * em + target * ep - p_minus * em - p_plus * ep;
    let c = target - p_plus - p_minus;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::NoRoot(format!("negative discriminant {disc:e}")));
    }
    let sq = disc.sqrt();
    // Cancellation-free pair of roots.
    let qq = -0.5 * (b + b.signum() * sq);
    let roots = if qq == 0.0 { vec![] } else { vec![qq / a, c / qq] };
    let check = |a0: f64| (p_plus * expit(a0 + ay) + p_minus * expit(a0 - ay) - target).abs();
    let mut valid: Vec<f64> =
        roots.into_iter().filter(|e| *e > 0.0 && e.is_finite()).map(|e| -e.ln()).filter(|a0| check(*a0) < 1e-8).collect();
    valid.sort_by(|a, b| b.total_cmp(a));
    match valid.len() {
        0 => Err(Error::NoRoot(format!("no positive root for target {target} with P(Y=+1)={p_plus}, alphaY={ay}"))),
        1 => Ok(valid[0]),
        _ => {
            warn!("two admissible alpha0 roots {:?}; taking the larger", valid);
            Ok(valid[0])
        }
    }
}

fn bisect_alpha0<F: Fn(f64) -> f64>(target: f64, f: F) -> Result<f64> {
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut steps = 0;
    while f(lo) > target {
        lo *= 2.0;
        steps += 1;
        if steps > 60 {
            return Err(Error::NoRoot(format!("target {target} below attainable range")));
        }
    }
    while f(hi) < target {
        hi *= 2.0;
        steps += 1;
        if steps > 120 {
            return Err(Error::NoRoot(format!("target {target} above attainable range")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// First principal component of the column-standardized `(X, Y)` matrix.
pub fn fit_pca1(dataset: &Dataset) -> Result<PcaLoading> {
    let n = dataset.len();
    let k = dataset.dim_x();
    let p = k + 1;
    if n < k + 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least {} rows, got {n}", k + 2)));
    }
    let col = |i: usize, j: usize| -> f64 {
        let r = &dataset.rows()[i];
        if j < k {
            r.x[j]
        } else {
            r.y
        }
    };
    let mut center = vec![0.0; p];
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let v: Vec<f64> = (0..n).map(|i| col(i, j)).collect();
        center[j] = crate::stats::mean(&v);
        scale[j] = crate::stats::sample_sd(&v);
        if !(scale[j] > 1e-12 * center[j].abs().max(1.0)) {
            return Err(Error::InvalidInput(format!("column {} has zero variance", j + 1)));
        }
    }
    let mut corr = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            let mut s = 0.0;
            for i in 0..n {
                s += (col(i, a) - center[a]) / scale[a] * (col(i, b) - center[b]) / scale[b];
            }
            corr[a][b] = s / (n - 1) as f64;
            corr[b][a] = corr[a][b];
        }
    }
    let mut loading = leading_eigenvector(&corr)?;
    if loading[k] < 0.0 {
        loading.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(PcaLoading { center, scale, loading })
}

/// Power iteration on a shifted symmetric matrix.
fn leading_eigenvector(m: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p = m.len();
    // Shift by the Gershgorin bound so all eigenvalues are non-negative and
    // the largest is also the largest in magnitude.
    let shift = (0..p).map(|i| m[i].iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut v: Vec<f64> = (0..p).map(|i| 1.0 + 0.1 * i as f64).collect();
    normalize(&mut v);
    for _ in 0..200_000 {
        let mut next = vec![0.0; p];
        for i in 0..p {
            next[i] = shift * v[i] + m[i].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        normalize(&mut next);
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < 1e-15 {
            return Ok(v);
        }
    }
    let resid = rayleigh_residual(m, &v);
    if resid < 1e-10 {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("power iteration did not converge (residual {resid:e})")))
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= n);
}

fn rayleigh_residual(m: &[Vec<f64>], v: &[f64]) -> f64 {
    let mv: Vec<f64> = m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
    let lam: f64 = mv.iter().zip(v).map(|(a, b)| a * b).sum();
    mv.iter().zip(v).map(|(a, b)| (a - lam * b).abs()).fold(0.0, f64::max)
}
