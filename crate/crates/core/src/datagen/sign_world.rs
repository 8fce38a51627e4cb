//! Worlds with a binary outcome `Y` in `{-1, +1}` in which the sensitivity
//! model holds exactly and the complier share does not depend on `X`.
//!
//! Complier outcomes follow `P(Y(z) = 1 | S4, x) = expit(b_z(x))`. On the
//! `A = Z = z` event the non-complier mass at `y` is
//! `p4 f4_z(y | x) exp(-G_z(x, y))`, which makes
//! `P(S4 | A = Z = z, x, y) = expit(G_z(x, y))` by construction. The discrete
//! variant has finitely many covariate values, so every expectation is an
//! exact finite sum over 24 observable atoms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LinearPredictor;
use crate::error::{Error, Result};
use crate::model::{Dataset, LinearPolicy, Observation, PrincipalStratum};
use crate::nuisance::{arm, NuisanceRow, NuisanceTable};
use crate::sensitivity::SensitivityParams;
use crate::stats::{expit, logit, pairwise_sum};
use crate::value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    Discrete { points: Vec<Vec<f64>>, probs: Vec<f64> },
    /// `U(-1, 1)^dim`; expectations use a midpoint grid with `grid` points per axis.
    UniformBox { dim: usize, grid: usize },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            Self::Discrete { points, .. } => points[0].len(),
            Self::UniformBox { dim, .. } => *dim,
        }
    }

    /// Support points with probabilities (a grid for the continuous law).
    pub fn support(&self) -> Vec<(Vec<f64>, f64)> {
        match self {
            Self::Discrete { points, probs } => points.iter().cloned().zip(probs.iter().copied()).collect(),
            Self::UniformBox { dim, grid } => {
                let axis: Vec<f64> = (0..*grid).map(|k| -1.0 + (2 * k + 1) as f64 / *grid as f64).collect();
                let mut pts = vec![vec![]];
                for _ in 0..*dim {
                    pts = pts.into_iter().flat_map(|p| axis.iter().map(move |a| [p.clone(), vec![*a]].concat())).collect();
                }
                let w = 1.0 / pts.len() as f64;
                pts.into_iter().map(|p| (p, w)).collect()
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Discrete { points, probs } => {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for (p, q) in points.iter().zip(probs) {
                    acc += q;
                    if r < acc {
                        return p.clone();
                    }
                }
                points[points.len() - 1].clone()
            }
            Self::UniformBox { dim, .. } => (0..*dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }
}

/// `P(Y = +1)` in the four cells with `A != Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffArmSigns {
    pub z_minus_a_plus: f64,
    pub z_plus_a_minus: f64,
    pub z_plus_a_none: f64,
    pub z_minus_a_none: f64,
}

impl OffArmSigns {
    fn get(&self, z: i8, a: i8) -> f64 {
        match (z, a) {
            (-1, 1) => self.z_minus_a_plus,
            (1, -1) => self.z_plus_a_minus,
            (1, _) => self.z_plus_a_none,
            _ => self.z_minus_a_none,
        }
    }
}

/// Which nuisances to replace by wrong values in [`SignWorld::table`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    /// `f(Z | X) := 1/2`.
    pub fz: bool,
    /// `f(A | Z, X) := 1/3`.
    pub fa: bool,
    /// `Q := Q + 0.3`.
    pub q: bool,
    /// `kappa := kappa + 0.8`.
    pub kappa: bool,
}

impl Corruption {
    pub const NONE: Self = Self { fz: false, fa: false, q: false, kappa: false };
}

/// Exact nuisances at one `(x, z)` with every compliance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactCell {
    pub fz: f64,
    /// `f(A = a | z, x)` indexed by `a + 1`.
    pub fa: [f64; 3],
    /// `P(Y = +1 | A = Z = z, x)`.
    pub p_plus_on_arm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignWorld {
    pub covariates: CovariateLaw,
    /// Log-odds of `Z = +1`.
    pub instrument: LinearPredictor,
    pub p4: f64,
    /// Log-odds of `Y(z) = +1` among compliers, for `z = -1, +1`.
    pub complier: [LinearPredictor; 2],
    pub params: SensitivityParams,
    pub off_arm: OffArmSigns,
}

impl SignWorld {
    fn q4(&self, z: i8, x: &[f64]) -> f64 {
        expit(self.complier[arm(z)].eval(x))
    }

    /// Complier mean `E[Y(z) | S4, x] = 2 q - 1`.
    pub fn complier_mean(&self, z: i8, x: &[f64]) -> f64 {
        2.0 * self.q4(z, x) - 1.0
    }

    /// `(h(-1), h(+1))`: non-complier mass on the `A = Z = z` event.
    fn noncomplier_mass(&self, z: i8, x: &[f64]) -> Result<[f64; 2]> {
        let (c, s) = self.params.affine(z, x)?;
        let q = self.q4(z, x);
        Ok([self.p4 * (1.0 - q) * (-(c - s)).exp(), self.p4 * q * (-(c + s)).exp()])
    }

    /// Probabilities of `S1..S6`.
    pub fn strata(&self, x: &[f64]) -> Result<[f64; 6]> {
        let hm: f64 = self.noncomplier_mass(-1, x)?.iter().sum();
        let hp: f64 = self.noncomplier_mass(1, x)?.iter().sum();
        let p3 = 1.0 - self.p4 - hm - hp;
        if p3 < 0.0 {
            return Err(Error::InvalidInput(format!("world infeasible at x={x:?}: strata mass exceeds one by {}", -p3)));
        }
        Ok([hm / 2.0, hp / 2.0, p3, self.p4, hm / 2.0, hp / 2.0])
    }

    pub fn exact_cell(&self, z: i8, x: &[f64]) -> Result<ExactCell> {
        let s = self.strata(x)?;
        let mut fa = [0.0; 3];
        for (k, st) in PrincipalStratum::MONOTONE.iter().enumerate() {
            let a = if z > 0 { st.a_plus() } else { st.a_minus() };
            fa[(a + 1) as usize] += s[k];
        }
        let h = self.noncomplier_mass(z, x)?;
        let q = self.q4(z, x);
        let plus = self.p4 * q + h[1];
        let minus = self.p4 * (1.0 - q) + h[0];
        let pz = expit(self.instrument.eval(x));
        Ok(ExactCell { fz: if z > 0 { pz } else { 1.0 - pz }, fa, p_plus_on_arm: plus / (plus + minus) })
    }

    /// `(gamma, Q)` on the `A = Z = z` event under `params`.
    pub fn gamma_q(&self, z: i8, x: &[f64], params: &SensitivityParams) -> Result<(f64, f64)> {
        let cell = self.exact_cell(z, x)?;
        let (c, s) = params.affine(z, x)?;
        let p = cell.p_plus_on_arm;
        let (wp, wm) = (expit(c + s), expit(c - s));
        Ok((p * wp + (1.0 - p) * wm, p * wp - (1.0 - p) * wm))
    }

    /// Nuisances at `obs` under `params`, with optional corruption.
    pub fn row(&self, obs: &Observation, params: &SensitivityParams, corrupt: Corruption) -> Result<NuisanceRow> {
        let x = &obs.x;
        let here = self.exact_cell(obs.z, x)?;
        let other = self.exact_cell(-obs.z, x)?;
        let mut fz = [0.0; 2];
        fz[arm(obs.z)] = here.fz;
        fz[arm(-obs.z)] = other.fz;
        let mut gamma = [0.0; 2];
        let mut q = [0.0; 2];
        for z in [-1i8, 1] {
            let (g, qq) = self.gamma_q(z, x, params)?;
            gamma[arm(z)] = g;
            q[arm(z)] = qq;
        }
        let mut kappa = [q[0] / gamma[0], q[1] / gamma[1]];
        let mut fa_obs = here.fa[(obs.a + 1) as usize];
        if corrupt.fz {
            fz = [0.5, 0.5];
        }
        if corrupt.fa {
            fa_obs = 1.0 / 3.0;
        }
        if corrupt.q {
            q = [q[0] + 0.3, q[1] + 0.3];
        }
        if corrupt.kappa {
            kappa = [kappa[0] + 0.8, kappa[1] + 0.8];
        }
        Ok(NuisanceRow { fz, fa_obs, gamma, q, kappa: Some(kappa) })
    }

    pub fn table(&self, dataset: &Dataset, params: &SensitivityParams, corrupt: Corruption) -> Result<NuisanceTable> {
        let rows = dataset.rows().iter().map(|o| self.row(o, params, corrupt)).collect::<Result<Vec<_>>>()?;
        NuisanceTable::new(rows, 0)
    }

    /// Every observable `(x, z, a, y)` with its probability.
    pub fn atoms(&self) -> Result<Vec<(Observation, f64)>> {
        let mut out = Vec::new();
        for (x, px) in self.covariates.support() {
            for z in [-1i8, 1] {
                let cell = self.exact_cell(z, &x)?;
                for a in [-1i8, 0, 1] {
                    let pa = cell.fa[(a + 1) as usize];
                    let p_plus = if a == z { cell.p_plus_on_arm } else { self.off_arm.get(z, a) };
                    for (y, py) in [(-1.0, 1.0 - p_plus), (1.0, p_plus)] {
                        out.push((Observation { x: x.clone(), z, a, y }, px * cell.fz * pa * py));
                    }
                }
            }
        }
        Ok(out)
    }

    fn expect<F>(&self, params: &SensitivityParams, corrupt: Corruption, terms: F) -> Result<f64>
    where
        F: Fn(&Dataset, &NuisanceTable) -> Result<Vec<f64>>,
    {
        let atoms = self.atoms()?;
        let (obs, probs): (Vec<_>, Vec<_>) = atoms.into_iter().unzip();
        let ds = Dataset::new(obs)?;
        let table = self.table(&ds, params, corrupt)?;
        let t = terms(&ds, &table)?;
        Ok(pairwise_sum(&t.iter().zip(&probs).map(|(a, b)| a * b).collect::<Vec<_>>()))
    }

    /// `E[W I{pi(X) = Z}]`.
    pub fn expected_ipw(&self, policy: &LinearPolicy, params: &SensitivityParams, corrupt: Corruption) -> Result<f64> {
        self.expect(params, corrupt, |d, t| value::ipw_terms(d, policy, t, params))
    }

    /// Expectation of the efficient influence function display.
    pub fn expected_mr(&self, policy: &LinearPolicy, params: &SensitivityParams, corrupt: Corruption) -> Result<f64> {
        self.expect(params, corrupt, |d, t| value::mr_terms(d, policy, t, params))
    }

    pub fn expected_mr_known_fz(&self, policy: &LinearPolicy, params: &SensitivityParams, corrupt: Corruption, p_plus: f64) -> Result<f64> {
        self.expect(params, corrupt, |d, t| value::mr_known_fz_terms(d, policy, t, params, p_plus))
    }

    pub fn expected_psi(&self, params: &SensitivityParams, corrupt: Corruption) -> Result<f64> {
        self.expect(params, corrupt, |d, t| value::psi_terms(d, t, params))
    }

    /// `E[Y(pi(X)) | S4]`.
    pub fn complier_value(&self, policy: &LinearPolicy) -> Result<f64> {
        if policy.dim() != self.covariates.dim() {
            return Err(Error::DimensionMismatch { expected: self.covariates.dim(), got: policy.dim() });
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, px) in self.covariates.support() {
            num += px * self.p4 * self.complier_mean(policy.decide_unchecked(&x), &x);
            den += px * self.p4;
        }
        Ok(num / den)
    }

    /// `E[Delta(X) | S4]`.
    pub fn complier_blip(&self) -> f64 {
        let s: Vec<(Vec<f64>, f64)> = self.covariates.support();
        s.iter().map(|(x, p)| p * (self.complier_mean(1, x) - self.complier_mean(-1, x))).sum::<f64>()
            / s.iter().map(|(_, p)| p).sum::<f64>()
    }

    /// `n` i.i.d. subjects with their strata.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Dataset, Vec<PrincipalStratum>)> {
        let mut rows = Vec::with_capacity(n);
        let mut strata = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.covariates.sample(rng);
            let pz = expit(self.instrument.eval(&x));
            let z: i8 = if rng.random::<f64>() < pz { 1 } else { -1 };
            let probs = self.strata(&x)?;
            let r: f64 = rng.random();
            let mut k = 0;
            let mut acc = probs[0];
            while r >= acc && k < 5 {
                k += 1;
                acc += probs[k];
            }
            let st = PrincipalStratum::MONOTONE[k];
            let a = super::compliance_from_stratum(st, z)?;
            let p_plus = if st == PrincipalStratum::S4 {
                self.q4(z, &x)
            } else if a == z {
                let h = self.noncomplier_mass(z, &x)?;
                h[1] / (h[0] + h[1])
            } else {
                self.off_arm.get(z, a)
            };
            let y = if rng.random::<f64>() < p_plus { 1.0 } else { -1.0 };
            rows.push(Observation { x, z, a, y });
            strata.push(st);
        }
        Ok((Dataset::new(rows)?, strata))
    }
}

fn two_point(p_lo: f64, p_hi: f64) -> LinearPredictor {
    let (a, b) = (logit(p_lo), logit(p_hi));
    LinearPredictor::new(0.5 * (a + b), vec![b - a])
}

/// The finite validation world: `X` in `{-0.5, 0.5}` with probabilities
/// `0.4, 0.6`, `p(Z = 1 | x) = 0.3, 0.65`, complier share `0.3`.
pub fn build_discrete_oracle() -> SignWorld {
    let mut params = SensitivityParams::y_only(0.5, -0.3);
    params.alpha.minus.a0 = 0.5;
    params.alpha.plus.a0 = 0.5;
    SignWorld {
        covariates: CovariateLaw::Discrete { points: vec![vec![-0.5], vec![0.5]], probs: vec![0.4, 0.6] },
        instrument: two_point(0.3, 0.65),
        p4: 0.3,
        complier: [two_point(0.45, 0.75), two_point(0.7, 0.4)],
        params,
        off_arm: OffArmSigns { z_minus_a_plus: 0.6, z_plus_a_minus: 0.35, z_plus_a_none: 0.5, z_minus_a_none: 0.25 },
    }
}

/// The four threshold regimes on the one-dimensional oracle.
pub fn threshold_policies() -> [LinearPolicy; 4] {
    [
        LinearPolicy::new(1.0, vec![0.0]),
        LinearPolicy::new(-1.0, vec![0.0]),
        LinearPolicy::new(0.0, vec![1.0]),
        LinearPolicy::new(0.0, vec![-1.0]),
    ]
}

/// A randomized two-covariate world with binary outcomes: `p(Z = 1) = 1/2`,
/// complier share `p4`, and `alpha0` per arm set so that
/// `P(A = z | Z = z) = p_comply` on average.
pub fn binary_randomized_world(alpha_y: [f64; 2], p4: f64, p_comply: f64) -> Result<SignWorld> {
    if !(0.0 < p4 && p4 < p_comply && p_comply < 1.0) {
        return Err(Error::InvalidInput(format!("need 0 < p4 < p_comply < 1, got {p4}, {p_comply}")));
    }
    let complier = [LinearPredictor::new(0.0, vec![-0.8, 0.6]), LinearPredictor::new(0.2, vec![1.0, -0.5])];
    let covariates = CovariateLaw::UniformBox { dim: 2, grid: 200 };
    let support = covariates.support();
    let mut params = SensitivityParams::y_only(alpha_y[0], alpha_y[1]);
    for z in [-1i8, 1] {
        let ay = alpha_y[arm(z)];
        let k: f64 = support
            .iter()
            .map(|(x, p)| {
                let q = expit(complier[arm(z)].eval(x));
                p * (q * (-ay).exp() + (1.0 - q) * ay.exp())
            })
            .sum();
        params.arm_mut(z).a0 = (p4 * k / (p_comply - p4)).ln();
    }
    let world = SignWorld {
        covariates,
        instrument: LinearPredictor::new(0.0, vec![0.0, 0.0]),
        p4,
        complier,
        params,
        off_arm: OffArmSigns { z_minus_a_plus: 0.6, z_plus_a_minus: 0.4, z_plus_a_none: 0.3, z_minus_a_none: 0.3 },
    };
    for (x, _) in &support {
        world.strata(x)?;
    }
    Ok(world)
}
