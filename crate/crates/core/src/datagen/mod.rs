//! Synthetic trials with recorded latent truth, and exactly solvable worlds.

pub mod bridge;
pub mod rejection;
pub mod sign_world;
pub mod truth;

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Observation, PrincipalStratum};
use crate::rng::{keyed, stream};
use crate::sensitivity::SensitivityParams;
use crate::stats::expit;

pub use bridge::{bridge_cdf, bridge_pdf, bridge_quantile, sample_bridge};
pub use rejection::{RejectionConfig, RejectionSampler, TiltedNormal};
pub use truth::{true_complier_value, true_marginal_value, TruthTable};

/// `intercept + coef^T x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub x: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(intercept: f64, x: Vec<f64>) -> Self {
        Self { intercept, x }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.x.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Log-odds of one stratum against `S3`: `intercept + x^T b + z c + u d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumLogit {
    #[serde(default)]
    pub intercept: f64,
    pub x: Vec<f64>,
    pub z: f64,
    pub u: f64,
}

impl StratumLogit {
    fn new(x: Vec<f64>, z: f64, u: f64) -> Self {
        Self { intercept: 0.0, x, z, u }
    }

    fn eval(&self, x: &[f64], z: i8, u: f64) -> f64 {
        self.intercept + self.x.iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + self.z * z as f64 + self.u * u
    }
}

/// Multinomial logit over `S1..S6` with `S3` as reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataModel {
    pub s1: StratumLogit,
    pub s2: StratumLogit,
    pub s4: StratumLogit,
    pub s5: StratumLogit,
    pub s6: StratumLogit,
}

impl Default for StrataModel {
    fn default() -> Self {
        Self {
            s1: StratumLogit::new(vec![0.5, 0.0], 0.5, 1.0),
            s2: StratumLogit::new(vec![-0.5, 0.0], 0.5, 1.0),
            s4: StratumLogit::new(vec![-0.5, 0.0], 0.5, -1.0),
            s5: StratumLogit::new(vec![0.5, 0.0], 0.5, -1.0),
            s6: StratumLogit::new(vec![0.5, 0.0], 0.5, -1.0),
        }
    }
}

impl StrataModel {
    /// Probabilities of `S1..S6`, in that order.
    pub fn probabilities(&self, x: &[f64], z: i8, u: f64) -> [f64; 6] {
        let eta = [self.s1.eval(x, z, u), self.s2.eval(x, z, u), 0.0, self.s4.eval(x, z, u), self.s5.eval(x, z, u), self.s6.eval(x, z, u)];
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = eta.map(|t| (t - m).exp());
        let s: f64 = e.iter().sum();
        e.map(|v| v / s)
    }

    fn dims(&self) -> [usize; 5] {
        [&self.s1, &self.s2, &self.s4, &self.s5, &self.s6].map(|s| s.x.len())
    }
}

/// Draws a monotone stratum from the multinomial logit.
pub fn sample_stratum<R: Rng + ?Sized>(model: &StrataModel, x: &[f64], z: i8, u: f64, rng: &mut R) -> PrincipalStratum {
    let p = model.probabilities(x, z, u);
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if r < acc {
            return PrincipalStratum::MONOTONE[k];
        }
    }
    PrincipalStratum::S6
}

/// Treatment taken by `stratum` under instrument `z`.
pub fn compliance_from_stratum(stratum: PrincipalStratum, z: i8) -> Result<i8> {
    if !stratum.is_monotone() {
        return Err(Error::InvalidInput(format!("{stratum} is a defier stratum, excluded by monotonicity")));
    }
    match z {
        -1 => Ok(stratum.a_minus()),
        1 => Ok(stratum.a_plus()),
        _ => Err(Error::InvalidInput(format!("instrument must be -1 or +1, got {z}"))),
    }
}

/// `N(intercept + coef^T x, sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub mean: LinearPredictor,
    pub sd: f64,
}

impl CellOutcome {
    fn new(intercept: f64, x: Vec<f64>, sd: f64) -> Self {
        Self { mean: LinearPredictor::new(intercept, x), sd }
    }
}

/// Outcome laws for every `(z, a)` cell. The arm densities apply on `A = Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCells {
    pub arm_minus: CellOutcome,
    pub arm_plus: CellOutcome,
    pub z_minus_a_plus: CellOutcome,
    pub z_plus_a_minus: CellOutcome,
    pub z_plus_a_none: CellOutcome,
    pub z_minus_a_none: CellOutcome,
}

impl Default for OutcomeCells {
    fn default() -> Self {
        Self {
            arm_minus: CellOutcome::new(1.0, vec![2.0, 2.0], 0.5),
            arm_plus: CellOutcome::new(1.0, vec![0.0, 0.0], 0.5),
            z_minus_a_plus: CellOutcome::new(3.0, vec![1.0, 1.0], 0.5),
            z_plus_a_minus: CellOutcome::new(-1.0, vec![1.0, 1.0], 0.5),
            z_plus_a_none: CellOutcome::new(5.0, vec![0.0, 0.0], 0.1),
            z_minus_a_none: CellOutcome::new(-5.0, vec![0.0, 0.0], 0.1),
        }
    }
}

impl OutcomeCells {
    pub fn cell(&self, z: i8, a: i8) -> &CellOutcome {
        match (z, a) {
            (-1, -1) => &self.arm_minus,
            (1, 1) => &self.arm_plus,
            (-1, 1) => &self.z_minus_a_plus,
            (1, -1) => &self.z_plus_a_minus,
            (1, _) => &self.z_plus_a_none,
            _ => &self.z_minus_a_none,
        }
    }

    pub fn arm(&self, z: i8) -> &CellOutcome {
        self.cell(z, z)
    }

    fn all(&self) -> [&CellOutcome; 6] {
        [&self.arm_minus, &self.arm_plus, &self.z_minus_a_plus, &self.z_plus_a_minus, &self.z_plus_a_none, &self.z_minus_a_none]
    }
}

/// Full generative specification of a synthetic trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeConfig {
    pub n: usize,
    /// Covariates are i.i.d. `U(-1, 1)` in this many dimensions.
    pub dim_x: usize,
    /// Log-odds of `Z = +1`.
    pub instrument: LinearPredictor,
    pub phi: f64,
    pub strata: StrataModel,
    pub outcomes: OutcomeCells,
    /// Sensitivity parameters that generate complier outcomes.
    pub true_params: SensitivityParams,
    pub rejection: RejectionConfig,
    pub seed: u64,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self {
            n: 500,
            dim_x: 2,
            instrument: LinearPredictor::new(0.3, vec![-2.0, 2.0]),
            phi: 0.5,
            strata: StrataModel::default(),
            outcomes: OutcomeCells::default(),
            true_params: SensitivityParams::y_only(0.5, 0.5),
            rejection: RejectionConfig::default(),
            seed: 1,
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        bridge::check_phi(self.phi)?;
        if self.n == 0 || self.dim_x == 0 {
            return Err(Error::Config("n and dim_x must be positive".into()));
        }
        let d = self.dim_x;
        if self.instrument.x.len() != d || self.strata.dims().iter().any(|&k| k != d) {
            return Err(Error::Config(format!("coefficient lengths must equal dim_x = {d}")));
        }
        for c in self.outcomes.all() {
            if c.mean.x.len() != d {
                return Err(Error::Config(format!("outcome coefficient lengths must equal dim_x = {d}")));
            }
            if !(c.sd > 0.0) {
                return Err(Error::Config("outcome sd must be positive".into()));
            }
        }
        self.true_params.validate(d)
    }

    pub fn p_instrument_plus(&self, x: &[f64]) -> f64 {
        expit(self.instrument.eval(x))
    }

    /// Complier outcome law under arm `z` at `x`.
    pub fn complier_target(&self, z: i8, x: &[f64]) -> Result<TiltedNormal> {
        let arm = self.outcomes.arm(z);
        let (c, s) = self.true_params.affine(z, x)?;
        TiltedNormal::new(arm.mean.eval(x), arm.sd, c, s)
    }
}

/// Hidden per-row truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub stratum: PrincipalStratum,
    pub u: f64,
    pub a_minus: i8,
    pub a_plus: i8,
    /// Arm with the larger complier mean outcome at this row's covariates.
    pub optimal_action: i8,
}

/// Writes the `stratum,u,a_minus,a_plus` sidecar.
pub fn write_truth_csv<W: Write>(records: &[TruthRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["stratum", "u", "a_minus", "a_plus"]).map_err(csv_err)?;
    for r in records {
        wr.write_record([r.stratum.label().to_string(), format!("{:?}", r.u), r.a_minus.to_string(), r.a_plus.to_string()])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv { line: 0, msg: e.to_string() }
}

/// Draws one complier outcome under arm `z` at `x` by rejection sampling.
pub fn rejection_sample_complier_y<R: Rng + ?Sized>(x: &[f64], z: i8, cfg: &GenerativeConfig, rng: &mut R) -> Result<f64> {
    RejectionSampler::new(cfg.complier_target(z, x)?, &cfg.rejection)?.draw(rng)
}

/// Trial for replicate 0 of `cfg.seed`.
pub fn generate_trial(cfg: &GenerativeConfig) -> Result<(Dataset, Vec<TruthRecord>)> {
    generate_replicate(cfg, 0)
}

/// Trial for `(cfg.seed, replicate)`; each component draws from its own stream.
pub fn generate_replicate(cfg: &GenerativeConfig, replicate: u64) -> Result<(Dataset, Vec<TruthRecord>)> {
    cfg.validate()?;
    let key = |s| keyed(cfg.seed, replicate, s);
    let (mut rx, mut rz, mut ru, mut rs, mut ry, mut rr) =
        (key(stream::COVARIATES), key(stream::INSTRUMENT), key(stream::LATENT), key(stream::STRATUM), key(stream::OUTCOME), key(stream::REJECTION));
    let mut rows = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x: Vec<f64> = (0..cfg.dim_x).map(|_| rx.random_range(-1.0..1.0)).collect();
        let z: i8 = if rz.random::<f64>() < cfg.p_instrument_plus(&x) { 1 } else { -1 };
        let u = sample_bridge(cfg.phi, &mut ru)?;
        let stratum = sample_stratum(&cfg.strata, &x, z, u, &mut rs);
        let a = compliance_from_stratum(stratum, z)?;
        let y = if stratum == PrincipalStratum::S4 {
            rejection_sample_complier_y(&x, z, cfg, &mut rr)?
        } else {
            let c = cfg.outcomes.cell(z, a);
            Normal::new(c.mean.eval(&x), c.sd).map_err(|e| Error::Sampler(e.to_string()))?.sample(&mut ry)
        };
        let m = truth::complier_means(cfg, &x)?;
        truth.push(TruthRecord { stratum, u, a_minus: stratum.a_minus(), a_plus: stratum.a_plus(), optimal_action: truth::best_arm(m) });
        rows.push(Observation { x, z, a, y });
    }
    Ok((Dataset::new(rows)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::multinomial::fit_compliance;

    #[test]
    fn compliance_table() {
        use PrincipalStratum::*;
        assert_eq!(compliance_from_stratum(S4, 1).unwrap(), 1);
        assert_eq!(compliance_from_stratum(S4, -1).unwrap(), -1);
        assert_eq!(compliance_from_stratum(S3, -1).unwrap(), 0);
        assert_eq!(compliance_from_stratum(S5, 1).unwrap(), 0);
        assert_eq!(compliance_from_stratum(S5, -1).unwrap(), -1);
        assert_eq!(compliance_from_stratum(S6, -1).unwrap(), 0);
        assert_eq!(compliance_from_stratum(S1, 1).unwrap(), -1);
        assert_eq!(compliance_from_stratum(S2, -1).unwrap(), 1);
        for s in [S7, S8, S9] {
            assert!(compliance_from_stratum(s, 1).is_err());
        }
    }

    #[test]
    fn softmax_arithmetic() {
        let m = StrataModel::default();
        let p = m.probabilities(&[0.0, 0.0], 1, 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let e = 0.5f64.exp();
        let s3 = 1.0 / (1.0 + 5.0 * e);
        assert!((p[2] - s3).abs() < 1e-12);
        for k in [0, 1, 3, 4, 5] {
            assert!((p[k] - e * s3).abs() < 1e-12);
        }
    }

    #[test]
    fn stratum_frequencies_match_probabilities() {
        let m = StrataModel::default();
        let (x, z, u) = ([0.3, -0.2], -1, 0.4);
        let p = m.probabilities(&x, z, u);
        let mut rng = keyed(51, 0, 0);
        let mut counts = [0usize; 6];
        let n = 1_000_000;
        for _ in 0..n {
            let s = sample_stratum(&m, &x, z, u, &mut rng);
            counts[PrincipalStratum::MONOTONE.iter().position(|t| *t == s).unwrap()] += 1;
        }
        for k in 0..6 {
            assert!((counts[k] as f64 / n as f64 - p[k]).abs() < 0.003);
        }
    }

    #[test]
    fn generated_trial_contracts() {
        let cfg = GenerativeConfig { seed: 52, ..GenerativeConfig::default() };
        let expected = 500.0 * TruthTable::default_for(&cfg).unwrap().complier_fraction();
        let mut compliers = Vec::new();
        for r in 0..10 {
            let (ds, truth) = generate_replicate(&cfg, r).unwrap();
            assert_eq!(ds.len(), 500);
            for (o, t) in ds.rows().iter().zip(&truth) {
                assert!(t.stratum.is_monotone());
                assert_eq!(o.a, compliance_from_stratum(t.stratum, o.z).unwrap());
                assert_eq!((t.a_minus, t.a_plus), t.stratum.potential_compliance());
            }
            compliers.push(truth.iter().filter(|t| t.stratum == PrincipalStratum::S4).count() as f64);
        }
        let mean = crate::stats::mean(&compliers);
        let se = crate::stats::sample_sd(&compliers) / (compliers.len() as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se + 1.0, "{mean} vs {expected}");
    }

    #[test]
    fn never_takers_under_plus_concentrate_at_five() {
        let cfg = GenerativeConfig { n: 4000, seed: 53, ..GenerativeConfig::default() };
        let (ds, _) = generate_trial(&cfg).unwrap();
        let ys: Vec<f64> = ds.rows().iter().filter(|r| r.z == 1 && r.a == 0).map(|r| r.y).collect();
        assert!(ys.len() > 100);
        assert!((crate::stats::mean(&ys) - 5.0).abs() < 0.02);
        assert!((crate::stats::sample_sd(&ys) - 0.1).abs() < 0.01);
    }

    #[test]
    fn same_seed_same_trial() {
        let cfg = GenerativeConfig { n: 50, seed: 54, ..GenerativeConfig::default() };
        assert_eq!(generate_replicate(&cfg, 3).unwrap().0, generate_replicate(&cfg, 3).unwrap().0);
        assert_ne!(generate_replicate(&cfg, 3).unwrap().0, generate_replicate(&cfg, 4).unwrap().0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = GenerativeConfig { phi: 1.2, ..GenerativeConfig::default() };
        assert!(generate_trial(&cfg).is_err());
        cfg.phi = 0.5;
        cfg.outcomes.z_plus_a_none.sd = 0.0;
        assert!(generate_trial(&cfg).is_err());
        let cfg = GenerativeConfig { dim_x: 3, ..GenerativeConfig::default() };
        assert!(generate_trial(&cfg).is_err());
    }

    #[test]
    fn marginal_compliance_is_recovered_by_multinomial_fit() {
        let cfg = GenerativeConfig { n: 100_000, seed: 55, ..GenerativeConfig::default() };
        let (ds, _) = generate_trial(&cfg).unwrap();
        let fit = fit_compliance(&ds, &[0, 1]).unwrap();
        let nodes = bridge::bridge_nodes(cfg.phi, 2000);
        for x in [[0.0, 0.0], [0.6, -0.4], [-0.7, 0.5]] {
            for z in [-1i8, 1] {
                let mut truth = [0.0; 3];
                for u in &nodes {
                    let p = cfg.strata.probabilities(&x, z, *u);
                    for (k, s) in PrincipalStratum::MONOTONE.iter().enumerate() {
                        let a = compliance_from_stratum(*s, z).unwrap();
                        truth[(a + 1) as usize] += p[k] / nodes.len() as f64;
                    }
                }
                for a in [-1i8, 0, 1] {
                    let got = fit.prob(a, z, &x);
                    assert!((got - truth[(a + 1) as usize]).abs() < 0.02, "x={x:?} z={z} a={a}: {got} vs {}", truth[(a + 1) as usize]);
                }
            }
        }
    }
}
