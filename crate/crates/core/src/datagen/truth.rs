//! Ground-truth values for the synthetic trial.
//!
//! With `m_z(x)` the mean of the tilted arm density, two targets are exposed:
//! the marginal value `E[m_pi(X)(X)]`, which is what the weighting
//! estimators identify, and the complier-conditional value
//! `E[p4(X) m_pi(X)(X)] / E[p4(X)]`, where `p4(x)` is the complier share at `x`
//! after integrating out `Z` and `U`. The two agree when `p4` is constant.

use rand::Rng;

use super::bridge::{bridge_nodes, sample_bridge};
use super::{rejection_sample_complier_y, sample_stratum, GenerativeConfig};
use crate::error::{Error, Result};
use crate::model::{LinearPolicy, PrincipalStratum};
use crate::stats::pairwise_sum;

/// `[m_{-1}(x), m_{+1}(x)]`.
pub fn complier_means(cfg: &GenerativeConfig, x: &[f64]) -> Result<[f64; 2]> {
    Ok([cfg.complier_target(-1, x)?.expectation(), cfg.complier_target(1, x)?.expectation()])
}

/// The arm with the larger mean; `+1` on ties.
pub fn best_arm(m: [f64; 2]) -> i8 {
    if m[1] >= m[0] {
        1
    } else {
        -1
    }
}

/// `p(S4 | x)` with `Z` and `U` integrated out on fixed bridge nodes.
pub fn complier_share(cfg: &GenerativeConfig, x: &[f64], u_nodes: &[f64]) -> f64 {
    let pz = cfg.p_instrument_plus(x);
    let mut total = 0.0;
    for (z, w) in [(-1i8, 1.0 - pz), (1, pz)] {
        let s: f64 = u_nodes.iter().map(|u| cfg.strata.probabilities(x, z, *u)[3]).sum();
        total += w * s / u_nodes.len() as f64;
    }
    total
}

/// Truth on a midpoint grid over `(-1, 1)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    points: Vec<Vec<f64>>,
    share: Vec<f64>,
    means: Vec<[f64; 2]>,
}

impl TruthTable {
    pub const DEFAULT_GRID: usize = 100;
    pub const DEFAULT_U_NODES: usize = 256;

    pub fn build(cfg: &GenerativeConfig, grid_per_dim: usize, u_nodes: usize) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim_x;
        let total = (grid_per_dim as f64).powi(d as i32);
        if grid_per_dim == 0 || total > 2e6 {
            return Err(Error::InvalidInput(format!("truth grid of {total} points is out of range")));
        }
        let nodes = bridge_nodes(cfg.phi, u_nodes.max(1));
        let axis: Vec<f64> = (0..grid_per_dim).map(|k| -1.0 + (2 * k + 1) as f64 / grid_per_dim as f64).collect();
        let mut points = vec![vec![]];
        for _ in 0..d {
            points = points.into_iter().flat_map(|p| axis.iter().map(move |a| [p.clone(), vec![*a]].concat())).collect();
        }
        let share = points.iter().map(|x| complier_share(cfg, x, &nodes)).collect();
        let means = points.iter().map(|x| complier_means(cfg, x)).collect::<Result<_>>()?;
        Ok(Self { points, share, means })
    }

    pub fn default_for(cfg: &GenerativeConfig) -> Result<Self> {
        Self::build(cfg, Self::DEFAULT_GRID, Self::DEFAULT_U_NODES)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn chosen(&self, policy: &LinearPolicy) -> Result<Vec<f64>> {
        if policy.dim() != self.points[0].len() {
            return Err(Error::DimensionMismatch { expected: self.points[0].len(), got: policy.dim() });
        }
        Ok(self.points.iter().zip(&self.means).map(|(x, m)| if policy.decide_unchecked(x) == 1 { m[1] } else { m[0] }).collect())
    }

    fn weighted(&self, v: &[f64]) -> f64 {
        let num: Vec<f64> = v.iter().zip(&self.share).map(|(a, c)| a * c).collect();
        pairwise_sum(&num) / pairwise_sum(&self.share)
    }

    /// Marginal value `E[m_pi(X)(X)]`.
    pub fn value(&self, policy: &LinearPolicy) -> Result<f64> {
        let v = self.chosen(policy)?;
        Ok(pairwise_sum(&v) / v.len() as f64)
    }

    /// Complier-conditional value `E[Y(pi(X)) | S4]`.
    pub fn complier_value(&self, policy: &LinearPolicy) -> Result<f64> {
        Ok(self.weighted(&self.chosen(policy)?))
    }

    fn best(&self) -> Vec<f64> {
        self.means.iter().map(|m| m[0].max(m[1])).collect()
    }

    /// Marginal value of the best arm at every point.
    pub fn optimal_value(&self) -> f64 {
        let v = self.best();
        pairwise_sum(&v) / v.len() as f64
    }

    pub fn optimal_complier_value(&self) -> f64 {
        self.weighted(&self.best())
    }

    /// Mean complier share over the grid.
    pub fn complier_fraction(&self) -> f64 {
        pairwise_sum(&self.share) / self.share.len() as f64
    }

    /// Grid points with their optimal arm.
    pub fn eval_set(&self) -> Vec<(Vec<f64>, i8)> {
        self.points.iter().zip(&self.means).map(|(x, m)| (x.clone(), best_arm(*m))).collect()
    }

    /// Fraction of grid points where `policy` picks the optimal arm.
    pub fn classification_rate(&self, policy: &LinearPolicy) -> Result<f64> {
        crate::model::correct_classification_rate(policy, &self.eval_set())
    }
}

/// Monte-Carlo marginal value: draw `x`, then a complier outcome under
/// `pi(x)` by rejection sampling.
pub fn true_marginal_value<R: Rng + ?Sized>(cfg: &GenerativeConfig, policy: &LinearPolicy, n_mc: usize, rng: &mut R) -> Result<f64> {
    cfg.validate()?;
    if policy.dim() != cfg.dim_x {
        return Err(Error::DimensionMismatch { expected: cfg.dim_x, got: policy.dim() });
    }
    let mut ys = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let x: Vec<f64> = (0..cfg.dim_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        ys.push(rejection_sample_complier_y(&x, policy.decide_unchecked(&x), cfg, rng)?);
    }
    Ok(crate::stats::mean(&ys))
}

/// Monte-Carlo complier value: simulate subjects, keep compliers, and draw
/// each complier's outcome under `pi(x)` by rejection sampling.
pub fn true_complier_value<R: Rng + ?Sized>(cfg: &GenerativeConfig, policy: &LinearPolicy, n_mc: usize, rng: &mut R) -> Result<f64> {
    cfg.validate()?;
    if policy.dim() != cfg.dim_x {
        return Err(Error::DimensionMismatch { expected: cfg.dim_x, got: policy.dim() });
    }
    let mut ys = Vec::with_capacity(n_mc);
    while ys.len() < n_mc {
        let x: Vec<f64> = (0..cfg.dim_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: i8 = if rng.random::<f64>() < cfg.p_instrument_plus(&x) { 1 } else { -1 };
        let u = sample_bridge(cfg.phi, rng)?;
        if sample_stratum(&cfg.strata, &x, z, u, rng) == PrincipalStratum::S4 {
            ys.push(rejection_sample_complier_y(&x, policy.decide_unchecked(&x), cfg, rng)?);
        }
    }
    Ok(crate::stats::mean(&ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed;
    use crate::sensitivity::SensitivityParams;

    fn cfg(am: f64, ap: f64) -> GenerativeConfig {
        GenerativeConfig { true_params: SensitivityParams::y_only(am, ap), ..GenerativeConfig::default() }
    }

    /// `pi(x) = -1` iff `m_{-1}(x) > m_{+1}(x)`; for these worlds the boundary
    /// is `x1 + x2 = const`, recovered here by a bisection on the diagonal.
    fn optimal_linear(c: &GenerativeConfig) -> LinearPolicy {
        let (mut lo, mut hi) = (-1.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let m = complier_means(c, &[mid, mid]).unwrap();
            if m[0] > m[1] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        LinearPolicy::new(2.0 * 0.5 * (lo + hi), vec![-1.0, -1.0])
    }

    /// Independent oracle: 2-d Simpson rule over the box with adaptive
    /// Gauss-Kronrod-free trapezoid in `y`.
    fn oracle_optimal(c: &GenerativeConfig) -> f64 {
        let tilt_mean = |z: i8, x: &[f64]| -> f64 {
            let t = c.complier_target(z, x).unwrap();
            let (lo, hi, k) = (t.mean - 8.0 * t.sd, t.mean + 8.0 * t.sd, 4000);
            let h = (hi - lo) / k as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..=k {
                let y = lo + i as f64 * h;
                let f = crate::stats::normal_pdf(y, t.mean, t.sd) * crate::stats::expit(t.c + t.s * y) * if i == 0 || i == k { 0.5 } else { 1.0 };
                num += y * f;
                den += f;
            }
            num / den
        };
        let g = 60;
        let mut acc = 0.0;
        for i in 0..=g {
            for j in 0..=g {
                let x = [-1.0 + 2.0 * i as f64 / g as f64, -1.0 + 2.0 * j as f64 / g as f64];
                let wi = if i == 0 || i == g { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                let wj = if j == 0 || j == g { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                acc += wi * wj * tilt_mean(-1, &x).max(tilt_mean(1, &x));
            }
        }
        acc / (3.0 * g as f64).powi(2)
    }

    #[test]
    fn optimal_values_match_independent_oracle() {
        for (am, ap) in [(0.5, 0.5), (0.5, -0.5), (0.0, 0.0)] {
            let c = cfg(am, ap);
            let t = TruthTable::default_for(&c).unwrap();
            assert!((t.optimal_value() - oracle_optimal(&c)).abs() < 2e-3, "({am},{ap}): {}", t.optimal_value());
            let lin = optimal_linear(&c);
            assert!((t.value(&lin).unwrap() - t.optimal_value()).abs() < 1e-3);
            assert!(t.classification_rate(&lin).unwrap() > 0.99);
        }
        let t = TruthTable::default_for(&cfg(0.0, 0.0)).unwrap();
        assert!((t.optimal_value() - 5.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn monte_carlo_agrees_with_table() {
        let c = cfg(0.5, 0.5);
        let t = TruthTable::default_for(&c).unwrap();
        let pol = LinearPolicy::new(0.2, vec![-1.0, 0.5]);
        let mut rng = keyed(61, 0, 0);
        let mc = true_complier_value(&c, &pol, 200_000, &mut rng).unwrap();
        assert!((mc - t.complier_value(&pol).unwrap()).abs() < 0.01, "{mc} {}", t.complier_value(&pol).unwrap());
        let mc = true_marginal_value(&c, &pol, 200_000, &mut rng).unwrap();
        assert!((mc - t.value(&pol).unwrap()).abs() < 0.01, "{mc} {}", t.value(&pol).unwrap());
    }

    #[test]
    fn constant_policy_values_coincide() {
        let t = TruthTable::default_for(&cfg(0.5, 0.5)).unwrap();
        let always = LinearPolicy::new(1.0, vec![0.0, 0.0]);
        assert!((t.value(&always).unwrap() - t.complier_value(&always).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn share_integrates_bridge() {
        let c = cfg(0.5, 0.5);
        let coarse = complier_share(&c, &[0.2, 0.1], &bridge_nodes(0.5, 256));
        let fine = complier_share(&c, &[0.2, 0.1], &bridge_nodes(0.5, 20_000));
        assert!((coarse - fine).abs() < 1e-3);
    }
}
