//! Rejection sampling of complier outcomes from a tilted normal target.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{expit, normal_pdf, NormalQuadrature};

pub(crate) fn quadrature() -> &'static NormalQuadrature {
    static Q: OnceLock<NormalQuadrature> = OnceLock::new();
    Q.get_or_init(|| NormalQuadrature::new(64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RejectionConfig {
    pub proposal_mean: f64,
    pub proposal_sd: f64,
    /// Grid for the envelope constant: `grid_points` on `[-half_width, half_width]`.
    pub grid_points: usize,
    pub grid_half_width: f64,
    pub inflation: f64,
    pub max_proposals: usize,
    /// Return the mean of the accepted draws among `literal_draws` proposals
    /// instead of the first accepted draw.
    pub mean_of_accepted: bool,
    pub literal_draws: usize,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        Self {
            proposal_mean: 1.5,
            proposal_sd: 2.0,
            grid_points: 2001,
            grid_half_width: 10.0,
            inflation: 1.05,
            max_proposals: 1_000_000,
            mean_of_accepted: false,
            literal_draws: 8000,
        }
    }
}

/// Density `expit(c + s y) N(y; mean, sd^2) / gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedNormal {
    pub mean: f64,
    pub sd: f64,
    pub c: f64,
    pub s: f64,
    pub gamma: f64,
}

impl TiltedNormal {
    pub fn new(mean: f64, sd: f64, c: f64, s: f64) -> Result<Self> {
        if !(sd > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidInput(format!("invalid arm density N({mean}, {sd}^2)")));
        }
        let gamma = quadrature().expect(mean, sd, |y| expit(c + s * y));
        Ok(Self { mean, sd, c, s, gamma })
    }

    pub fn pdf(&self, y: f64) -> f64 {
        expit(self.c + self.s * y) * normal_pdf(y, self.mean, self.sd) / self.gamma
    }

    /// `E[Y]` under the target.
    pub fn expectation(&self) -> f64 {
        quadrature().expect(self.mean, self.sd, |y| y * expit(self.c + self.s * y)) / self.gamma
    }
}

#[derive(Debug, Clone)]
pub struct RejectionSampler {
    pub target: TiltedNormal,
    pub envelope: f64,
    cfg: RejectionConfig,
}

impl RejectionSampler {
    pub fn new(target: TiltedNormal, cfg: &RejectionConfig) -> Result<Self> {
        if cfg.grid_points < 2 || !(cfg.proposal_sd > 0.0) || cfg.inflation < 1.0 {
            return Err(Error::Config("invalid rejection-sampler settings".into()));
        }
        let step = 2.0 * cfg.grid_half_width / (cfg.grid_points - 1) as f64;
        let mut sup: f64 = 0.0;
        for k in 0..cfg.grid_points {
            let y = -cfg.grid_half_width + k as f64 * step;
            sup = sup.max(target.pdf(y) / normal_pdf(y, cfg.proposal_mean, cfg.proposal_sd));
        }
        if !(sup.is_finite() && sup > 0.0) {
            return Err(Error::Sampler(format!("envelope constant {sup} is not usable")));
        }
        Ok(Self { target, envelope: cfg.inflation * sup, cfg: cfg.clone() })
    }

    /// `f_target(y) / (M f_proposal(y))`.
    pub fn ratio(&self, y: f64) -> f64 {
        self.target.pdf(y) / (self.envelope * normal_pdf(y, self.cfg.proposal_mean, self.cfg.proposal_sd))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let proposal = Normal::new(self.cfg.proposal_mean, self.cfg.proposal_sd).map_err(|e| Error::Sampler(e.to_string()))?;
        if self.cfg.mean_of_accepted {
            let (mut sum, mut k) = (0.0, 0usize);
            for _ in 0..self.cfg.literal_draws {
                let y = proposal.sample(rng);
                if rng.random::<f64>() < self.ratio(y) {
                    sum += y;
                    k += 1;
                }
            }
            if k == 0 {
                return Err(Error::Sampler(format!("no draw accepted among {}", self.cfg.literal_draws)));
            }
            return Ok(sum / k as f64);
        }
        for _ in 0..self.cfg.max_proposals {
            let y = proposal.sample(rng);
            if rng.random::<f64>() < self.ratio(y) {
                return Ok(y);
            }
        }
        Err(Error::Sampler(format!("no acceptance within {} proposals", self.cfg.max_proposals)))
    }
}
