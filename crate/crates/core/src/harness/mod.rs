//! Orchestration: replicated scenarios, sensitivity sweeps, train/test
//! resampling, the exact oracle checks, and CSV reports.
//!
//! Replicates run on the rayon pool. Each replicate draws only from its own
//! keyed streams and results are collected in replicate order, so every
//! report is byte-identical for a given config and seed whatever the
//! thread count.

pub mod config;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod sweep;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learner::{learn_policy, select_lambda, LearnerConfig};
use crate::model::{Dataset, LinearPolicy, Method};
use crate::nuisance::NuisanceTable;
use crate::sensitivity::{fit_pca1, SensitivityForm, SensitivityParams};
use crate::weights::weight_vector;

pub use config::{Preset, RunConfig, ScenarioSpec};
pub use oracle::{run_oracle_check, OracleReport};
pub use scenario::{run_fit, run_gen, run_scenario, ScenarioResult};
pub use sweep::{run_sweep, SweepResult};
pub use train_test::{run_train_test, TrainTestResult};

/// Runs with more than this share of failed units are invalid.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// A replicate (or replicate x grid cell) that errored and was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub replicate: u64,
    pub seed: u64,
    pub unit: String,
    pub error: String,
}

/// Failure bookkeeping shared by every replicated command.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunStatus {
    pub attempted: usize,
    pub failures: Vec<Failure>,
}

impl RunStatus {
    pub fn failure_rate(&self) -> f64 {
        if self.attempted == 0 {
            return 0.0;
        }
        self.failures.len() as f64 / self.attempted as f64
    }

    pub fn is_valid(&self) -> bool {
        self.failure_rate() <= MAX_FAILURE_RATE
    }

    fn record(&mut self, replicate: u64, seed: u64, unit: impl Into<String>, e: &Error) {
        let f = Failure { replicate, seed, unit: unit.into(), error: e.to_string() };
        log::warn!("replicate {} (seed {}) {} failed: {}", f.replicate, f.seed, f.unit, f.error);
        self.failures.push(f);
    }
}

/// Evaluates `f` for `0..count` on the current pool, in index order.
pub(crate) fn par_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

/// Runs `f` on a pool of `jobs` threads, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--jobs must be positive".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// A learned regime with the penalty it was fitted at.
#[derive(Debug, Clone, PartialEq)]
pub struct Learned {
    pub method: Method,
    pub policy: LinearPolicy,
    pub lambda: f64,
    pub clipped: usize,
}

/// Weights for `method`, the penalty (cross-validated when a grid is set),
/// and the fitted regime.
pub fn learn(method: Method, ds: &Dataset, table: &NuisanceTable, params: &SensitivityParams, cfg: &LearnerConfig) -> Result<Learned> {
    let wv = weight_vector(method, ds, table, params)?;
    let lambda = if cfg.lambda_grid.is_empty() { cfg.lambda } else { select_lambda(ds, &wv, cfg)? };
    let policy = learn_policy(ds, &wv, &LearnerConfig { lambda, ..cfg.clone() })?;
    Ok(Learned { method, policy, lambda, clipped: wv.clipped })
}

/// Fits the principal-component loading when the form needs one and none
/// was supplied.
pub fn resolve_params(params: &SensitivityParams, ds: &Dataset) -> Result<SensitivityParams> {
    let mut p = params.clone();
    if p.form == SensitivityForm::Pca1 && p.pca.is_none() {
        p.pca = Some(fit_pca1(ds)?);
    }
    p.validate(ds.dim_x())?;
    Ok(p)
}

/// Mean and sample SD.
pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    (crate::stats::mean(xs), crate::stats::sample_sd(xs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_threshold() {
        let mut s = RunStatus { attempted: 100, failures: vec![] };
        for r in 0..5 {
            s.record(r, 1, "x", &Error::Numerical("boom".into()));
        }
        assert!(s.is_valid());
        s.record(5, 1, "x", &Error::Numerical("boom".into()));
        assert!(!s.is_valid());
    }

    #[test]
    fn par_indexed_keeps_order() {
        let v = with_jobs(Some(3), || par_indexed(50, |r| r * r)).unwrap();
        assert_eq!(v, (0..50u64).map(|r| r * r).collect::<Vec<_>>());
        assert!(with_jobs(Some(0), || ()).is_err());
    }
}
