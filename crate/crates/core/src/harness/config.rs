//! The JSON run configuration and the shipped scenario presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{GenerativeConfig, TruthTable};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::model::Method;
use crate::nuisance::{BoostConfig, MisspecMasks, OutcomeFamily, DEFAULT_N_MC};
use crate::sensitivity::SensitivityParams;

/// Named misspecification patterns. `CASE2_W`/`CASE3_W` break the weight
/// nuisances, `CASE2_V`..`CASE4_V` break one value nuisance each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "CASE1")]
    Case1,
    #[serde(rename = "CASE2_W")]
    Case2W,
    #[serde(rename = "CASE3_W")]
    Case3W,
    #[serde(rename = "CASE2_V")]
    Case2V,
    #[serde(rename = "CASE3_V")]
    Case3V,
    #[serde(rename = "CASE4_V")]
    Case4V,
}

impl Preset {
    pub const ALL: [Preset; 6] = [Self::Case1, Self::Case2W, Self::Case3W, Self::Case2V, Self::Case3V, Self::Case4V];

    /// Misspecified models drop every covariate.
    pub fn masks(self) -> MisspecMasks {
        let none = Some(vec![]);
        match self {
            Self::Case1 => MisspecMasks::default(),
            Self::Case2W => MisspecMasks { fz: none.clone(), fa: none, q: None },
            Self::Case3W => MisspecMasks { q: none, ..Default::default() },
            Self::Case2V => MisspecMasks { fz: none, ..Default::default() },
            Self::Case3V => MisspecMasks { fa: none, ..Default::default() },
            Self::Case4V => MisspecMasks { q: none, ..Default::default() },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Case1 => "CASE1",
            Self::Case2W => "CASE2_W",
            Self::Case3W => "CASE3_W",
            Self::Case2V => "CASE2_V",
            Self::Case3V => "CASE3_V",
            Self::Case4V => "CASE4_V",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub preset: Preset,
    /// Overrides the preset's masks when present.
    pub misspec: Option<MisspecMasks>,
    /// Policy learners run on every replicate.
    pub methods: Vec<Method>,
    /// Learner whose policy is scored by the value estimators.
    pub value_policy: Method,
    pub value_estimators: Vec<Method>,
    /// Sensitivity parameters used in the analysis; defaults to the truth.
    pub analysis: Option<SensitivityParams>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            preset: Preset::Case1,
            misspec: None,
            methods: vec![Method::Owl, Method::Ivt, Method::Ipw, Method::Mr],
            value_policy: Method::Ipw,
            value_estimators: vec![Method::Ipw, Method::Mr],
            analysis: None,
        }
    }
}

impl ScenarioSpec {
    pub fn masks(&self) -> MisspecMasks {
        self.misspec.clone().unwrap_or_else(|| self.preset.masks())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceConfig {
    pub n_mc: usize,
    pub family: OutcomeFamily,
    pub kappa_folds: usize,
    pub boost: BoostConfig,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self { n_mc: DEFAULT_N_MC, family: OutcomeFamily::Gaussian, kappa_folds: 5, boost: BoostConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    /// Midpoint grid points per covariate axis.
    pub grid: usize,
    /// Quadrature nodes for the latent confounder.
    pub u_nodes: usize,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self { grid: TruthTable::DEFAULT_GRID, u_nodes: TruthTable::DEFAULT_U_NODES }
    }
}

fn default_alpha_grid() -> Vec<f64> {
    vec![-1.0, -0.5, 0.0, 0.5, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Analysis values of `alphaY` for arm `-1`.
    pub grid_minus: Vec<f64>,
    /// Analysis values of `alphaY` for arm `+1`.
    pub grid_plus: Vec<f64>,
    /// Generating `alphaY` per arm; replaces the world's parameters.
    pub true_alpha: [f64; 2],
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { grid_minus: default_alpha_grid(), grid_plus: default_alpha_grid(), true_alpha: [0.5, -0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainTestConfig {
    pub n: usize,
    pub splits: usize,
    /// Training share of each split.
    pub train_fraction: f64,
    /// Generating `alphaY` of the binary-outcome world.
    pub true_alpha: [f64; 2],
    /// Complier share of the world, also assumed when calibrating `alpha0`.
    pub p_complier: f64,
    /// `P(A = z | Z = z)` of the world.
    pub p_comply: f64,
    pub grid_minus: Vec<f64>,
    pub grid_plus: Vec<f64>,
}

impl Default for TrainTestConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            splits: 100,
            train_fraction: 0.6,
            true_alpha: [0.5, 0.5],
            p_complier: 0.3,
            p_comply: 0.5,
            grid_minus: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            grid_plus: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub n: usize,
    pub seeds: usize,
    /// Multiplier on the standard error in the robustness check.
    pub z_crit: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { n: 4000, seeds: 20, z_crit: 3.0 }
    }
}

/// Data source for `fit`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// CSV with header `x1..xk,z,a,y`; relative paths resolve against the
    /// config file. Empty means "generate one trial from `world`".
    pub data: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub replicates: usize,
    /// Master seed; overrides `world.seed` when set.
    pub seed: Option<u64>,
    /// Sample size; overrides `world.n` when set.
    pub n: Option<usize>,
    pub world: GenerativeConfig,
    pub scenario: ScenarioSpec,
    pub learner: LearnerConfig,
    pub nuisance: NuisanceConfig,
    pub truth: TruthConfig,
    pub sweep: SweepConfig,
    pub train_test: TrainTestConfig,
    pub oracle: OracleConfig,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            seed: None,
            n: None,
            world: GenerativeConfig::default(),
            scenario: ScenarioSpec::default(),
            learner: LearnerConfig::default(),
            nuisance: NuisanceConfig::default(),
            truth: TruthConfig::default(),
            sweep: SweepConfig::default(),
            train_test: TrainTestConfig::default(),
            oracle: OracleConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `fit.data` path is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if !cfg.fit.data.as_os_str().is_empty() && cfg.fit.data.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.fit.data = dir.join(&cfg.fit.data);
            }
        }
        Ok(cfg)
    }

    /// Folds the top-level `seed` and `n` into the world.
    pub fn normalize(&mut self) {
        if let Some(s) = self.seed {
            self.world.seed = s;
        }
        if let Some(n) = self.n {
            self.world.n = n;
        }
        self.seed = Some(self.world.seed);
        self.n = Some(self.world.n);
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.normalize();
    }

    pub fn master_seed(&self) -> u64 {
        self.world.seed
    }

    /// Analysis parameters before any data-dependent fitting.
    pub fn analysis_params(&self) -> SensitivityParams {
        self.scenario.analysis.clone().unwrap_or_else(|| self.world.true_params.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.nuisance.n_mc == 0 {
            return Err(Error::Config("nuisance.n_mc must be positive".into()));
        }
        if self.nuisance.kappa_folds < 2 {
            return Err(Error::Config("nuisance.kappa_folds must be at least 2".into()));
        }
        if self.truth.grid == 0 || self.truth.u_nodes == 0 {
            return Err(Error::Config("truth.grid and truth.u_nodes must be positive".into()));
        }
        if !(self.learner.lambda > 0.0) || self.learner.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("penalties must be positive".into()));
        }
        if self.scenario.methods.is_empty() {
            return Err(Error::Config("scenario.methods is empty".into()));
        }
        if self.scenario.methods.contains(&Method::MrKnownFz) {
            return Err(Error::Config("MR_KNOWN_FZ is a value estimator, not a policy learner".into()));
        }
        if let Some(m) = self.scenario.value_estimators.iter().find(|m| !matches!(m, Method::Ipw | Method::Mr)) {
            return Err(Error::Config(format!("{m} cannot be a scenario value estimator; use IPW or MR")));
        }
        if !self.scenario.value_estimators.is_empty() && !self.scenario.methods.contains(&self.scenario.value_policy) {
            return Err(Error::Config(format!("value_policy {} is not among scenario.methods", self.scenario.value_policy)));
        }
        let masks = self.scenario.masks();
        for m in [&masks.fz, &masks.fa, &masks.q].into_iter().flatten() {
            crate::nuisance::validate_mask(m, self.world.dim_x)?;
        }
        self.analysis_params().validate(self.world.dim_x).or_else(|e| match self.analysis_params().form {
            crate::sensitivity::SensitivityForm::Pca1 => Ok(()),
            _ => Err(e),
        })?;
        if self.sweep.grid_minus.is_empty() || self.sweep.grid_plus.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        let tt = &self.train_test;
        if !(tt.train_fraction > 0.0 && tt.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {}", tt.train_fraction)));
        }
        if tt.splits == 0 || tt.grid_minus.is_empty() || tt.grid_plus.is_empty() {
            return Err(Error::Config("train_test needs splits and nonempty grids".into()));
        }
        if !(0.0 < tt.p_complier && tt.p_complier < tt.p_comply && tt.p_comply < 1.0) {
            return Err(Error::Config("train_test needs 0 < p_complier < p_comply < 1".into()));
        }
        if self.oracle.n == 0 || self.oracle.seeds == 0 {
            return Err(Error::Config("oracle.n and oracle.seeds must be positive".into()));
        }
        Ok(())
    }
}
