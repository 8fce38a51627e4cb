//! Replicated known-alpha scenarios, plus the single-dataset `gen` and
//! `fit` commands.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use super::report::{ensure_dir, num, write_json, write_status, Table};
use super::{learn, mean_sd, par_indexed, resolve_params, Learned, RunStatus};
use crate::datagen::{generate_replicate, generate_trial, write_truth_csv, TruthTable};
use crate::error::{Error, Result};
use crate::model::{Dataset, EstimateWithSE, LinearPolicy, Method};
use crate::nuisance::{fit_kappa, fit_nuisances, NuisanceTable};
use crate::rng::{keyed, stream};
use crate::sensitivity::SensitivityParams;
use crate::value::{psi_mr, value};
use crate::weights::weight_vector;

/// One learned regime scored against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRecord {
    pub method: Method,
    pub lambda: f64,
    /// Share of truth-grid points where the regime picks the better arm.
    pub rate: f64,
    /// `E[m_pi(X)(X)]`, `m_z` the complier mean outcome under arm `z`.
    pub value: f64,
    /// `E[Y(pi(X)) | S4]`.
    pub complier_value: f64,
    pub clipped: usize,
    pub policy: LinearPolicy,
}

/// A value estimate of one learner's regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueRecord {
    pub policy: Method,
    pub estimator: Method,
    pub estimate: f64,
    pub se: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub policies: Vec<PolicyRecord>,
    pub values: Vec<ValueRecord>,
    pub psi: Option<EstimateWithSE>,
    /// Largest `|mean|` of the per-row influence contributions.
    pub eif_centering: f64,
    pub clip_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    /// Preset name, or `CUSTOM` when masks were given explicitly.
    pub label: String,
    pub alpha_y: [f64; 2],
    pub n: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub replicates: Vec<ReplicateOutcome>,
    pub status: RunStatus,
    pub optimal_value: f64,
    pub optimal_complier_value: f64,
}

impl ScenarioResult {
    pub fn policy_metric(&self, method: Method, f: impl Fn(&PolicyRecord) -> f64) -> Vec<f64> {
        self.replicates.iter().flat_map(|r| r.policies.iter().filter(|p| p.method == method).map(&f)).collect()
    }

    /// Mean and SD of the classification rate.
    pub fn rate(&self, method: Method) -> (f64, f64) {
        mean_sd(&self.policy_metric(method, |p| p.rate))
    }

    /// Mean and SD of the true marginal value.
    pub fn value(&self, method: Method) -> (f64, f64) {
        mean_sd(&self.policy_metric(method, |p| p.value))
    }

    pub fn value_records(&self, estimator: Method) -> Vec<&ValueRecord> {
        self.replicates.iter().flat_map(|r| r.values.iter().filter(move |v| v.estimator == estimator)).collect()
    }

    /// Mean and SD of an estimator's estimates.
    pub fn estimate(&self, estimator: Method) -> (f64, f64) {
        mean_sd(&self.value_records(estimator).iter().map(|v| v.estimate).collect::<Vec<_>>())
    }

    /// Mean true value of the scored regime.
    pub fn scored_truth(&self) -> f64 {
        let t: Vec<f64> = self.replicates.iter().filter_map(|r| r.values.first().map(|v| v.truth)).collect();
        crate::stats::mean(&t)
    }

    pub fn max_eif_centering(&self) -> f64 {
        self.replicates.iter().map(|r| r.eif_centering).fold(0.0, f64::max)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut reps = Table::new(&["replicate", "method", "lambda", "rate", "value", "complier_value", "clipped", "beta0", "beta"]);
        let mut vals = Table::new(&["replicate", "policy", "estimator", "estimate", "se", "truth"]);
        let mut diag = Table::new(&["replicate", "clip_events", "psi", "psi_se", "eif_centering"]);
        for r in &self.replicates {
            for p in &r.policies {
                let beta: Vec<String> = p.policy.beta.iter().map(|b| num(*b)).collect();
                reps.push(vec![
                    r.replicate.to_string(),
                    p.method.to_string(),
                    num(p.lambda),
                    num(p.rate),
                    num(p.value),
                    num(p.complier_value),
                    p.clipped.to_string(),
                    num(p.policy.beta0),
                    beta.join(";"),
                ]);
            }
            for v in &r.values {
                vals.push(vec![r.replicate.to_string(), v.policy.to_string(), v.estimator.to_string(), num(v.estimate), num(v.se), num(v.truth)]);
            }
            let (psi, psi_se) = r.psi.as_ref().map_or((String::new(), String::new()), |e| (num(e.estimate), num(e.se)));
            diag.push(vec![r.replicate.to_string(), r.clip_events.to_string(), psi, psi_se, num(r.eif_centering)]);
        }
        let mut flat = Table::new(&["method", "alpha_minus", "alpha_plus", "scenario", "estimate", "se", "n", "seed"]);
        for r in &self.replicates {
            for v in &r.values {
                flat.push(vec![
                    format!("{}:{}", v.policy, v.estimator),
                    num(self.alpha_y[0]),
                    num(self.alpha_y[1]),
                    self.label.clone(),
                    num(v.estimate),
                    num(v.se),
                    self.n.to_string(),
                    self.seed.to_string(),
                ]);
            }
        }
        flat.write(&dir.join("value_estimates.csv"))?;
        reps.write(&dir.join("replicates.csv"))?;
        vals.write(&dir.join("values.csv"))?;
        diag.write(&dir.join("diagnostics.csv"))?;

        let mut sum = Table::new(&["method", "metric", "mean", "sd", "count"]);
        let mut push = |m: String, metric: &str, xs: Vec<f64>| {
            let (mu, sd) = mean_sd(&xs);
            sum.push(vec![m, metric.into(), num(mu), num(sd), xs.len().to_string()]);
        };
        push("OPTIMAL".into(), "value", vec![self.optimal_value]);
        push("OPTIMAL".into(), "complier_value", vec![self.optimal_complier_value]);
        for &m in &self.methods {
            push(m.to_string(), "rate", self.policy_metric(m, |p| p.rate));
            push(m.to_string(), "value", self.policy_metric(m, |p| p.value));
            push(m.to_string(), "complier_value", self.policy_metric(m, |p| p.complier_value));
            push(m.to_string(), "lambda", self.policy_metric(m, |p| p.lambda));
        }
        let mut pairs: Vec<(Method, Method)> = vec![];
        for r in &self.replicates {
            for v in &r.values {
                if !pairs.contains(&(v.policy, v.estimator)) {
                    pairs.push((v.policy, v.estimator));
                }
            }
        }
        if let Some(&(p, _)) = pairs.first() {
            let t: Vec<f64> = self.replicates.iter().filter_map(|r| r.values.first().map(|v| v.truth)).collect();
            push(format!("{p}:TRUTH"), "value", t);
        }
        for (p, e) in pairs {
            let recs: Vec<&ValueRecord> = self.value_records(e).into_iter().filter(|v| v.policy == p).collect();
            push(format!("{p}:{e}"), "estimate", recs.iter().map(|v| v.estimate).collect());
            push(format!("{p}:{e}"), "se", recs.iter().map(|v| v.se).collect());
        }
        sum.write(&dir.join("summary.csv"))?;
        write_status(dir, "scenario", &self.status)
    }
}

/// Value-estimator table: the weight table plus cross-fitted `kappa` when
/// the multiply robust estimator is requested.
fn value_table(cfg: &RunConfig, ds: &Dataset, table: &NuisanceTable, params: &SensitivityParams, estimators: &[Method]) -> Result<NuisanceTable> {
    let mut t = table.clone();
    if estimators.contains(&Method::Mr) {
        let k = fit_kappa(ds, table, params, cfg.nuisance.kappa_folds, &cfg.nuisance.boost)?;
        t.set_kappa(k.out_of_fold(ds))?;
    }
    Ok(t)
}

fn scenario_replicate(cfg: &RunConfig, truth: &TruthTable, r: u64) -> Result<ReplicateOutcome> {
    let seed = cfg.master_seed();
    let (ds, _) = generate_replicate(&cfg.world, r)?;
    let params = resolve_params(&cfg.analysis_params(), &ds)?;
    let mut rng = keyed(seed, r, stream::NUISANCE_MC);
    let ns = fit_nuisances(&ds, &cfg.scenario.masks(), cfg.nuisance.family, cfg.nuisance.n_mc, &mut rng)?;
    let table = ns.table(&ds, &params)?;
    let mut policies = Vec::with_capacity(cfg.scenario.methods.len());
    for &m in &cfg.scenario.methods {
        let Learned { policy, lambda, clipped, .. } = learn(m, &ds, &table, &params, &cfg.learner)?;
        log::info!("replicate {r} {m}: lambda {lambda}");
        policies.push(PolicyRecord {
            method: m,
            lambda,
            rate: truth.classification_rate(&policy)?,
            value: truth.value(&policy)?,
            complier_value: truth.complier_value(&policy)?,
            clipped,
            policy,
        });
    }
    let mut values = vec![];
    let mut psi = None;
    let mut centering: f64 = 0.0;
    let est = &cfg.scenario.value_estimators;
    if !est.is_empty() {
        let vt = value_table(cfg, &ds, &table, &params, est)?;
        let scored = policies.iter().find(|p| p.method == cfg.scenario.value_policy).expect("validated value_policy");
        for &e in est {
            let v = value(e, &ds, &scored.policy, &vt, &params, None)?;
            centering = centering.max(crate::stats::mean(&v.contributions).abs());
            values.push(ValueRecord { policy: scored.method, estimator: e, estimate: v.estimate.estimate, se: v.estimate.se, truth: scored.value });
        }
        let p = psi_mr(&ds, &vt, &params)?;
        centering = centering.max(crate::stats::mean(&p.contributions).abs());
        psi = Some(p.estimate);
    }
    Ok(ReplicateOutcome { replicate: r, policies, values, psi, eif_centering: centering, clip_events: table.clip_events() })
}

/// Runs `cfg.replicates` replicates of the configured scenario.
pub fn run_scenario(cfg: &RunConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let truth = TruthTable::build(&cfg.world, cfg.truth.grid, cfg.truth.u_nodes)?;
    let outcomes = par_indexed(cfg.replicates, |r| scenario_replicate(cfg, &truth, r));
    let mut status = RunStatus { attempted: cfg.replicates, failures: vec![] };
    let mut replicates = Vec::with_capacity(outcomes.len());
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => replicates.push(o),
            Err(e) => status.record(r as u64, cfg.master_seed(), "replicate", &e),
        }
    }
    let a = cfg.analysis_params();
    Ok(ScenarioResult {
        label: if cfg.scenario.misspec.is_some() { "CUSTOM".into() } else { cfg.scenario.preset.name().into() },
        alpha_y: [a.alpha.minus.ay, a.alpha.plus.ay],
        n: cfg.world.n,
        seed: cfg.master_seed(),
        methods: cfg.scenario.methods.clone(),
        replicates,
        status,
        optimal_value: truth.optimal_value(),
        optimal_complier_value: truth.optimal_complier_value(),
    })
}

/// One trial: `data.csv` and the hidden-truth sidecar `truth.csv`.
pub fn run_gen(cfg: &RunConfig, dir: &Path) -> Result<Dataset> {
    cfg.validate()?;
    ensure_dir(dir)?;
    let (ds, truth) = generate_trial(&cfg.world)?;
    ds.write_csv(BufWriter::new(File::create(dir.join("data.csv"))?))?;
    write_truth_csv(&truth, BufWriter::new(File::create(dir.join("truth.csv"))?))?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedPolicy {
    pub method: Method,
    pub lambda: f64,
    pub beta0: f64,
    pub beta: Vec<f64>,
}

/// Fits every configured learner on one dataset (`fit.data`, or a fresh
/// trial) and writes regimes, weights and value estimates.
pub fn run_fit(cfg: &RunConfig, dir: &Path) -> Result<Vec<FittedPolicy>> {
    cfg.validate()?;
    ensure_dir(dir)?;
    let ds = if cfg.fit.data.as_os_str().is_empty() {
        generate_trial(&cfg.world)?.0
    } else {
        let f = File::open(&cfg.fit.data).map_err(|e| Error::Config(format!("cannot open {}: {e}", cfg.fit.data.display())))?;
        Dataset::read_csv(f)?
    };
    let params = resolve_params(&cfg.analysis_params(), &ds)?;
    let mut rng = keyed(cfg.master_seed(), 0, stream::NUISANCE_MC);
    let ns = fit_nuisances(&ds, &cfg.scenario.masks(), cfg.nuisance.family, cfg.nuisance.n_mc, &mut rng)?;
    let table = ns.table(&ds, &params)?;
    let mut fitted = vec![];
    for &m in &cfg.scenario.methods {
        weight_vector(m, &ds, &table, &params)?.write_csv(BufWriter::new(File::create(dir.join(format!("weights_{m}.csv")))?))?;
        let l = learn(m, &ds, &table, &params, &cfg.learner)?;
        fitted.push(FittedPolicy { method: m, lambda: l.lambda, beta0: l.policy.beta0, beta: l.policy.beta });
    }
    write_json(&dir.join("policies.json"), &fitted)?;
    write_json(&dir.join("params.json"), &params)?;
    let est = &cfg.scenario.value_estimators;
    let mut t = Table::new(&["policy", "estimator", "estimate", "se"]);
    if !est.is_empty() {
        let vt = value_table(cfg, &ds, &table, &params, est)?;
        for f in &fitted {
            let pol = LinearPolicy::new(f.beta0, f.beta.clone());
            for &e in est {
                let v = value(e, &ds, &pol, &vt, &params, None)?;
                t.push(vec![f.method.to_string(), e.to_string(), num(v.estimate.estimate), num(v.estimate.se)]);
            }
        }
        let p = psi_mr(&ds, &vt, &params)?;
        t.push(vec!["BLIP".into(), "MR".into(), num(p.estimate.estimate), num(p.estimate.se)]);
    }
    t.write(&dir.join("values.csv"))?;
    Ok(fitted)
}
