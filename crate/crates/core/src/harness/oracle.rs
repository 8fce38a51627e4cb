//! Exact checks on the finite oracle world: enumerated identification and
//! sample-based robustness of the multiply robust estimators when a single
//! nuisance is replaced by a wrong value.

use std::path::Path;
use std::time::Instant;

use super::config::RunConfig;
use super::report::{ensure_dir, num, Table};
use super::par_indexed;
use crate::datagen::sign_world::{build_discrete_oracle, threshold_policies, Corruption};
use crate::error::Result;
use crate::rng::{keyed, stream};
use crate::value::{mr_value, psi_mr};

/// Single-nuisance corruption patterns.
pub fn single_corruptions() -> [(&'static str, Corruption); 5] {
    let none = Corruption::NONE;
    [
        ("none", none),
        ("fZ", Corruption { fz: true, ..none }),
        ("fA", Corruption { fa: true, ..none }),
        ("Q", Corruption { q: true, ..none }),
        ("kappa", Corruption { kappa: true, ..none }),
    ]
}

/// Enumerated identification gap of one threshold regime.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationRow {
    pub policy: usize,
    pub weighted: f64,
    pub complier_value: f64,
}

/// One estimate against its enumerated target.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub pattern: &'static str,
    pub seed: u64,
    /// `V{k}` for the k-th threshold regime, or `PSI`.
    pub target: String,
    pub estimate: f64,
    pub se: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub identification: Vec<IdentificationRow>,
    pub identification_seconds: f64,
    pub robustness: Vec<RobustnessRow>,
    pub z_crit: f64,
    pub seeds: usize,
}

impl OracleReport {
    pub fn max_identification_gap(&self) -> f64 {
        self.identification.iter().map(|r| (r.weighted - r.complier_value).abs()).fold(0.0, f64::max)
    }

    fn covered(&self, r: &RobustnessRow) -> bool {
        (r.estimate - r.truth).abs() <= self.z_crit * r.se
    }

    /// Seeds at which every target is covered, per pattern.
    pub fn passes(&self) -> Vec<(&'static str, usize)> {
        single_corruptions()
            .iter()
            .map(|(name, _)| {
                let mut seeds: Vec<u64> = self.robustness.iter().filter(|r| r.pattern == *name).map(|r| r.seed).collect();
                seeds.dedup();
                let ok = seeds.iter().filter(|&&s| self.robustness.iter().filter(|r| r.pattern == *name && r.seed == s).all(|r| self.covered(r))).count();
                (*name, ok)
            })
            .collect()
    }

    /// Identification exact to `1e-9` and at least 95% of seeds passing for
    /// every pattern.
    pub fn all_pass(&self) -> bool {
        let need = (self.seeds as f64 * 0.95).ceil() as usize;
        self.max_identification_gap() < 1e-9 && self.passes().iter().all(|(_, k)| *k >= need)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut id = Table::new(&["policy", "weighted", "complier_value", "abs_diff"]);
        for r in &self.identification {
            id.push(vec![r.policy.to_string(), num(r.weighted), num(r.complier_value), num((r.weighted - r.complier_value).abs())]);
        }
        id.write(&dir.join("identification.csv"))?;
        let mut rb = Table::new(&["pattern", "seed", "target", "estimate", "se", "truth", "covered"]);
        for r in &self.robustness {
            rb.push(vec![r.pattern.into(), r.seed.to_string(), r.target.clone(), num(r.estimate), num(r.se), num(r.truth), self.covered(r).to_string()]);
        }
        rb.write(&dir.join("robustness.csv"))?;
        let mut s = Table::new(&["pattern", "passing_seeds", "seeds"]);
        for (p, k) in self.passes() {
            s.push(vec![p.into(), k.to_string(), self.seeds.to_string()]);
        }
        s.write(&dir.join("oracle_summary.csv"))
    }
}

/// Runs both checks. Timing is reported, not written, so files stay
/// reproducible.
pub fn run_oracle_check(cfg: &RunConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let world = build_discrete_oracle();
    let params = world.params.clone();
    let policies = threshold_policies();
    let start = Instant::now();
    let identification = policies
        .iter()
        .enumerate()
        .map(|(k, p)| {
            Ok(IdentificationRow { policy: k, weighted: world.expected_ipw(p, &params, Corruption::NONE)?, complier_value: world.complier_value(p)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let identification_seconds = start.elapsed().as_secs_f64();
    let truths: Vec<f64> = policies.iter().map(|p| world.complier_value(p)).collect::<Result<_>>()?;
    let blip = world.complier_blip();
    let per_seed = par_indexed(cfg.oracle.seeds, |s| -> Result<Vec<RobustnessRow>> {
        let (ds, _) = world.sample(cfg.oracle.n, &mut keyed(cfg.master_seed(), s, stream::ORACLE_SAMPLE))?;
        let mut rows = vec![];
        for (name, c) in single_corruptions() {
            let table = world.table(&ds, &params, c)?;
            for (k, p) in policies.iter().enumerate() {
                let v = mr_value(&ds, p, &table, &params)?.estimate;
                rows.push(RobustnessRow { pattern: name, seed: s, target: format!("V{k}"), estimate: v.estimate, se: v.se, truth: truths[k] });
            }
            let v = psi_mr(&ds, &table, &params)?.estimate;
            rows.push(RobustnessRow { pattern: name, seed: s, target: "PSI".into(), estimate: v.estimate, se: v.se, truth: blip });
        }
        Ok(rows)
    });
    let robustness = per_seed.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    Ok(OracleReport { identification, identification_seconds, robustness, z_crit: cfg.oracle.z_crit, seeds: cfg.oracle.seeds })
}
