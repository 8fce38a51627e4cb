//! Sensitivity sweeps over the analysis `alphaY` grid with the generating
//! parameters held fixed.
//!
//! Each replicate draws one trial and fits the nuisance models once; only
//! the `alpha`-dependent tables, weights and regimes are rebuilt per cell.
//! OWL and IVT do not depend on `alpha` and are learned once per replicate.

use std::path::Path;

use super::config::RunConfig;
use super::report::{ensure_dir, num, write_status, Table};
use super::{learn, mean_sd, par_indexed, resolve_params, RunStatus};
use crate::datagen::{generate_replicate, TruthTable};
use crate::error::Result;
use crate::model::Method;
use crate::nuisance::fit_nuisances;
use crate::rng::{keyed, stream};
use crate::sensitivity::SensitivityParams;

/// Per-method metrics at one grid cell in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub method: Method,
    pub rate: f64,
    pub value: f64,
}

/// Aggregates for one `(alpha_minus, alpha_plus)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    /// Per method: `(rate mean, rate sd, value mean, value sd)`.
    pub metrics: Vec<(Method, [f64; 4])>,
    pub completed: usize,
    pub failed: usize,
}

impl SweepCell {
    pub fn get(&self, m: Method) -> Option<[f64; 4]> {
        self.metrics.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub status: RunStatus,
    pub true_alpha: [f64; 2],
}

impl SweepResult {
    pub fn cell(&self, am: f64, ap: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.alpha_minus == am && c.alpha_plus == ap)
    }

    /// Share of cells where `method`'s mean rate exceeds `baseline`'s.
    pub fn fraction_beating(&self, method: Method, baseline: Method) -> f64 {
        let wins = self
            .cells
            .iter()
            .filter(|c| matches!((c.get(method), c.get(baseline)), (Some(a), Some(b)) if a[0] > b[0]))
            .count();
        wins as f64 / self.cells.len() as f64
    }

    /// `alpha_minus,alpha_plus,metric,mean,sd` with metrics `{M}_rate` and
    /// `{M}_value`, plus a per-cell completion table.
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut heat = Table::new(&["alpha_minus", "alpha_plus", "metric", "mean", "sd"]);
        let mut cells = Table::new(&["alpha_minus", "alpha_plus", "completed", "failed"]);
        for c in &self.cells {
            for (m, v) in &c.metrics {
                heat.push(vec![num(c.alpha_minus), num(c.alpha_plus), format!("{m}_rate"), num(v[0]), num(v[1])]);
                heat.push(vec![num(c.alpha_minus), num(c.alpha_plus), format!("{m}_value"), num(v[2]), num(v[3])]);
            }
            cells.push(vec![num(c.alpha_minus), num(c.alpha_plus), c.completed.to_string(), c.failed.to_string()]);
        }
        heat.write(&dir.join("heatmap.csv"))?;
        cells.write(&dir.join("cells.csv"))?;
        write_status(dir, "sweep", &self.status)
    }
}

/// The analysis parameters at one cell: the configured analysis form with
/// `alphaY` replaced.
pub fn cell_params(base: &SensitivityParams, am: f64, ap: f64) -> SensitivityParams {
    let mut p = base.clone();
    p.alpha.minus.ay = am;
    p.alpha.plus.ay = ap;
    p
}

fn grid(cfg: &RunConfig) -> Vec<(f64, f64)> {
    cfg.sweep.grid_minus.iter().flat_map(|&m| cfg.sweep.grid_plus.iter().map(move |&p| (m, p))).collect()
}

type CellOutcome = Result<Vec<CellMetrics>>;

fn sweep_replicate(cfg: &RunConfig, truth: &TruthTable, r: u64) -> Result<Vec<CellOutcome>> {
    let (ds, _) = generate_replicate(&cfg.world, r)?;
    let mut rng = keyed(cfg.master_seed(), r, stream::NUISANCE_MC);
    let ns = fit_nuisances(&ds, &cfg.scenario.masks(), cfg.nuisance.family, cfg.nuisance.n_mc, &mut rng)?;
    let base = cfg.analysis_params();
    let score = |m: Method, table: &crate::nuisance::NuisanceTable, params: &SensitivityParams| -> Result<CellMetrics> {
        let l = learn(m, &ds, table, params, &cfg.learner)?;
        Ok(CellMetrics { method: m, rate: truth.classification_rate(&l.policy)?, value: truth.value(&l.policy)? })
    };
    let mut fixed: Option<Vec<CellMetrics>> = None;
    let mut out = vec![];
    for (am, ap) in grid(cfg) {
        let cell = (|| {
            let params = resolve_params(&cell_params(&base, am, ap), &ds)?;
            let table = ns.table(&ds, &params)?;
            if fixed.is_none() {
                let f = cfg
                    .scenario
                    .methods
                    .iter()
                    .filter(|m| matches!(m, Method::Owl | Method::Ivt))
                    .map(|&m| score(m, &table, &params))
                    .collect::<Result<Vec<_>>>()?;
                fixed = Some(f);
            }
            let mut v = vec![];
            for &m in &cfg.scenario.methods {
                match m {
                    Method::Owl | Method::Ivt => v.push(fixed.as_ref().unwrap().iter().find(|c| c.method == m).unwrap().clone()),
                    _ => v.push(score(m, &table, &params)?),
                }
            }
            Ok(v)
        })();
        out.push(cell);
    }
    Ok(out)
}

/// Runs the sweep; the world's generating parameters are replaced by
/// `alphaY = sweep.true_alpha` with `alpha0 = 0`.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let [tm, tp] = cfg.sweep.true_alpha;
    cfg.world.true_params = SensitivityParams::y_only(tm, tp);
    let truth = TruthTable::build(&cfg.world, cfg.truth.grid, cfg.truth.u_nodes)?;
    let g = grid(&cfg);
    let reps = par_indexed(cfg.replicates, |r| sweep_replicate(&cfg, &truth, r));
    let mut status = RunStatus { attempted: cfg.replicates * g.len(), failures: vec![] };
    let mut per_cell: Vec<Vec<Vec<CellMetrics>>> = vec![vec![]; g.len()];
    for (r, rep) in reps.into_iter().enumerate() {
        match rep {
            Err(e) => {
                for (am, ap) in &g {
                    status.record(r as u64, cfg.master_seed(), format!("cell ({am}, {ap})"), &e);
                }
            }
            Ok(cells) => {
                for (k, c) in cells.into_iter().enumerate() {
                    match c {
                        Ok(m) => per_cell[k].push(m),
                        Err(e) => status.record(r as u64, cfg.master_seed(), format!("cell ({}, {})", g[k].0, g[k].1), &e),
                    }
                }
            }
        }
    }
    let cells = g
        .iter()
        .zip(per_cell)
        .map(|(&(am, ap), runs)| {
            let metrics = cfg
                .scenario
                .methods
                .iter()
                .map(|&m| {
                    let pick = |f: fn(&CellMetrics) -> f64| -> Vec<f64> { runs.iter().flat_map(|r| r.iter().filter(|c| c.method == m).map(f)).collect() };
                    let (rm, rs) = mean_sd(&pick(|c| c.rate));
                    let (vm, vs) = mean_sd(&pick(|c| c.value));
                    (m, [rm, rs, vm, vs])
                })
                .collect();
            SweepCell { alpha_minus: am, alpha_plus: ap, metrics, completed: runs.len(), failed: cfg.replicates - runs.len() }
        })
        .collect();
    Ok(SweepResult { cells, status, true_alpha: cfg.sweep.true_alpha })
}
