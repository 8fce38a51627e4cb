//! Cross-fitted regression of the pseudo-outcome
//! `A(Z+A) Y w / (2 gamma f(A|Z,X))` on `(Z, X)`.

use super::boost::{fit_boosted, BoostConfig, BoostedTrees};
use super::{arm, NuisanceTable};
use crate::error::{Error, Result};
use crate::model::{Dataset, Observation};
use crate::sensitivity::{complier_weight, SensitivityParams};

#[derive(Debug, Clone, PartialEq)]
pub struct KappaModel {
    pub k_folds: usize,
    /// Fold of each training row.
    pub folds: Vec<usize>,
    /// `models[f]` was trained on every row outside fold `f`.
    pub models: Vec<BoostedTrees>,
}

fn features(z: i8, x: &[f64]) -> Vec<f64> {
    std::iter::once(z as f64).chain(x.iter().copied()).collect()
}

impl KappaModel {
    /// Prediction for training row `i`, from the model that did not see it.
    pub fn predict_row(&self, i: usize, z: i8, x: &[f64]) -> f64 {
        self.models[self.folds[i]].predict(&features(z, x))
    }

    /// Fold-averaged prediction at a new point.
    pub fn predict(&self, z: i8, x: &[f64]) -> f64 {
        let f = features(z, x);
        self.models.iter().map(|m| m.predict(&f)).sum::<f64>() / self.models.len() as f64
    }

    /// Out-of-fold `kappa(z, x_i)` for both arms at every training row.
    pub fn out_of_fold(&self, dataset: &Dataset) -> Vec<[f64; 2]> {
        dataset.rows().iter().enumerate().map(|(i, r)| [self.predict_row(i, -1, &r.x), self.predict_row(i, 1, &r.x)]).collect()
    }
}

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB)
}

fn row_hash(r: &Observation) -> u64 {
    let mut h = 0x1234_5678_9ABC_DEF0;
    for v in &r.x {
        h = mix(h, v.to_bits());
    }
    h = mix(h, r.z as u64);
    h = mix(h, r.a as u64);
    mix(h, r.y.to_bits())
}

/// Balanced folds determined by row content, so a permutation of the rows
/// permutes the assignment with them.
pub fn content_folds(dataset: &Dataset, k_folds: usize) -> Vec<usize> {
    let mut order: Vec<(u64, usize)> = dataset.rows().iter().enumerate().map(|(i, r)| (row_hash(r), i)).collect();
    order.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            let (ra, rb) = (&dataset.rows()[a.1], &dataset.rows()[b.1]);
            ra.y.total_cmp(&rb.y).then(ra.z.cmp(&rb.z)).then(ra.a.cmp(&rb.a))
        })
    });
    let mut folds = vec![0; dataset.len()];
    for (rank, (_, i)) in order.into_iter().enumerate() {
        folds[i] = rank % k_folds;
    }
    folds
}

/// Pseudo-outcome per row; zero unless `A = Z`.
pub fn kappa_pseudo_outcome(dataset: &Dataset, table: &NuisanceTable, params: &SensitivityParams) -> Result<Vec<f64>> {
    table.check_len(dataset.len())?;
    dataset
        .rows()
        .iter()
        .zip(table.rows())
        .map(|(r, t)| {
            if r.a != r.z {
                return Ok(0.0);
            }
            let w = complier_weight(params, r.a, r.z, &r.x, r.y)?;
            Ok(r.y * w / (t.gamma[arm(r.z)] * t.fa_obs))
        })
        .collect()
}

pub fn fit_kappa(
    dataset: &Dataset,
    table: &NuisanceTable,
    params: &SensitivityParams,
    k_folds: usize,
    cfg: &BoostConfig,
) -> Result<KappaModel> {
    if k_folds < 2 {
        return Err(Error::InvalidInput(format!("cross-fitting needs at least 2 folds, got {k_folds}")));
    }
    if dataset.len() < k_folds {
        return Err(Error::InvalidInput("fewer rows than folds".into()));
    }
    fit_kappa_with_folds(dataset, table, params, content_folds(dataset, k_folds), cfg)
}

/// As [`fit_kappa`] with an explicit fold assignment.
pub fn fit_kappa_with_folds(
    dataset: &Dataset,
    table: &NuisanceTable,
    params: &SensitivityParams,
    folds: Vec<usize>,
    cfg: &BoostConfig,
) -> Result<KappaModel> {
    if folds.len() != dataset.len() {
        return Err(Error::DimensionMismatch { expected: dataset.len(), got: folds.len() });
    }
    let k_folds = folds.iter().max().map_or(0, |m| m + 1);
    if k_folds < 2 {
        return Err(Error::InvalidInput("cross-fitting needs at least 2 folds".into()));
    }
    let pseudo = kappa_pseudo_outcome(dataset, table, params)?;
    let mut models = Vec::with_capacity(k_folds);
    for f in 0..k_folds {
        let train: Vec<usize> = (0..dataset.len()).filter(|&i| folds[i] != f).collect();
        let has = |z: i8| train.iter().any(|&i| dataset.rows()[i].z == z);
        if !has(1) || !has(-1) {
            return Err(Error::Fit(format!("training data for fold {f} contains a single instrument arm")));
        }
        let x: Vec<Vec<f64>> = train.iter().map(|&i| features(dataset.rows()[i].z, &dataset.rows()[i].x)).collect();
        let y: Vec<f64> = train.iter().map(|&i| pseudo[i]).collect();
        models.push(fit_boosted(&x, &y, cfg)?);
    }
    Ok(KappaModel { k_folds, folds, models })
}
