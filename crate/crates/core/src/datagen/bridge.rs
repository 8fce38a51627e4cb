//! Bridge distribution for the latent confounder.
//!
//! Density `g(u) = sin(phi pi) / (2 pi (cosh(phi u) + cos(phi pi)))`. A
//! logistic model marginalized over a bridge-distributed intercept stays
//! logistic with coefficients scaled by `phi`.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

pub fn check_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::InvalidInput(format!("bridge parameter {phi} outside (0, 1)")));
    }
    Ok(())
}

pub fn bridge_pdf(phi: f64, u: f64) -> f64 {
    let t = phi * u;
    // cosh overflows near |t| = 710; the density is zero there in f64 anyway.
    if t.abs() > 700.0 {
        return 0.0;
    }
    (phi * PI).sin() / (2.0 * PI * (t.cosh() + (phi * PI).cos()))
}

pub fn bridge_cdf(phi: f64, u: f64) -> f64 {
    let a = phi * PI;
    let e = (phi * u).exp();
    if e.is_infinite() {
        return 1.0;
    }
    (e * a.sin()).atan2(1.0 + e * a.cos()) / a
}

/// `(1/phi) ln(sin(phi pi p) / sin(phi pi (1 - p)))`.
pub fn bridge_quantile(phi: f64, p: f64) -> f64 {
    let a = phi * PI;
    ((a * p).sin() / (a * (1.0 - p)).sin()).ln() / phi
}

/// Inverse-CDF draw.
pub fn sample_bridge<R: Rng + ?Sized>(phi: f64, rng: &mut R) -> Result<f64> {
    check_phi(phi)?;
    let mut p: f64 = rng.random();
    while p == 0.0 {
        p = rng.random();
    }
    Ok(bridge_quantile(phi, p))
}

/// Midpoint nodes in probability space, `u_k = F^{-1}((k + 1/2)/m)`, each
/// carrying weight `1/m`.
pub fn bridge_nodes(phi: f64, m: usize) -> Vec<f64> {
    (0..m).map(|k| bridge_quantile(phi, (k as f64 + 0.5) / m as f64)).collect()
}
