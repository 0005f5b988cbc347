//! Two-sample Kolmogorov–Smirnov test, used to check that a ±1 perturbation
//! leaves the item-size distribution unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("Kolmogorov-Smirnov test needs two non-empty samples")]
pub struct EmptySample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject_at_0_05: bool,
}

/// Largest distance between the two empirical CDFs.
pub fn ks_statistic(a: &[u32], b: &[u32]) -> Result<f64, EmptySample> {
    if a.is_empty() || b.is_empty() {
        return Err(EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    const EPS1: f64 = 1e-3;
    const EPS2: f64 = 1e-8;
    let a2 = -2.0 * lambda * lambda;
    let mut fac = 2.0;
    let mut sum = 0.0;
    let mut prev = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = fac * (a2 * jf * jf).exp();
        sum += term;
        if term.abs() <= EPS1 * prev || term.abs() <= EPS2 * sum {
            return sum.clamp(0.0, 1.0);
        }
        fac = -fac;
        prev = term.abs();
    }
    // Series fails to converge only for tiny λ, where Q → 1.
    1.0
}

/// Two-sample KS test with the asymptotic p-value and the usual
/// effective-size correction `(√nₑ + 0.12 + 0.11/√nₑ)·D`.
pub fn ks_two_sample(a: &[u32], b: &[u32]) -> Result<KsResult, EmptySample> {
    let statistic = ks_statistic(a, b)?;
    let ne = (a.len() as f64 * b.len() as f64) / (a.len() + b.len()) as f64;
    let en = ne.sqrt();
    let p_value = kolmogorov_q((en + 0.12 + 0.11 / en) * statistic);
    Ok(KsResult {
        statistic,
        p_value,
        reject_at_0_05: p_value < 0.05,
    })
}
