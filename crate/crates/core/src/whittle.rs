//! Periodogram, Whittle and debiased Whittle likelihoods.

use crate::acov::AcovTable;
use crate::error::{Error, Result};
use crate::models::{check_spectrum, Component, Side, SpectralModel};
use crate::toeplitz::{frequency_grid, Dft};

/// |J_n(ω_j)|² on the shifted grid.
pub fn periodogram(y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 2 {
        return Err(Error::Size(format!("periodogram needs n >= 2, got {n}")));
    }
    Ok(Dft::new(n).apply_real(y)?.iter().map(|z| z.norm_sqr()).collect())
}

/// A model component evaluated on the Fourier grid.
pub fn component_on_grid(model: &dyn SpectralModel, theta: &[f64], n: usize, comp: Component) -> Result<Vec<f64>> {
    check_spectrum(model, theta)?;
    Ok(frequency_grid(n)?
        .into_iter()
        .map(|w| model.raw(theta, w, 0, Side::TwoSided, comp))
        .collect())
}

/// S_θ(ω_j), which must be positive everywhere on the grid.
pub fn sdf_on_grid(model: &dyn SpectralModel, theta: &[f64], n: usize) -> Result<Vec<f64>> {
    let s = component_on_grid(model, theta, n, Component::Density)?;
    if let Some(j) = s.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!(
            "spectral density is {} at grid frequency {}",
            s[j],
            frequency_grid(n)?[j]
        )));
    }
    Ok(s)
}

fn whittle_sum(s: &[f64], pgram: &[f64]) -> f64 {
    0.5 * s.iter().zip(pgram).map(|(s, i)| s.ln() + i / s).sum::<f64>()
}

/// ½ Σ_j [log S(ω_j) + |J(ω_j)|²/S(ω_j)].
pub fn whittle_nll(model: &dyn SpectralModel, theta: &[f64], y: &[f64]) -> Result<f64> {
    let pgram = periodogram(y)?;
    let s = sdf_on_grid(model, theta, y.len())?;
    Ok(whittle_sum(&s, &pgram))
}

#[derive(Debug, Clone)]
pub struct FiniteSampleVariances {
    pub values: Vec<f64>,
    /// Grid points where the computed variance was not positive.
    pub nonpositive: usize,
}

/// S_n(ω_j, ω_j) = 2 Re Σ_k (1 − k/n) h_k e^{−2πiω_j k} − h_0 via one DFT.
pub fn finite_sample_variances(h: &[f64], n: usize) -> Result<FiniteSampleVariances> {
    if n < 2 {
        return Err(Error::Size(format!("finite-sample variances need n >= 2, got {n}")));
    }
    if h.len() < n {
        return Err(Error::Size(format!("{} autocovariances supplied for n = {n}", h.len())));
    }
    let a: Vec<f64> = (0..n).map(|k| (1.0 - k as f64 / n as f64) * h[k]).collect();
    let root = (n as f64).sqrt();
    let values: Vec<f64> = Dft::new(n)
        .apply_real(&a)?
        .iter()
        .map(|z| 2.0 * root * z.re - h[0])
        .collect();
    let nonpositive = values.iter().filter(|v| !(**v > 0.0)).count();
    Ok(FiniteSampleVariances { values, nonpositive })
}

fn clamp_warn(v: &FiniteSampleVariances) -> Vec<f64> {
    if v.nonpositive > 0 {
        eprintln!(
            "warning: {} finite-sample variances are not positive; clamped at 1e-300",
            v.nonpositive
        );
    }
    v.values.iter().map(|s| s.max(1e-300)).collect()
}

/// Whittle likelihood with S_n(ω_j, ω_j) in place of S(ω_j).
pub fn debiased_whittle_nll(y: &[f64], acov: &AcovTable) -> Result<f64> {
    let pgram = periodogram(y)?;
    let v = finite_sample_variances(&acov.values, y.len())?;
    Ok(whittle_sum(&clamp_warn(&v), &pgram))
}

/// ∂/∂θ_j of the debiased Whittle likelihood from the density table and
/// one table of ∂h/∂θ_j per parameter.
pub fn debiased_whittle_gradient(y: &[f64], acov: &AcovTable, partials: &[AcovTable]) -> Result<Vec<f64>> {
    let n = y.len();
    let pgram = periodogram(y)?;
    let s = clamp_warn(&finite_sample_variances(&acov.values, n)?);
    partials
        .iter()
        .map(|t| {
            let ds = finite_sample_variances(&t.values, n)?.values;
            Ok(0.5
                * s.iter()
                    .zip(&ds)
                    .zip(&pgram)
                    .map(|((s, d), i)| d / s * (1.0 - i / s))
                    .sum::<f64>())
        })
        .collect()
}
