//! Brute-force references: dense covariance algebra, the explicit DFT,
//! Dirichlet-kernel quadrature of DFT covariances and the exact
//! Durbin–Levinson likelihood.

use std::f64::consts::PI;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{check_spectrum, Component, SpectralModel};
use crate::quadrature::{integrate, Tolerance};

pub const COVARIANCE_CAP: usize = 8192;
pub const DERIVATIVE_CAP: usize = 4096;
pub const DFT_COV_CAP: usize = 1024;

fn cap(n: usize, limit: usize, what: &str) -> Result<()> {
    if n > limit {
        return Err(Error::Size(format!("{what} is limited to n <= {limit}, got {n}")));
    }
    Ok(())
}

/// Σ_{jk} = h_{|j−k|}.
pub fn dense_covariance(h: &[f64], n: usize) -> Result<Mat<f64>> {
    cap(n, COVARIANCE_CAP, "dense covariance")?;
    if h.len() < n {
        return Err(Error::Size(format!("{} autocovariances for n = {n}", h.len())));
    }
    Ok(Mat::from_fn(n, n, |i, j| h[i.abs_diff(j)]))
}

fn cholesky(sigma: MatRef<'_, f64>) -> Result<faer::linalg::solvers::Llt<f64>> {
    sigma
        .llt(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("dense Cholesky failed: {e:?}")))
}

/// ½(log|Σ| + yᵀΣ⁻¹y) through the Cholesky factor.
pub fn dense_nll(sigma: MatRef<'_, f64>, y: &[f64]) -> Result<f64> {
    let n = sigma.nrows();
    if y.len() != n {
        return Err(Error::Size(format!("data of length {} for a {n}x{n} covariance", y.len())));
    }
    let llt = cholesky(sigma)?;
    let l = llt.L();
    let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    let mut z = Mat::from_fn(n, 1, |i, _| y[i]);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, z.as_mut(), faer::Par::rayon(0));
    let quad: f64 = (0..n).map(|i| z[(i, 0)] * z[(i, 0)]).sum();
    Ok(0.5 * (logdet + quad))
}

fn trace_of_product(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let n = a.nrows();
    (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| a[(i, j)] * b[(j, i)]).sum::<f64>())
        .sum()
}

/// ½(tr(Σ⁻¹Σ_j) − yᵀΣ⁻¹Σ_jΣ⁻¹y) for each derivative matrix Σ_j.
pub fn dense_gradient(sigma: MatRef<'_, f64>, partials: &[Mat<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = sigma.nrows();
    cap(n, DERIVATIVE_CAP, "dense gradient")?;
    if y.len() != n {
        return Err(Error::Size(format!("data of length {} for a {n}x{n} covariance", y.len())));
    }
    let llt = cholesky(sigma)?;
    let inv = llt.inverse();
    let alpha = llt.solve(Mat::from_fn(n, 1, |i, _| y[i]));
    Ok(partials
        .iter()
        .map(|sj| {
            let sa = sj * &alpha;
            let q: f64 = (0..n).map(|i| alpha[(i, 0)] * sa[(i, 0)]).sum();
            0.5 * (trace_of_product(inv.as_ref(), sj.as_ref()) - q)
        })
        .collect())
}

/// ½ tr(Σ⁻¹Σ_jΣ⁻¹Σ_k).
pub fn dense_fisher(sigma: MatRef<'_, f64>, partials: &[Mat<f64>]) -> Result<Mat<f64>> {
    let n = sigma.nrows();
    cap(n, DERIVATIVE_CAP, "dense Fisher information")?;
    let llt = cholesky(sigma)?;
    let a: Vec<Mat<f64>> = partials.iter().map(|sj| llt.solve(sj)).collect();
    let p = partials.len();
    let mut out = Mat::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let v = 0.5 * trace_of_product(a[j].as_ref(), a[k].as_ref());
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    Ok(out)
}

/// Explicit unitary DFT matrix with rows in shifted frequency order.
pub fn dft_matrix(n: usize) -> Mat<C64> {
    let half = (n / 2) as i64;
    let s = 1.0 / (n as f64).sqrt();
    Mat::from_fn(n, n, |m, j| {
        // Reduce (m − ⌊n/2⌋)·j modulo n in integers before taking the angle.
        let e = ((m as i64 - half) * j as i64).rem_euclid(n as i64) as f64;
        let (sn, cs) = (-2.0 * PI * e / n as f64).sin_cos();
        C64::new(cs * s, sn * s)
    })
}

/// F Σ Fᴴ computed with the explicit DFT matrix.
pub fn dense_dft_covariance(sigma: MatRef<'_, f64>) -> Mat<C64> {
    let n = sigma.nrows();
    let f = dft_matrix(n);
    let sc = Mat::from_fn(n, n, |i, j| C64::new(sigma[(i, j)], 0.0));
    &f * sc * f.adjoint()
}

/// Number of eigenvalues of a Hermitian matrix above tol·max|λ|.
pub fn numerical_rank(m: MatRef<'_, C64>, tol: f64) -> Result<usize> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("dense eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let lam: Vec<f64> = (0..m.nrows()).map(|i| s[i].re.abs()).collect();
    let max = lam.iter().cloned().fold(0.0, f64::max);
    Ok(lam.iter().filter(|&&l| l > tol * max).count())
}

/// sin(πnx)/sin(πx), taking the limit at integer x.
fn dirichlet(n: usize, x: f64) -> f64 {
    let m = x.round();
    let d = x - m;
    let sign = if (m as i64 * (n as i64 - 1)).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    if d == 0.0 {
        return sign * n as f64;
    }
    sign * (PI * n as f64 * d).sin() / (PI * d).sin()
}

/// Cov(J_n(ω_k), J_n(ω_k′)) from the shifted Dirichlet kernel representation
///
///   e^{−iπ(n−1)(k−k′)/n} n⁻¹ ∫ D_n(ω_k − ω) D_n(ω_k′ − ω) S(ω) dω,
///
/// with k, k′ the 0-based row indices of the shifted grid.
pub fn dft_cov_quadrature(model: &dyn SpectralModel, theta: &[f64], n: usize, k: usize, kp: usize) -> Result<C64> {
    cap(n, DFT_COV_CAP, "Dirichlet-kernel quadrature")?;
    if n < 2 || k >= n || kp >= n {
        return Err(Error::Size(format!("indices ({k}, {kp}) for n = {n}")));
    }
    check_spectrum(model, theta)?;
    let half = (n / 2) as f64;
    let wk = (k as f64 - half) / n as f64;
    let wkp = (kp as f64 - half) / n as f64;
    let mut pts = vec![-0.5, 0.5, wk, wkp];
    pts.extend(model.rough_points());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let tol = Tolerance { rel: 1e-13, abs: 0.0 };
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let panels = ((b - a) * n as f64 * 4.0).ceil() as usize;
        let f = |x: f64, out: &mut [f64]| {
            out[0] = dirichlet(n, wk - x) * dirichlet(n, wkp - x) * model.raw(theta, x, 0, crate::models::Side::TwoSided, Component::Density);
        };
        total += integrate(f, a, b, 1, panels, tol, 200_000)?.value[0];
    }
    let diff = k as f64 - kp as f64;
    let phase = -PI * (n as f64 - 1.0) * diff / n as f64;
    Ok(C64::from_polar(total / n as f64, phase))
}

/// The full matrix of DFT covariances by quadrature, filled by Hermitian symmetry.
pub fn dft_cov_quadrature_matrix(model: &dyn SpectralModel, theta: &[f64], n: usize) -> Result<Mat<C64>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<C64> = pairs
        .par_iter()
        .map(|&(i, j)| dft_cov_quadrature(model, theta, n, i, j))
        .collect::<Result<_>>()?;
    let mut m = Mat::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        m[(i, j)] = v;
        m[(j, i)] = v.conj();
    }
    Ok(m)
}

/// Exact Gaussian likelihood of a stationary series from its autocovariances
/// by the Durbin–Levinson recursion, O(n²), together with its derivatives
/// along each supplied table of ∂h/∂θ_j.
pub fn levinson_nll_and_gradient(h: &[f64], partials: &[&[f64]], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    if n == 0 || h.len() < n || partials.iter().any(|d| d.len() < n) {
        return Err(Error::Size(format!("Levinson recursion with n = {n} and short tables")));
    }
    let p = partials.len();
    if !(h[0] > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("h_0 = {} is not positive", h[0])));
    }
    // phi[i] holds φ_{t,i+1}; dphi[j][i] its derivative along table j.
    let mut phi = vec![0.0; n];
    let mut prev = vec![0.0; n];
    let mut dphi = vec![vec![0.0; n]; p];
    let mut dprev = vec![vec![0.0; n]; p];
    let mut v = h[0];
    let mut dv: Vec<f64> = partials.iter().map(|d| d[0]).collect();
    let mut nll = 0.5 * (v.ln() + y[0] * y[0] / v);
    let w0 = y[0] / v;
    let mut grad: Vec<f64> = dv.iter().map(|d| 0.5 * (d / v - w0 * w0 * d)).collect();
    for t in 1..n {
        std::mem::swap(&mut phi, &mut prev);
        std::mem::swap(&mut dphi, &mut dprev);
        let mut acc = h[t];
        for i in 1..t {
            acc -= prev[i - 1] * h[t - i];
        }
        let ptt = acc / v;
        for i in 1..t {
            phi[i - 1] = prev[i - 1] - ptt * prev[t - i - 1];
        }
        phi[t - 1] = ptt;
        for j in 0..p {
            let dh = partials[j];
            let mut dacc = dh[t];
            for i in 1..t {
                dacc -= dprev[j][i - 1] * h[t - i] + prev[i - 1] * dh[t - i];
            }
            let dptt = (dacc - ptt * dv[j]) / v;
            let (dp, dq) = (&mut dphi[j], &dprev[j]);
            for i in 1..t {
                dp[i - 1] = dq[i - 1] - dptt * prev[t - i - 1] - ptt * dq[t - i - 1];
            }
            dp[t - 1] = dptt;
            dv[j] = dv[j] * (1.0 - ptt * ptt) - 2.0 * v * ptt * dptt;
        }
        v *= 1.0 - ptt * ptt;
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "prediction variance became {v} at step {t}"
            )));
        }
        let mut e = y[t];
        for i in 1..=t {
            e -= phi[i - 1] * y[t - i];
        }
        nll += 0.5 * (v.ln() + e * e / v);
        for j in 0..p {
            let mut de = 0.0;
            for i in 1..=t {
                de -= dphi[j][i - 1] * y[t - i];
            }
            let w = e / v;
            grad[j] += 0.5 * (dv[j] / v + 2.0 * w * de - w * w * dv[j]);
        }
    }
    Ok((nll, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Ar1, WhiteNoise};

    fn ar1_acov(theta: &[f64], n: usize) -> Vec<f64> {
        (0..n).map(|k| theta[0] * theta[1].powi(k as i32) / (1.0 - theta[1] * theta[1])).collect()
    }

    #[test]
    fn covariance_fill() {
        let s = dense_covariance(&[1.0, 0.0], 2).unwrap();
        assert_eq!((s[(0, 0)], s[(0, 1)], s[(1, 1)]), (1.0, 0.0, 1.0));
        let s = dense_covariance(&[2.0, 1.0, 0.0], 3).unwrap();
        assert_eq!(s[(0, 1)], 1.0);
        assert_eq!(s[(0, 2)], 0.0);
        assert_eq!(s[(2, 1)], 1.0);
        assert!(dense_covariance(&[1.0], COVARIANCE_CAP + 1).is_err());
    }

    #[test]
    fn nll_small_cases() {
        let i = Mat::<f64>::identity(3, 3);
        let y = [1.0, -2.0, 0.5];
        assert!((dense_nll(i.as_ref(), &y).unwrap() - 0.5 * 5.25).abs() < 1e-15);
        let s = Mat::from_fn(2, 2, |i, j| if i == j { 4.0 } else { 0.0 });
        let want = 0.5 * (2.0 * 4f64.ln() + 1.0);
        assert!((dense_nll(s.as_ref(), &[2.0, 0.0]).unwrap() - want).abs() < 1e-15);
        let bad = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(dense_nll(bad.as_ref(), &[1.0, 1.0]), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn white_noise_gradient_and_fisher() {
        let n = 16;
        let s2 = 2.0;
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let sigma = Mat::from_fn(n, n, |i, j| if i == j { s2 } else { 0.0 });
        let d = Mat::<f64>::identity(n, n);
        let g = dense_gradient(sigma.as_ref(), std::slice::from_ref(&d), &y).unwrap();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        assert!((g[0] - 0.5 * (n as f64 / s2 - yy / (s2 * s2))).abs() < 1e-13);
        let f = dense_fisher(sigma.as_ref(), &[d]).unwrap();
        assert!((f[(0, 0)] - n as f64 / (2.0 * s2 * s2)).abs() < 1e-13);
    }

    #[test]
    fn dft_matrix_is_unitary() {
        for n in [5usize, 8] {
            let f = dft_matrix(n);
            let g = &f * f.adjoint();
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g[(i, j)] - want).norm() < 1e-14);
                }
            }
        }
        let f = dft_matrix(4);
        for m in 0..4 {
            assert!((f[(m, 0)] - C64::new(0.5, 0.0)).norm() < 1e-16);
        }
    }

    #[test]
    fn dirichlet_limits() {
        assert_eq!(dirichlet(8, 0.0), 8.0);
        assert_eq!(dirichlet(8, 1.0), -8.0);
        assert_eq!(dirichlet(7, -1.0), 7.0);
        let x = 1e-9;
        assert!((dirichlet(8, 1.0 - x) + 8.0).abs() < 1e-6);
    }

    #[test]
    fn white_noise_dft_covariances() {
        let s2 = 3.0;
        let d = dft_cov_quadrature(&WhiteNoise, &[s2], 16, 5, 5).unwrap();
        assert!((d - C64::new(s2, 0.0)).norm() < 1e-12);
        let o = dft_cov_quadrature(&WhiteNoise, &[s2], 16, 3, 9).unwrap();
        assert!(o.norm() < 1e-12);
    }

    #[test]
    fn dirichlet_quadrature_matches_conjugated_covariance() {
        let theta = [1.0, 0.9];
        let n = 24;
        let sigma = dense_covariance(&ar1_acov(&theta, n), n).unwrap();
        let a = dense_dft_covariance(sigma.as_ref());
        let scale = a.norm_l2();
        for (k, kp) in [(3, 7), (0, 0), (12, 12), (23, 1), (5, 11)] {
            let q = dft_cov_quadrature(&Ar1, &theta, n, k, kp).unwrap();
            assert!((q - a[(k, kp)]).norm() <= 1e-10 * scale, "({k}, {kp}): {q} vs {}", a[(k, kp)]);
        }
    }

    #[test]
    fn levinson_matches_cholesky() {
        let theta = [1.3, 0.8];
        let n = 60;
        let h = ar1_acov(&theta, n);
        let d0: Vec<f64> = h.iter().map(|v| v / theta[0]).collect();
        let d1: Vec<f64> = (0..n)
            .map(|k| {
                let (a, b) = (theta[0], theta[1]);
                let kb = if k == 0 { 0.0 } else { k as f64 * b.powi(k as i32 - 1) };
                a * (kb * (1.0 - b * b) + 2.0 * b * b.powi(k as i32)) / (1.0 - b * b).powi(2)
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 17 % 13) as f64 - 6.0) / 4.0).collect();
        let (nll, g) = levinson_nll_and_gradient(&h, &[&d0, &d1], &y).unwrap();
        let sigma = dense_covariance(&h, n).unwrap();
        let want = dense_nll(sigma.as_ref(), &y).unwrap();
        assert!((nll - want).abs() <= 1e-12 * want.abs());
        let parts = [dense_covariance(&d0, n).unwrap(), dense_covariance(&d1, n).unwrap()];
        let gw = dense_gradient(sigma.as_ref(), &parts, &y).unwrap();
        for j in 0..2 {
            assert!((g[j] - gw[j]).abs() <= 1e-10 * gw[j].abs().max(1.0), "{g:?} vs {gw:?}");
        }
    }
}
