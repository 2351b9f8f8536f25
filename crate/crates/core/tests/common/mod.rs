//! Closed-form oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use dplr_core::dense::dense_covariance;
use faer::Mat;

/// h_k = θ1 θ2^k / (1 − θ2²) and its θ-partials.
pub fn ar1_acov(theta: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|k| theta[0] * theta[1].powi(k as i32) / (1.0 - theta[1] * theta[1])).collect()
}

pub fn ar1_partials(theta: &[f64], n: usize) -> Vec<Vec<f64>> {
    let (a, b) = (theta[0], theta[1]);
    let d0 = (0..n).map(|k| b.powi(k as i32) / (1.0 - b * b)).collect();
    let d1 = (0..n)
        .map(|k| {
            let kb = if k == 0 { 0.0 } else { k as f64 * b.powi(k as i32 - 1) };
            a * (kb * (1.0 - b * b) + 2.0 * b * b.powi(k as i32)) / (1.0 - b * b).powi(2)
        })
        .collect();
    vec![d0, d1]
}

/// h_k = 2θ1θ2(1 − (−1)^k e^{−θ2/2}) / (θ2² + (2πk)²) and its θ-partials.
pub fn expdecay_acov(theta: &[f64], n: usize) -> Vec<f64> {
    let (a, b) = (theta[0], theta[1]);
    (0..n)
        .map(|k| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            let w = 2.0 * PI * k as f64;
            2.0 * a * b * (1.0 - s * (-b / 2.0).exp()) / (b * b + w * w)
        })
        .collect()
}

pub fn expdecay_partials(theta: &[f64], n: usize) -> Vec<Vec<f64>> {
    let (a, b) = (theta[0], theta[1]);
    let h = expdecay_acov(theta, n);
    let d0 = h.iter().map(|v| v / a).collect();
    let d1 = (0..n)
        .map(|k| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            let w = 2.0 * PI * k as f64;
            let e = (-b / 2.0).exp();
            let num = 2.0 * a * b * (1.0 - s * e);
            let dnum = 2.0 * a * (1.0 - s * e) + a * b * s * e;
            let den = b * b + w * w;
            (dnum * den - num * 2.0 * b) / (den * den)
        })
        .collect();
    vec![d0, d1]
}

pub fn dense_partials(tables: &[Vec<f64>], n: usize) -> Vec<Mat<f64>> {
    tables.iter().map(|t| dense_covariance(t, n).unwrap()).collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

/// ‖A − B‖₂ / ‖B‖₂ for small real matrices.
pub fn op_norm_rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_l2() / b.norm_l2()
}
