//! Exact Gaussian sampling of stationary series.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::likelihood::CorrectedWhittleOperator;

/// Relative tolerance below zero for the embedding spectrum.
pub const CLIP_TOL: f64 = 1e-12;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Eigenvalues of the length-(2n−1) circulant embedding, clipped at zero.
pub fn embedding_spectrum(h: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || h.len() < n {
        return Err(Error::Size(format!("{} autocovariances for n = {n}", h.len())));
    }
    let m = 2 * n - 1;
    let mut c: Vec<C64> = Vec::with_capacity(m);
    c.extend(h[..n].iter().map(|&v| C64::new(v, 0.0)));
    c.extend(h[1..n].iter().rev().map(|&v| C64::new(v, 0.0)));
    FftPlanner::new().plan_fft_forward(m).process(&mut c);
    let max = c.iter().fold(0.0f64, |a, z| a.max(z.re));
    let min = c.iter().fold(f64::INFINITY, |a, z| a.min(z.re));
    if min < -CLIP_TOL * max {
        return Err(Error::EmbeddingFailure(format!(
            "circulant embedding has eigenvalue {min:e} (max {max:e}); a larger embedding or a model check is needed"
        )));
    }
    Ok(c.iter().map(|z| z.re.max(0.0)).collect())
}

/// `count` independent draws of N(0, Σ) with Σ_jk = h_|j−k|.
///
/// Each complex draw of the embedding yields two independent series, so
/// series 2c and 2c+1 come from random stream c.
pub fn circulant_embedding_sample(h: &[f64], n: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let lam = embedding_spectrum(h, n)?;
    let m = lam.len();
    let scale: Vec<f64> = lam.iter().map(|l| (l / m as f64).sqrt()).collect();
    let fft = FftPlanner::new().plan_fft_inverse(m);
    let pairs = count.div_ceil(2);
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut x: Vec<C64> = scale.iter().map(|s| complex_normal(&mut rng) * s).collect();
            fft.process(&mut x);
            (x[..n].iter().map(|z| z.re).collect(), x[..n].iter().map(|z| z.im).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for (a, b) in draws {
        out.push(a);
        if out.len() < count {
            out.push(b);
        }
    }
    Ok(out)
}

/// Re Fᴴ(W z) for complex standard normal z, with W the operator's symmetric factor.
///
/// For validation only: the law is exact only insofar as W Wᴴ equals F Σ Fᴴ.
pub fn sample_via_factor(op: &CorrectedWhittleOperator, seed: u64) -> Result<Vec<f64>> {
    let w = op.factor()?;
    let mut rng = stream_rng(seed, 0);
    let z: Vec<C64> = (0..op.dim()).map(|_| complex_normal(&mut rng)).collect();
    let x = op.dft().adjoint(&w.apply(&z))?;
    Ok(x.iter().map(|v| v.re).collect())
}
