//! DFT conventions, circulant embedding and the fast Toeplitz kernels.
//!
//! The DFT is unitary with a negative exponent, and its output rows are
//! ordered by frequency (fftshift order): row m holds frequency
//! (m − ⌊n/2⌋)/n, so the first row is −1/2 for even n.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> PlanPair {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<usize, PlanPair>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, map) = &mut *guard;
    if let Some(p) = map.get(&n) {
        return p.clone();
    }
    let p = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    map.insert(n, p.clone());
    p
}

/// Fourier frequencies (j − 1 − ⌊n/2⌋)/n, j = 1..n.
pub fn frequency_grid(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Size(format!("frequency grid needs n >= 2, got {n}")));
    }
    let half = (n / 2) as f64;
    Ok((0..n).map(|m| (m as f64 - half) / n as f64).collect())
}

/// Unitary shifted DFT of a fixed size.
#[derive(Clone)]
pub struct Dft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("n", &self.n).finish()
    }
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let (forward, inverse) = plans(n);
        Dft {
            n,
            forward,
            inverse,
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Size(format!("DFT of size {} applied to length {len}", self.n)));
        }
        Ok(())
    }

    /// y = F x in place.
    pub fn apply_in_place(&self, x: &mut [C64]) -> Result<()> {
        self.check(x.len())?;
        self.forward.process(x);
        for v in x.iter_mut() {
            *v *= self.scale;
        }
        x.rotate_right(self.n / 2);
        Ok(())
    }

    /// x = Fᴴ y in place.
    pub fn adjoint_in_place(&self, y: &mut [C64]) -> Result<()> {
        self.check(y.len())?;
        y.rotate_left(self.n / 2);
        self.inverse.process(y);
        for v in y.iter_mut() {
            *v *= self.scale;
        }
        Ok(())
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        let mut y = x.to_vec();
        self.apply_in_place(&mut y)?;
        Ok(y)
    }

    pub fn adjoint(&self, y: &[C64]) -> Result<Vec<C64>> {
        let mut x = y.to_vec();
        self.adjoint_in_place(&mut x)?;
        Ok(x)
    }

    /// F y for real y.
    pub fn apply_real(&self, y: &[f64]) -> Result<Vec<C64>> {
        let mut x: Vec<C64> = y.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.apply_in_place(&mut x)?;
        Ok(x)
    }
}

/// Symmetric Toeplitz matrix held through its length-(2n−1) circulant embedding.
#[derive(Clone, Debug)]
pub struct ToeplitzOperator {
    first_column: Vec<f64>,
    embedded_spectrum: Vec<C64>,
    /// Spectrum of the zero-padded embedding of smooth length used by matvecs.
    padded_spectrum: Vec<C64>,
    embed: Dft,
}

/// Smallest 2^a 3^b 5^c 7^d not below `min`.
fn smooth_len(min: usize) -> usize {
    let mut best = min.next_power_of_two();
    let mut p7 = 1;
    while p7 < best {
        let mut p5 = p7;
        while p5 < best {
            let mut p3 = p5;
            while p3 < best {
                let mut v = p3;
                while v < min {
                    v *= 2;
                }
                best = best.min(v);
                p3 *= 3;
            }
            p5 *= 5;
        }
        p7 *= 7;
    }
    best
}

fn circulant_spectrum(first_column: &[f64], m: usize) -> Vec<C64> {
    let n = first_column.len();
    let mut c = vec![C64::new(0.0, 0.0); m];
    for (k, &h) in first_column.iter().enumerate() {
        c[k] = C64::new(h, 0.0);
        if k > 0 {
            c[m - k] = C64::new(h, 0.0);
        }
    }
    debug_assert!(m >= 2 * n - 1);
    plans(m).0.process(&mut c);
    c
}

impl ToeplitzOperator {
    pub fn new(first_column: &[f64]) -> Result<Self> {
        let n = first_column.len();
        if n == 0 {
            return Err(Error::Size("empty Toeplitz first column".into()));
        }
        let m = smooth_len(2 * n - 1);
        Ok(ToeplitzOperator {
            first_column: first_column.to_vec(),
            embedded_spectrum: circulant_spectrum(first_column, 2 * n - 1),
            padded_spectrum: circulant_spectrum(first_column, m),
            embed: Dft::new(m),
        })
    }

    pub fn dim(&self) -> usize {
        self.first_column.len()
    }

    pub fn first_column(&self) -> &[f64] {
        &self.first_column
    }

    /// Unnormalized DFT of c = [h0..h_{n−1}, h_{n−1}..h1].
    pub fn embedded_spectrum(&self) -> &[C64] {
        &self.embedded_spectrum
    }

    /// Σ v through a zero-padded circulant embedding, in place.
    pub fn matvec_in_place(&self, v: &mut [C64], work: &mut Vec<C64>) -> Result<()> {
        let n = self.dim();
        if v.len() != n {
            return Err(Error::Size(format!("Toeplitz of size {n} applied to length {}", v.len())));
        }
        let m = self.embed.n;
        work.clear();
        work.extend_from_slice(v);
        work.resize(m, C64::new(0.0, 0.0));
        self.embed.forward.process(work);
        let inv_m = 1.0 / m as f64;
        for (w, l) in work.iter_mut().zip(&self.padded_spectrum) {
            *w *= l * inv_m;
        }
        self.embed.inverse.process(work);
        v.copy_from_slice(&work[..n]);
        Ok(())
    }

    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        let mut out = v.to_vec();
        self.matvec_in_place(&mut out, &mut Vec::new())?;
        Ok(out)
    }

    pub fn matvec_real(&self, v: &[f64]) -> Result<Vec<f64>> {
        let c: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
        Ok(self.matvec(&c)?.into_iter().map(|z| z.re).collect())
    }
}

/// Block operator on C^n.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// A X, column by column.
    fn apply_block(&self, x: MatRef<'_, C64>) -> Mat<C64>;
    /// Aᴴ X.
    fn apply_adjoint_block(&self, x: MatRef<'_, C64>) -> Mat<C64>;
}

/// E = F Σ Fᴴ − diag(D), the residual of the Whittle approximation.
#[derive(Clone, Debug)]
pub struct WhittleResidual {
    toeplitz: ToeplitzOperator,
    d: Vec<f64>,
    dft: Dft,
}

impl WhittleResidual {
    pub fn new(toeplitz: ToeplitzOperator, d: Vec<f64>) -> Result<Self> {
        let n = toeplitz.dim();
        if d.len() != n {
            return Err(Error::Size(format!("diagonal of length {} for n = {n}", d.len())));
        }
        Ok(WhittleResidual {
            toeplitz,
            d,
            dft: Dft::new(n),
        })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    pub fn toeplitz(&self) -> &ToeplitzOperator {
        &self.toeplitz
    }

    /// E v in place.
    pub fn apply_in_place(&self, v: &mut [C64], work: &mut Vec<C64>) -> Result<()> {
        let n = self.d.len();
        if v.len() != n {
            return Err(Error::Size(format!("residual of size {n} applied to length {}", v.len())));
        }
        let dv: Vec<C64> = v.iter().zip(&self.d).map(|(x, d)| x * d).collect();
        self.dft.adjoint_in_place(v)?;
        self.toeplitz.matvec_in_place(v, work)?;
        self.dft.apply_in_place(v)?;
        for (x, y) in v.iter_mut().zip(dv) {
            *x -= y;
        }
        Ok(())
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out, &mut Vec::new())?;
        Ok(out)
    }
}

impl LinearOperator for WhittleResidual {
    fn dim(&self) -> usize {
        self.d.len()
    }

    fn apply_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        let n = self.d.len();
        assert_eq!(x.nrows(), n, "block row count must match operator size");
        let cols: Vec<Vec<C64>> = (0..x.ncols())
            .into_par_iter()
            .map_init(Vec::new, |work, j| {
                let mut v: Vec<C64> = (0..n).map(|i| x[(i, j)]).collect();
                self.apply_in_place(&mut v, work).expect("sizes checked");
                v
            })
            .collect();
        Mat::from_fn(n, x.ncols(), |i, j| cols[j][i])
    }

    fn apply_adjoint_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        self.apply_block(x)
    }
}

/// E v for a Toeplitz first column and grid diagonal.
pub fn whittle_residual_matvec(t: &ToeplitzOperator, d: &[f64], v: &[C64]) -> Result<Vec<C64>> {
    WhittleResidual::new(t.clone(), d.to_vec())?.apply(v)
}
