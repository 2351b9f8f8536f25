//! Diagonal-plus-low-rank algebra: randomized rangefinder, Woodbury solves,
//! log-determinants, trace products, recompression and a symmetric factor.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::toeplitz::LinearOperator;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// diag(D) + U Vᴴ.
#[derive(Debug, Clone)]
pub struct DiagPlusLowRank {
    pub d: Vec<f64>,
    pub u: Mat<C64>,
    pub v: Mat<C64>,
}

impl DiagPlusLowRank {
    pub fn new(d: Vec<f64>, u: Mat<C64>, v: Mat<C64>) -> Result<Self> {
        let n = d.len();
        if u.nrows() != n || v.nrows() != n || u.ncols() != v.ncols() {
            return Err(Error::Size(format!(
                "DPLR factors {}x{} and {}x{} for n = {n}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(DiagPlusLowRank { d, u, v })
    }

    pub fn diagonal(d: Vec<f64>) -> Self {
        let n = d.len();
        DiagPlusLowRank {
            d,
            u: Mat::zeros(n, 0),
            v: Mat::zeros(n, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let xm = col(x);
        let y = self.apply_block(xm.as_ref());
        y.col_as_slice(0).to_vec()
    }

    pub fn apply_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        let mut y = &self.u * (self.v.adjoint() * x);
        for j in 0..x.ncols() {
            for i in 0..self.dim() {
                y[(i, j)] += x[(i, j)] * self.d[i];
            }
        }
        y
    }

    pub fn apply_adjoint_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        let mut y = &self.v * (self.u.adjoint() * x);
        for j in 0..x.ncols() {
            for i in 0..self.dim() {
                y[(i, j)] += x[(i, j)] * self.d[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut a = &self.u * self.v.adjoint();
        for i in 0..self.dim() {
            a[(i, i)] += self.d[i];
        }
        a
    }
}

pub(crate) fn col(x: &[C64]) -> Mat<C64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

fn to_complex(m: MatRef<'_, f64>) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| C64::new(m[(i, j)], 0.0))
}

/// Real standard normal sketch.
pub fn gaussian_sketch(n: usize, w: usize, seed: u64) -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat::zeros(n, w);
    for j in 0..w {
        for i in 0..n {
            m[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

/// Thin QR with columns whose |R_ii| falls below 1e−13·max|R_jj| dropped.
fn orthonormal_basis(y: MatRef<'_, C64>) -> Mat<C64> {
    let w = y.ncols().min(y.nrows());
    if w == 0 {
        return Mat::zeros(y.nrows(), 0);
    }
    let qr = y.qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    let diag: Vec<f64> = (0..w).map(|i| r[(i, i)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..w).filter(|&i| max > 0.0 && diag[i] > 1e-13 * max).collect();
    Mat::from_fn(y.nrows(), keep.len(), |i, j| q[(i, keep[j])])
}

/// Q spanning the range of A Ω and V = Aᴴ Q, so that A ≈ Q Vᴴ.
pub fn randomized_rangefinder(
    op: &dyn LinearOperator,
    r: usize,
    p: usize,
    seed: u64,
) -> Result<(Mat<C64>, Mat<C64>)> {
    let n = op.dim();
    if r > n {
        return Err(Error::Size(format!("rank {r} requested for an operator of size {n}")));
    }
    let w = (r + p).min(n);
    let omega = to_complex(gaussian_sketch(n, w, seed).as_ref());
    let y = op.apply_block(omega.as_ref());
    let q = orthonormal_basis(y.as_ref());
    let v = if q.ncols() == 0 {
        Mat::zeros(n, 0)
    } else {
        op.apply_adjoint_block(q.as_ref())
    };
    Ok((q, v))
}

/// U diag(Λ) Uᴴ with orthonormal U.
#[derive(Debug, Clone)]
pub struct EigCorrection {
    pub u: Mat<C64>,
    pub lambda: Vec<f64>,
    /// ‖K − Kᴴ‖_F / (2‖K‖_F) for the projected core K, plus the relative
    /// part of V outside the column space of U.
    pub antihermitian_residual: f64,
}

impl EigCorrection {
    pub fn empty(n: usize) -> Self {
        EigCorrection {
            u: Mat::zeros(n, 0),
            lambda: Vec::new(),
            antihermitian_residual: 0.0,
        }
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    /// Drops eigenpairs with |λ| ≤ floor.
    pub fn truncate_below(self, floor: f64) -> Self {
        let keep: Vec<usize> = (0..self.rank()).filter(|&i| self.lambda[i].abs() > floor).collect();
        EigCorrection {
            u: Mat::from_fn(self.u.nrows(), keep.len(), |i, j| self.u[(i, keep[j])]),
            lambda: keep.iter().map(|&i| self.lambda[i]).collect(),
            antihermitian_residual: self.antihermitian_residual,
        }
    }

    /// As a DPLR with diagonal `d`: U (UΛ)ᴴ.
    pub fn to_dplr(&self, d: Vec<f64>) -> Result<DiagPlusLowRank> {
        let v = Mat::from_fn(self.u.nrows(), self.rank(), |i, j| self.u[(i, j)] * self.lambda[j]);
        DiagPlusLowRank::new(d, self.u.clone(), v)
    }
}

fn frob(m: MatRef<'_, C64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Hermitian eigen form of U Vᴴ restricted to the column space of U.
pub fn to_eigen_form(u: MatRef<'_, C64>, v: MatRef<'_, C64>, trunc_tol: f64) -> Result<EigCorrection> {
    let n = u.nrows();
    if v.nrows() != n || v.ncols() != u.ncols() {
        return Err(Error::Size("mismatched correction factors".into()));
    }
    let qu = orthonormal_basis(u);
    if qu.ncols() == 0 {
        return Ok(EigCorrection::empty(n));
    }
    // U = Qu R with R = Quᴴ U since U lies in the span of Qu.
    let ru = qu.adjoint() * u;
    eigen_core(qu, Some(ru), v, trunc_tol)
}

/// As `to_eigen_form` when the columns of `q` are already orthonormal,
/// as they are for rangefinder output.
pub fn eigen_form_of_basis(q: Mat<C64>, v: MatRef<'_, C64>, trunc_tol: f64) -> Result<EigCorrection> {
    if v.nrows() != q.nrows() || v.ncols() != q.ncols() {
        return Err(Error::Size("mismatched correction factors".into()));
    }
    if q.ncols() == 0 {
        return Ok(EigCorrection::empty(q.nrows()));
    }
    eigen_core(q, None, v, trunc_tol)
}

fn eigen_core(qu: Mat<C64>, ru: Option<Mat<C64>>, v: MatRef<'_, C64>, trunc_tol: f64) -> Result<EigCorrection> {
    let n = qu.nrows();
    let vnorm = frob(v);
    if vnorm == 0.0 {
        return Ok(EigCorrection::empty(n));
    }
    // Quᴴ V; its norm also gives the part of V outside span(Qu).
    let qv = qu.adjoint() * v;
    let vq = qv.adjoint().to_owned();
    let k = match &ru {
        Some(ru) => ru * &vq,
        None => vq,
    };
    let kh = k.adjoint().to_owned();
    let h = Mat::from_fn(k.nrows(), k.ncols(), |i, j| (k[(i, j)] + kh[(i, j)]) * 0.5);
    let knorm = frob(k.as_ref());
    let anti = Mat::from_fn(k.nrows(), k.ncols(), |i, j| (k[(i, j)] - kh[(i, j)]) * 0.5);
    let inside = frob(qv.as_ref());
    let outside = (vnorm * vnorm - inside * inside).max(0.0).sqrt();
    let residual = if knorm > 0.0 { frob(anti.as_ref()) / knorm } else { 0.0 } + outside / vnorm;
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition of correction core failed: {e:?}")))?;
    let s = evd.S();
    let z = evd.U();
    let lam: Vec<f64> = (0..h.nrows()).map(|i| s[i].re).collect();
    let max = lam.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let mut order: Vec<usize> = (0..lam.len()).filter(|&i| max > 0.0 && lam[i].abs() >= trunc_tol * max).collect();
    order.sort_by(|&a, &b| lam[b].abs().total_cmp(&lam[a].abs()));
    let zk = Mat::from_fn(z.nrows(), order.len(), |i, j| z[(i, order[j])]);
    Ok(EigCorrection {
        u: &qu * &zk,
        lambda: order.iter().map(|&i| lam[i]).collect(),
        antihermitian_residual: residual,
    })
}

/// Woodbury solver and determinant for a DPLR with nonzero diagonal.
#[derive(Debug, Clone)]
pub struct DplrSolver {
    a: DiagPlusLowRank,
    /// D⁻¹ U
    ut: Mat<C64>,
    lu: Option<faer::linalg::solvers::PartialPivLu<C64>>,
    cap: Mat<C64>,
}

impl DplrSolver {
    pub fn new(a: DiagPlusLowRank) -> Result<Self> {
        if a.d.iter().any(|&d| d == 0.0 || !d.is_finite()) {
            return Err(Error::Domain("DPLR solve needs a nonzero finite diagonal".into()));
        }
        let n = a.dim();
        let r = a.rank();
        let ut = Mat::from_fn(n, r, |i, j| a.u[(i, j)] / a.d[i]);
        let mut cap = a.v.adjoint() * &ut;
        for i in 0..r {
            cap[(i, i)] += ONE;
        }
        let lu = if r > 0 {
            let lu = cap.partial_piv_lu();
            let umat = lu.U();
            let dmax = (0..r).map(|i| umat[(i, i)].norm()).fold(0.0, f64::max);
            if (0..r).any(|i| umat[(i, i)].norm() <= 1e-15 * dmax.max(1.0)) {
                return Err(Error::Indefinite(
                    "capacitance matrix I + VᴴD⁻¹U is singular; check the rank or the model".into(),
                ));
            }
            Some(lu)
        } else {
            None
        };
        Ok(DplrSolver { a, ut, lu, cap })
    }

    pub fn matrix(&self) -> &DiagPlusLowRank {
        &self.a
    }

    /// D⁻¹ U.
    pub fn scaled_u(&self) -> MatRef<'_, C64> {
        self.ut.as_ref()
    }

    /// (I + VᴴD⁻¹U)⁻¹.
    pub fn capacitance_inverse(&self) -> Mat<C64> {
        match &self.lu {
            Some(lu) => lu.inverse(),
            None => Mat::zeros(0, 0),
        }
    }

    pub fn capacitance(&self) -> MatRef<'_, C64> {
        self.cap.as_ref()
    }

    pub fn solve_block(&self, b: MatRef<'_, C64>) -> Mat<C64> {
        let n = self.a.dim();
        let mut x = Mat::from_fn(n, b.ncols(), |i, j| b[(i, j)] / self.a.d[i]);
        if let Some(lu) = &self.lu {
            let t = self.a.v.adjoint() * &x;
            let s = lu.solve(&t);
            x -= &self.ut * s;
        }
        x
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        self.solve_block(col(b).as_ref()).col_as_slice(0).to_vec()
    }

    /// log|A| for Hermitian positive definite A.
    pub fn logdet(&self) -> Result<f64> {
        if self.a.d.iter().any(|&d| d <= 0.0) {
            return Err(Error::Domain("log-determinant needs a positive diagonal".into()));
        }
        let base: f64 = self.a.d.iter().map(|d| d.ln()).sum();
        let lu = match &self.lu {
            Some(lu) => lu,
            None => return Ok(base),
        };
        let u = lu.U();
        let r = u.nrows();
        let mut logabs = 0.0;
        let mut phase = 0.0;
        for i in 0..r {
            let z = u[(i, i)];
            logabs += z.norm().ln();
            phase += z.arg();
        }
        let (fwd, _) = lu.P().arrays();
        if permutation_is_odd(fwd) {
            phase += std::f64::consts::PI;
        }
        let phase = wrap_phase(phase);
        if phase.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Indefinite(format!(
                "capacitance determinant has phase {phase:.3}; the approximation is not positive definite"
            )));
        }
        if phase.abs() > 1e-10 {
            return Err(Error::Numerical(format!(
                "log-determinant has imaginary residual {phase:e}"
            )));
        }
        Ok(base + logabs)
    }
}

fn wrap_phase(p: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut q = p % two_pi;
    if q > std::f64::consts::PI {
        q -= two_pi;
    } else if q <= -std::f64::consts::PI {
        q += two_pi;
    }
    q
}

fn permutation_is_odd(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    let mut transpositions = 0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
            len += 1;
        }
        transpositions += len - 1;
    }
    transpositions % 2 == 1
}

pub fn dplr_solve(a: &DiagPlusLowRank, b: &[C64]) -> Result<Vec<C64>> {
    if b.len() != a.dim() {
        return Err(Error::Size(format!("right-hand side of length {} for n = {}", b.len(), a.dim())));
    }
    Ok(DplrSolver::new(a.clone())?.solve(b))
}

pub fn dplr_logdet(a: &DiagPlusLowRank) -> Result<f64> {
    DplrSolver::new(a.clone())?.logdet()
}

/// Σ_i d_i Σ_j U_ij conj(V_ij).
fn weighted_row_dots(d: &[f64], u: MatRef<'_, C64>, v: MatRef<'_, C64>) -> C64 {
    let mut acc = ZERO;
    for j in 0..u.ncols() {
        for i in 0..u.nrows() {
            acc += u[(i, j)] * v[(i, j)].conj() * d[i];
        }
    }
    acc
}

/// tr(A B) as a complex number.
pub fn dplr_trace_product_complex(a: &DiagPlusLowRank, b: &DiagPlusLowRank) -> Result<(C64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::Size(format!("trace of {}x{} times {}x{}", a.dim(), a.dim(), b.dim(), b.dim())));
    }
    let t0: f64 = a.d.iter().zip(&b.d).map(|(x, y)| x * y).sum();
    let t1 = weighted_row_dots(&a.d, b.u.as_ref(), b.v.as_ref());
    let t2 = weighted_row_dots(&b.d, a.u.as_ref(), a.v.as_ref());
    let mut t3 = ZERO;
    if a.rank() > 0 && b.rank() > 0 {
        let p = a.v.adjoint() * &b.u;
        let q = b.v.adjoint() * &a.u;
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                t3 += p[(i, j)] * q[(j, i)];
            }
        }
    }
    let scale = t0.abs() + t1.norm() + t2.norm() + t3.norm();
    Ok((C64::new(t0, 0.0) + t1 + t2 + t3, scale))
}

/// tr(A B), real part; the imaginary residual must be ≤ 1e−9 of the result.
pub fn dplr_trace_product(a: &DiagPlusLowRank, b: &DiagPlusLowRank) -> Result<f64> {
    let (t, scale) = dplr_trace_product_complex(a, b)?;
    if t.im.abs() > 1e-9 * t.re.abs().max(1e-3 * scale) {
        return Err(Error::Numerical(format!("trace product has imaginary part {:e} vs {:e}", t.im, t.re)));
    }
    Ok(t.re)
}

/// Σ_t A_t B_tᴴ as a block operator.
struct FactorSum<'a> {
    terms: &'a [(MatRef<'a, C64>, MatRef<'a, C64>)],
    n: usize,
}

impl LinearOperator for FactorSum<'_> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        let mut y = Mat::zeros(self.n, x.ncols());
        for (a, b) in self.terms {
            y += a * (b.adjoint() * x);
        }
        y
    }
    fn apply_adjoint_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        let mut y = Mat::zeros(self.n, x.ncols());
        for (a, b) in self.terms {
            y += b * (a.adjoint() * x);
        }
        y
    }
}

/// Randomized recompression of Σ_t A_t B_tᴴ into A Bᴴ with sketch width target + p.
pub fn recompress_sum(
    terms: &[(MatRef<'_, C64>, MatRef<'_, C64>)],
    target_rank: usize,
    p: usize,
    seed: u64,
) -> Result<(Mat<C64>, Mat<C64>)> {
    let n = match terms.first() {
        Some((a, _)) => a.nrows(),
        None => return Err(Error::Usage("recompression of an empty sum".into())),
    };
    for (a, b) in terms {
        if a.nrows() != n || b.nrows() != n || a.ncols() != b.ncols() {
            return Err(Error::Size("mismatched factor pair in recompression".into()));
        }
    }
    let op = FactorSum { terms, n };
    randomized_rangefinder(&op, target_rank.min(n), p, seed)
}

/// W with W Wᴴ = D + U Λ Uᴴ, W v = √D ∘ (v + Ũ X Ũᴴ v), Ũ = D^{−1/2} U.
#[derive(Debug, Clone)]
pub struct SymmetricFactor {
    pub d_sqrt: Vec<f64>,
    pub utilde: Mat<C64>,
    pub x: Mat<C64>,
    /// N = X (I + K X)⁻¹ with K = ŨᴴŨ, used by the inverse.
    n_inv: Mat<C64>,
}

fn lower_cholesky(m: MatRef<'_, C64>, what: &str) -> Result<Mat<C64>> {
    let llt = m
        .llt(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("{what}: {e:?}")))?;
    Ok(llt.L().to_owned())
}

fn lower_inverse(l: MatRef<'_, C64>) -> Mat<C64> {
    let mut inv = Mat::<C64>::identity(l.nrows(), l.ncols());
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, inv.as_mut(), faer::Par::Seq);
    inv
}

pub fn build_symmetric_factor(d: &[f64], eig: &EigCorrection) -> Result<SymmetricFactor> {
    let n = d.len();
    if eig.u.nrows() != n {
        return Err(Error::Size("eigen correction does not match the diagonal".into()));
    }
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::NotPositiveDefinite("symmetric factor needs a positive diagonal".into()));
    }
    let d_sqrt: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
    let r = eig.rank();
    let utilde = Mat::from_fn(n, r, |i, j| eig.u[(i, j)] / d_sqrt[i]);
    if r == 0 {
        return Ok(SymmetricFactor {
            d_sqrt,
            utilde,
            x: Mat::zeros(0, 0),
            n_inv: Mat::zeros(0, 0),
        });
    }
    let k = utilde.adjoint() * &utilde;
    let l = lower_cholesky(k.as_ref(), "Gram matrix of the scaled factor")?;
    let mut core = l.adjoint() * Mat::from_fn(r, r, |i, j| l[(i, j)] * eig.lambda[i]);
    for i in 0..r {
        core[(i, i)] += ONE;
    }
    let core = Mat::from_fn(r, r, |i, j| (core[(i, j)] + core[(j, i)].conj()) * 0.5);
    let mut g = lower_cholesky(
        core.as_ref(),
        "I + LᴴΛL; the rank may be too small or the model invalid",
    )?;
    for i in 0..r {
        g[(i, i)] -= ONE;
    }
    let linv = lower_inverse(l.as_ref());
    let x = linv.adjoint() * &g * &linv;
    let mut ikx = &k * &x;
    for i in 0..r {
        ikx[(i, i)] += ONE;
    }
    // N = X (I + KX)⁻¹, i.e. Nᵀ solves (I + KX)ᵀ Nᵀ = Xᵀ.
    let n_inv = ikx
        .transpose()
        .to_owned()
        .partial_piv_lu()
        .solve(x.transpose().to_owned())
        .transpose()
        .to_owned();
    Ok(SymmetricFactor { d_sqrt, utilde, x, n_inv })
}

impl SymmetricFactor {
    pub fn dim(&self) -> usize {
        self.d_sqrt.len()
    }

    pub fn rank(&self) -> usize {
        self.utilde.ncols()
    }

    fn core(&self, v: MatRef<'_, C64>, m: MatRef<'_, C64>, sign: f64) -> Mat<C64> {
        let mut out = v.to_owned();
        if self.rank() > 0 {
            let t = &self.utilde * (m * (self.utilde.adjoint() * v));
            out += Mat::from_fn(t.nrows(), t.ncols(), |i, j| t[(i, j)] * sign);
        }
        out
    }

    fn scale_rows(&self, mut m: Mat<C64>, inverse: bool) -> Mat<C64> {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let s = if inverse { 1.0 / self.d_sqrt[i] } else { self.d_sqrt[i] };
                m[(i, j)] *= s;
            }
        }
        m
    }

    /// W v.
    pub fn apply_block(&self, v: MatRef<'_, C64>) -> Mat<C64> {
        self.scale_rows(self.core(v, self.x.as_ref(), 1.0), false)
    }

    /// Wᴴ v.
    pub fn apply_adjoint_block(&self, v: MatRef<'_, C64>) -> Mat<C64> {
        let s = self.scale_rows(v.to_owned(), false);
        self.core(s.as_ref(), self.x.adjoint().to_owned().as_ref(), 1.0)
    }

    /// W⁻¹ v.
    pub fn solve_block(&self, v: MatRef<'_, C64>) -> Mat<C64> {
        let s = self.scale_rows(v.to_owned(), true);
        self.core(s.as_ref(), self.n_inv.as_ref(), -1.0)
    }

    /// W⁻ᴴ v.
    pub fn solve_adjoint_block(&self, v: MatRef<'_, C64>) -> Mat<C64> {
        let c = self.core(v, self.n_inv.adjoint().to_owned().as_ref(), -1.0);
        self.scale_rows(c, true)
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        self.apply_block(col(v).as_ref()).col_as_slice(0).to_vec()
    }

    pub fn apply_adjoint(&self, v: &[C64]) -> Vec<C64> {
        self.apply_adjoint_block(col(v).as_ref()).col_as_slice(0).to_vec()
    }

    pub fn solve(&self, v: &[C64]) -> Vec<C64> {
        self.solve_block(col(v).as_ref()).col_as_slice(0).to_vec()
    }

    pub fn solve_adjoint(&self, v: &[C64]) -> Vec<C64> {
        self.solve_adjoint_block(col(v).as_ref()).col_as_slice(0).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    struct Dense(Mat<C64>);

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
            &self.0 * x
        }
        fn apply_adjoint_block(&self, x: MatRef<'_, C64>) -> Mat<C64> {
            self.0.adjoint() * x
        }
    }

    fn rand_mat(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Mat<C64> {
        Mat::from_fn(n, m, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    fn vnorm(x: &[C64]) -> f64 {
        x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    fn vdiff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    }

    fn hermitian_low_rank(n: usize, q: usize, rng: &mut ChaCha8Rng) -> (Mat<C64>, Mat<C64>, Vec<f64>) {
        let b = rand_mat(n, q, rng);
        let lam: Vec<f64> = (0..q).map(|i| (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let bl = Mat::from_fn(n, q, |i, j| b[(i, j)] * lam[j]);
        (&bl * b.adjoint(), b, lam)
    }

    #[test]
    fn rangefinder_zero_operator() {
        let (q, v) = randomized_rangefinder(&Dense(Mat::zeros(20, 20)), 3, 5, 1).unwrap();
        assert_eq!(q.ncols(), 0);
        assert_eq!(frob(v.as_ref()), 0.0);
    }

    #[test]
    fn rangefinder_rank_one_and_rank_ten() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_mat(60, 1, &mut rng);
        let b = rand_mat(60, 1, &mut rng);
        let m = &a * b.adjoint();
        let (q, v) = randomized_rangefinder(&Dense(m.clone()), 1, 5, 3).unwrap();
        assert!(frob((&m - &q * v.adjoint()).as_ref()) <= 1e-12 * frob(m.as_ref()));

        let (h, _, _) = hermitian_low_rank(80, 10, &mut rng);
        let (q, v) = randomized_rangefinder(&Dense(h.clone()), 10, 5, 4).unwrap();
        assert!(frob((&h - &q * v.adjoint()).as_ref()) <= 1e-11 * frob(h.as_ref()));
        assert!(randomized_rangefinder(&Dense(h), 81, 0, 1).is_err());
    }

    #[test]
    fn eigen_form_recovers_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, _, _) = hermitian_low_rank(50, 4, &mut rng);
        let (q, v) = randomized_rangefinder(&Dense(h.clone()), 4, 5, 2).unwrap();
        let e = to_eigen_form(q.as_ref(), v.as_ref(), 1e-12).unwrap();
        assert_eq!(e.rank(), 4);
        let g = e.u.adjoint() * &e.u;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).norm() < 1e-12);
            }
        }
        for w in e.lambda.windows(2) {
            assert!(w[0].abs() >= w[1].abs());
        }
        let rec = e.to_dplr(vec![0.0; 50]).unwrap().to_dense();
        assert!(frob((&rec - &h).as_ref()) <= 1e-11 * frob(h.as_ref()));
        let dense: Vec<f64> = {
            let evd = h.self_adjoint_eigen(Side::Lower).unwrap();
            let mut s: Vec<f64> = (0..50).map(|i| evd.S()[i].re).collect();
            s.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
            s
        };
        for i in 0..4 {
            assert!((e.lambda[i] - dense[i]).abs() <= 1e-10 * dense[0].abs());
        }
        let z = to_eigen_form(Mat::zeros(50, 3).as_ref(), Mat::zeros(50, 3).as_ref(), 1e-12).unwrap();
        assert_eq!(z.rank(), 0);
    }

    fn pd_dplr(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DiagPlusLowRank {
        let d: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        let u = rand_mat(n, r, rng);
        let lam: Vec<f64> = (0..r).map(|_| 0.5 + rng.random::<f64>()).collect();
        let v = Mat::from_fn(n, r, |i, j| u[(i, j)] * lam[j]);
        DiagPlusLowRank::new(d, u, v).unwrap()
    }

    #[test]
    fn solve_round_trip_and_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = pd_dplr(64, 6, &mut rng);
        let x = rand_vec(64, &mut rng);
        let b = a.apply(&x);
        let x2 = dplr_solve(&a, &b).unwrap();
        assert!(vdiff(&x, &x2) <= 1e-11 * vnorm(&x));
        let dense = a.to_dense().partial_piv_lu().solve(col(&b));
        assert!(vdiff(dense.col_as_slice(0), &x2) <= 1e-11 * vnorm(&x));

        let d = DiagPlusLowRank::diagonal(vec![2.0, 4.0]);
        let y = dplr_solve(&d, &[C64::new(2.0, 0.0), C64::new(1.0, 1.0)]).unwrap();
        assert_eq!(y, vec![C64::new(1.0, 0.0), C64::new(0.25, 0.25)]);
    }

    #[test]
    fn logdet_matches_dense() {
        assert_eq!(dplr_logdet(&DiagPlusLowRank::diagonal(vec![1.0; 5])).unwrap(), 0.0);
        let l = dplr_logdet(&DiagPlusLowRank::diagonal(vec![2.0, 2.0])).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = pd_dplr(40, 5, &mut rng);
        let chol = a.to_dense().llt(Side::Lower).unwrap();
        let want: f64 = (0..40).map(|i| 2.0 * chol.L()[(i, i)].re.ln()).sum();
        assert!((dplr_logdet(&a).unwrap() - want).abs() <= 1e-12 * want.abs());

        let mut neg = pd_dplr(10, 1, &mut rng);
        for i in 0..10 {
            neg.v[(i, 0)] = -neg.u[(i, 0)] * 1e3;
        }
        assert!(matches!(dplr_logdet(&neg), Err(Error::Indefinite(_))));
    }

    #[test]
    fn trace_product_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mk = |rng: &mut ChaCha8Rng, r| {
            let d: Vec<f64> = (0..48).map(|_| rng.random::<f64>() - 0.3).collect();
            DiagPlusLowRank::new(d, rand_mat(48, r, rng), rand_mat(48, r, rng)).unwrap()
        };
        let a = mk(&mut rng, 3);
        let b = mk(&mut rng, 5);
        let dense = a.to_dense() * b.to_dense();
        let want: C64 = (0..48).map(|i| dense[(i, i)]).sum();
        let (got, _) = dplr_trace_product_complex(&a, &b).unwrap();
        assert!((got - want).norm() <= 1e-11 * want.norm());

        let da = DiagPlusLowRank::diagonal(vec![1.0, 2.0, 3.0]);
        let db = DiagPlusLowRank::diagonal(vec![4.0, 5.0, 6.0]);
        assert_eq!(dplr_trace_product(&da, &db).unwrap(), 32.0);
    }

    #[test]
    fn recompression() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let terms: Vec<(Mat<C64>, Mat<C64>)> = (0..3).map(|_| (rand_mat(70, 4, &mut rng), rand_mat(70, 4, &mut rng))).collect();
        let refs: Vec<_> = terms.iter().map(|(a, b)| (a.as_ref(), b.as_ref())).collect();
        let (a, b) = recompress_sum(&refs, 12, 5, 1).unwrap();
        let mut m = Mat::<C64>::zeros(70, 70);
        for (x, y) in &terms {
            m += x * y.adjoint();
        }
        assert!(frob((&m - &a * b.adjoint()).as_ref()) <= 1e-11 * frob(m.as_ref()));

        let u = rand_mat(70, 1, &mut rng);
        let v = rand_mat(70, 1, &mut rng);
        let neg = Mat::from_fn(70, 1, |i, _| -v[(i, 0)]);
        let (a, b) = recompress_sum(&[(u.as_ref(), v.as_ref()), (u.as_ref(), neg.as_ref())], 1, 5, 2).unwrap();
        let rec = if a.ncols() == 0 { 0.0 } else { frob((&a * b.adjoint()).as_ref()) };
        assert!(rec <= 1e-12 * frob(u.as_ref()) * frob(v.as_ref()));
    }

    #[test]
    fn symmetric_factor_reconstructs_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 60;
        let d: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
        let (h, _, _) = hermitian_low_rank(n, 4, &mut rng);
        let h = Mat::from_fn(n, n, |i, j| h[(i, j)] * 0.01);
        let (q, v) = randomized_rangefinder(&Dense(h), 4, 5, 3).unwrap();
        let eig = to_eigen_form(q.as_ref(), v.as_ref(), 1e-12).unwrap();
        let a = eig.to_dplr(d.clone()).unwrap();
        let w = build_symmetric_factor(&d, &eig).unwrap();
        let x = rand_vec(n, &mut rng);
        let ax = a.apply(&x);
        assert!(vdiff(&w.apply(&w.apply_adjoint(&x)), &ax) <= 1e-11 * vnorm(&ax));
        assert!(vdiff(&w.solve(&w.apply(&x)), &x) <= 1e-12 * vnorm(&x));
        assert!(vdiff(&w.solve_adjoint(&w.apply_adjoint(&x)), &x) <= 1e-12 * vnorm(&x));
        let s = w.solve_adjoint(&w.solve(&ax));
        assert!(vdiff(&s, &x) <= 1e-9 * vnorm(&x));

        let white = build_symmetric_factor(&[4.0; 3], &EigCorrection::empty(3)).unwrap();
        let one = vec![C64::new(1.0, 0.0); 3];
        assert_eq!(white.apply(&one), vec![C64::new(2.0, 0.0); 3]);
        assert_eq!(white.apply_adjoint(&one), vec![C64::new(2.0, 0.0); 3]);
    }
}
