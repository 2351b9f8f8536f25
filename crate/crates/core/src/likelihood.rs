//! F Σ Fᴴ ≈ D + U Vᴴ and the likelihood, gradient and Fisher information
//! evaluated through it.

use std::sync::OnceLock;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acov::{acov_tables, AcovTable, QuadratureConfig};
use crate::error::{Error, Result};
use crate::lowrank::{
    build_symmetric_factor, dplr_trace_product, eigen_form_of_basis, randomized_rangefinder, recompress_sum,
    DiagPlusLowRank, DplrSolver, EigCorrection, SymmetricFactor,
};
use crate::models::{Component, SpectralModel};
use crate::toeplitz::{Dft, ToeplitzOperator, WhittleResidual};
use crate::whittle::{component_on_grid, sdf_on_grid};

/// Eigenvalues below this multiple of max D are treated as rounding noise.
const NOISE_FLOOR: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone)]
pub struct AssemblyConfig {
    pub rank: usize,
    pub oversampling: usize,
    pub seed: u64,
    pub quadrature: QuadratureConfig,
    /// Relative truncation of the Hermitian eigen form.
    pub trunc_tol: f64,
    /// Per-parameter ranks for the derivative operators; `rank` otherwise.
    pub partial_ranks: Option<Vec<usize>>,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            rank: 32,
            oversampling: 5,
            seed: 0,
            quadrature: QuadratureConfig::default(),
            trunc_tol: 1e-12,
            partial_ranks: None,
        }
    }
}

impl AssemblyConfig {
    pub fn with_rank(rank: usize) -> Self {
        AssemblyConfig {
            rank,
            ..Default::default()
        }
    }

    fn partial_rank(&self, j: usize) -> usize {
        self.partial_ranks
            .as_ref()
            .and_then(|r| r.get(j).copied())
            .unwrap_or(self.rank)
    }
}

#[derive(Debug, Clone)]
pub struct OperatorMeta {
    pub n: usize,
    pub rank: usize,
    pub oversampling: usize,
    pub seed: u64,
    pub model: String,
    pub theta: Vec<f64>,
}

/// The compressed F Σ Fᴴ for one model and parameter vector.
#[derive(Debug)]
pub struct CorrectedWhittleOperator {
    /// D + Q Vᴴ straight from the rangefinder.
    pub base: DiagPlusLowRank,
    /// Hermitian form of the correction, used for all solves.
    pub eig: EigCorrection,
    pub acov: AcovTable,
    pub meta: OperatorMeta,
    solver: DplrSolver,
    factor: OnceLock<Result<SymmetricFactor>>,
    dft: Dft,
}

fn rangefinder_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

fn check_sizes(n: usize, r: usize, p: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Size(format!("n must be at least 2, got {n}")));
    }
    if r + p > n {
        return Err(Error::Size(format!("rank {r} plus oversampling {p} exceeds n = {n}")));
    }
    Ok(())
}

/// Compresses E = F T Fᴴ − diag(d) at rank r into Hermitian eigen form.
fn compress(
    h: &[f64],
    d: Vec<f64>,
    r: usize,
    cfg: &AssemblyConfig,
    stream: u64,
    scale: f64,
) -> Result<(DiagPlusLowRank, EigCorrection)> {
    let resid = WhittleResidual::new(ToeplitzOperator::new(h)?, d.clone())?;
    let (q, v) = if r == 0 {
        (Mat::zeros(d.len(), 0), Mat::zeros(d.len(), 0))
    } else {
        randomized_rangefinder(&resid, r, cfg.oversampling, rangefinder_seed(cfg.seed, stream))?
    };
    let eig = eigen_form_of_basis(q.clone(), v.as_ref(), cfg.trunc_tol)?.truncate_below(NOISE_FLOOR * scale);
    Ok((DiagPlusLowRank::new(d, q, v)?, eig))
}

impl CorrectedWhittleOperator {
    fn from_table(model: &dyn SpectralModel, theta: &[f64], acov: AcovTable, cfg: &AssemblyConfig) -> Result<Self> {
        let n = acov.len();
        let d = sdf_on_grid(model, theta, n)?;
        let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let (base, eig) = compress(&acov.values, d.clone(), cfg.rank, cfg, 0, dmin)?;
        let solver = DplrSolver::new(eig.to_dplr(d)?)?;
        Ok(CorrectedWhittleOperator {
            base,
            eig,
            acov,
            meta: OperatorMeta {
                n,
                rank: cfg.rank,
                oversampling: cfg.oversampling,
                seed: cfg.seed,
                model: model.name().to_string(),
                theta: theta.to_vec(),
            },
            solver,
            factor: OnceLock::new(),
            dft: Dft::new(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.meta.n
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.base.d
    }

    /// D + UΛUᴴ as used by the solver.
    pub fn matrix(&self) -> &DiagPlusLowRank {
        self.solver.matrix()
    }

    pub fn solver(&self) -> &DplrSolver {
        &self.solver
    }

    pub fn dft(&self) -> &Dft {
        &self.dft
    }

    /// W with W Wᴴ = D + UΛUᴴ, built on first use.
    pub fn factor(&self) -> Result<&SymmetricFactor> {
        self.factor
            .get_or_init(|| build_symmetric_factor(&self.base.d, &self.eig))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn check_data(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::Size(format!("data of length {} for n = {}", y.len(), self.dim())));
        }
        Ok(())
    }

    /// (Σ̃⁻¹ F y, F y).
    fn solve_data(&self, y: &[f64]) -> Result<(Vec<C64>, Vec<C64>)> {
        self.check_data(y)?;
        let fy = self.dft.apply_real(y)?;
        Ok((self.solver.solve(&fy), fy))
    }
}

/// Acov table, D on the grid, then a rangefinder over E = FΣFᴴ − D.
pub fn assemble_correction(
    model: &dyn SpectralModel,
    theta: &[f64],
    n: usize,
    cfg: &AssemblyConfig,
) -> Result<CorrectedWhittleOperator> {
    check_sizes(n, cfg.rank, cfg.oversampling)?;
    let acov = acov_tables(model, theta, n, &[Component::Density], &cfg.quadrature)?.remove(0);
    CorrectedWhittleOperator::from_table(model, theta, acov, cfg)
}

/// ½(log|Σ̃| + (Fy)ᴴ Σ̃⁻¹ (Fy)).
pub fn nll(op: &CorrectedWhittleOperator, y: &[f64]) -> Result<f64> {
    let (z, fy) = op.solve_data(y)?;
    let logdet = op.solver.logdet()?;
    let q: C64 = fy.iter().zip(&z).map(|(a, b)| a.conj() * b).sum();
    if q.im.abs() > 1e-9 * q.re.abs() {
        return Err(Error::Numerical(format!("quadratic form has imaginary part {:e} vs {:e}", q.im, q.re)));
    }
    Ok(0.5 * (logdet + q.re))
}

/// Compressed ∂Σ̃/∂θ_j ≈ D_j + U_j Λ_j U_jᴴ.
#[derive(Debug, Clone)]
pub struct DerivativeOperator {
    pub dplr: DiagPlusLowRank,
    pub eig: EigCorrection,
}

/// The base operator together with every compressed derivative operator.
#[derive(Debug)]
pub struct LikelihoodDerivatives {
    pub op: CorrectedWhittleOperator,
    pub partials: Vec<DerivativeOperator>,
    pub partial_tables: Vec<AcovTable>,
}

pub fn assemble_with_derivatives(
    model: &dyn SpectralModel,
    theta: &[f64],
    n: usize,
    cfg: &AssemblyConfig,
) -> Result<LikelihoodDerivatives> {
    check_sizes(n, cfg.rank, cfg.oversampling)?;
    let p = model.param_count();
    for j in 0..p {
        check_sizes(n, cfg.partial_rank(j), cfg.oversampling)?;
    }
    let mut comps = vec![Component::Density];
    comps.extend((0..p).map(Component::Partial));
    let mut tables = acov_tables(model, theta, n, &comps, &cfg.quadrature)?;
    let partial_tables = tables.split_off(1);
    let op = CorrectedWhittleOperator::from_table(model, theta, tables.remove(0), cfg)?;
    let partials = (0..p)
        .into_par_iter()
        .map(|j| {
            let dj = component_on_grid(model, theta, n, Component::Partial(j))?;
            let scale = dj.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let (_, eig) = compress(&partial_tables[j].values, dj.clone(), cfg.partial_rank(j), cfg, 1 + j as u64, scale)?;
            Ok(DerivativeOperator {
                dplr: eig.to_dplr(dj)?,
                eig,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LikelihoodDerivatives {
        op,
        partials,
        partial_tables,
    })
}

/// Σ̃⁻¹Σ̃_j as diag(D_j/D) + A_j B_jᴴ.
fn inverse_times_partial(ld: &LikelihoodDerivatives, j: usize, cfg: &AssemblyConfig) -> Result<DiagPlusLowRank> {
    let op = &ld.op;
    let d = &op.base.d;
    let n = d.len();
    let pj = &ld.partials[j].dplr;
    let dj = &pj.d;
    let ratio: Vec<f64> = dj.iter().zip(d).map(|(a, b)| a / b).collect();
    let a = op.solver.matrix();
    if a.rank() == 0 && pj.rank() == 0 {
        return Ok(DiagPlusLowRank::diagonal(ratio));
    }
    let r = a.rank();
    let rj = pj.rank();
    // Σ̃⁻¹ = D⁻¹ + Ũ C̃ Ṽᴴ with Ũ = D⁻¹U, Ṽ = D⁻¹V, C̃ = −(I + VᴴD⁻¹U)⁻¹.
    let ut = op.solver.scaled_u();
    let vt = Mat::from_fn(n, r, |i, k| a.v[(i, k)] / d[i]);
    let cinv = op.solver.capacitance_inverse();
    let uc = {
        let m = ut * &cinv;
        Mat::from_fn(n, r, |i, k| -m[(i, k)])
    };
    let t1a = Mat::from_fn(n, rj, |i, k| pj.u[(i, k)] / d[i]);
    let t2b = Mat::from_fn(n, r, |i, k| vt[(i, k)] * dj[i]);
    let t3a = &uc * (vt.adjoint() * &pj.u);
    let mut terms = Vec::new();
    if rj > 0 {
        terms.push((t1a.as_ref(), pj.v.as_ref()));
    }
    if r > 0 {
        terms.push((uc.as_ref(), t2b.as_ref()));
    }
    if r > 0 && rj > 0 {
        terms.push((t3a.as_ref(), pj.v.as_ref()));
    }
    let target = 2 * rj + r;
    let seed = rangefinder_seed(cfg.seed, 1000 + j as u64);
    let (qa, qb) = recompress_sum(&terms, target, cfg.oversampling, seed)?;
    DiagPlusLowRank::new(ratio, qa, qb)
}

/// ½(tr(Σ̃⁻¹Σ̃_j) − zᴴΣ̃_j z), z = Σ̃⁻¹Fy, using precomputed operators.
pub fn gradient_from(ld: &LikelihoodDerivatives, y: &[f64], cfg: &AssemblyConfig) -> Result<Vec<f64>> {
    let (z, _) = ld.op.solve_data(y)?;
    (0..ld.partials.len())
        .map(|j| {
            let m = inverse_times_partial(ld, j, cfg)?;
            let mut tr = C64::new(m.d.iter().sum::<f64>(), 0.0);
            for c in 0..m.rank() {
                for i in 0..m.dim() {
                    tr += m.u[(i, c)] * m.v[(i, c)].conj();
                }
            }
            let sz = ld.partials[j].dplr.apply(&z);
            let q: C64 = z.iter().zip(&sz).map(|(a, b)| a.conj() * b).sum();
            let scale = tr.norm().max(q.norm());
            if tr.im.abs() > 1e-9 * scale || q.im.abs() > 1e-9 * scale {
                return Err(Error::Numerical(format!(
                    "gradient term {j} has imaginary residuals {:e}, {:e}",
                    tr.im, q.im
                )));
            }
            Ok(0.5 * (tr.re - q.re))
        })
        .collect()
}

/// Gradient through recompressed low-rank products Σ̃⁻¹Σ̃_j.
pub fn gradient(model: &dyn SpectralModel, theta: &[f64], y: &[f64], cfg: &AssemblyConfig) -> Result<Vec<f64>> {
    let ld = assemble_with_derivatives(model, theta, y.len(), cfg)?;
    gradient_from(&ld, y, cfg)
}

/// tr(Σ̃⁻¹Σ̃_j) evaluated exactly from the factors in O(n r²), without
/// recompression:
///
///   Σ D_j/D + tr(D⁻¹U_jV_jᴴ) − tr(C⁻¹ Vᴴ diag(D_j/D²) U) − tr(C⁻¹ (VᴴD⁻¹U_j)(V_jᴴD⁻¹U))
///
/// with C = I + VᴴD⁻¹U.
fn factored_trace(ld: &LikelihoodDerivatives, j: usize) -> C64 {
    let a = ld.op.solver.matrix();
    let d = &a.d;
    let n = d.len();
    let pj = &ld.partials[j].dplr;
    let mut tr = C64::new(pj.d.iter().zip(d).map(|(x, y)| x / y).sum::<f64>(), 0.0);
    for c in 0..pj.rank() {
        for i in 0..n {
            tr += pj.u[(i, c)] * pj.v[(i, c)].conj() / d[i];
        }
    }
    if a.rank() == 0 {
        return tr;
    }
    let cinv = ld.op.solver.capacitance_inverse();
    let wu = Mat::from_fn(n, a.rank(), |i, c| a.u[(i, c)] * (pj.d[i] / (d[i] * d[i])));
    let g = a.v.adjoint() * &wu;
    let mut t = cinv.as_ref() * &g;
    if pj.rank() > 0 {
        let duj = Mat::from_fn(n, pj.rank(), |i, c| pj.u[(i, c)] / d[i]);
        let du = ld.op.solver.scaled_u();
        let left = a.v.adjoint() * &duj;
        let right = pj.v.adjoint() * du;
        t += cinv.as_ref() * (left * right);
    }
    for i in 0..t.nrows() {
        tr -= t[(i, i)];
    }
    tr
}

/// Gradient with exact factored traces, for use inside optimizers.
pub fn gradient_factored(ld: &LikelihoodDerivatives, y: &[f64]) -> Result<Vec<f64>> {
    let (z, _) = ld.op.solve_data(y)?;
    (0..ld.partials.len())
        .map(|j| {
            let tr = factored_trace(ld, j);
            let sz = ld.partials[j].dplr.apply(&z);
            let q: C64 = z.iter().zip(&sz).map(|(a, b)| a.conj() * b).sum();
            let scale = tr.norm().max(q.norm());
            if tr.im.abs() > 1e-9 * scale || q.im.abs() > 1e-9 * scale {
                return Err(Error::Numerical(format!(
                    "gradient term {j} has imaginary residuals {:e}, {:e}",
                    tr.im, q.im
                )));
            }
            Ok(0.5 * (tr.re - q.re))
        })
        .collect()
}

/// Negative log-likelihood and gradient sharing one assembly; the gradient
/// uses the factored traces.
pub fn nll_and_gradient(
    model: &dyn SpectralModel,
    theta: &[f64],
    y: &[f64],
    cfg: &AssemblyConfig,
) -> Result<(f64, Vec<f64>)> {
    let ld = assemble_with_derivatives(model, theta, y.len(), cfg)?;
    Ok((nll(&ld.op, y)?, gradient_factored(&ld, y)?))
}

fn symmetrize(m: &mut Mat<f64>) -> Result<()> {
    let p = m.nrows();
    let norm = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .fold(0.0f64, |a, (i, j)| a.max(m[(i, j)].abs()));
    for i in 0..p {
        for j in i + 1..p {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > 1e-9 * norm {
                return Err(Error::Numerical(format!("Fisher entries ({i},{j}) disagree: {a:e} vs {b:e}")));
            }
            m[(i, j)] = 0.5 * (a + b);
            m[(j, i)] = 0.5 * (a + b);
        }
    }
    Ok(())
}

pub fn fisher_exact_from(ld: &LikelihoodDerivatives, cfg: &AssemblyConfig) -> Result<Mat<f64>> {
    let p = ld.partials.len();
    let prods: Vec<DiagPlusLowRank> = (0..p).map(|j| inverse_times_partial(ld, j, cfg)).collect::<Result<_>>()?;
    let mut out = Mat::zeros(p, p);
    for j in 0..p {
        for k in 0..p {
            out[(j, k)] = 0.5 * dplr_trace_product(&prods[j], &prods[k])?;
        }
    }
    symmetrize(&mut out)?;
    Ok(out)
}

/// I_jk = ½ tr(Σ̃⁻¹Σ̃_jΣ̃⁻¹Σ̃_k) through trace products of recompressed DPLRs.
pub fn fisher_exact(model: &dyn SpectralModel, theta: &[f64], n: usize, cfg: &AssemblyConfig) -> Result<Mat<f64>> {
    fisher_exact_from(&assemble_with_derivatives(model, theta, n, cfg)?, cfg)
}

pub fn fisher_stochastic_from(ld: &LikelihoodDerivatives, samples: usize, seed: u64) -> Result<Mat<f64>> {
    if samples == 0 {
        return Err(Error::Usage("stochastic Fisher needs at least one sample".into()));
    }
    let w = ld.op.factor()?;
    let n = ld.op.dim();
    let p = ld.partials.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Mat::from_fn(n, samples, |_, _| {
        C64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0)
    });
    let wu = w.solve_adjoint_block(u.as_ref());
    // s_j = W⁻¹ Σ̃_j W⁻ᴴ u, so that s_jᴴ s_k has expectation tr(Σ̃⁻¹Σ̃_jΣ̃⁻¹Σ̃_k).
    let s: Vec<Mat<C64>> = ld
        .partials
        .par_iter()
        .map(|pj| w.solve_block(pj.dplr.apply_block(wu.as_ref()).as_ref()))
        .collect();
    let norm2 = |m: &Mat<C64>| -> f64 {
        (0..m.ncols()).map(|c| m.col_as_slice(c).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
    };
    let l = samples as f64;
    let mut out = Mat::zeros(p, p);
    for j in 0..p {
        out[(j, j)] = norm2(&s[j]) / (2.0 * l);
    }
    for j in 0..p {
        for k in j + 1..p {
            let sum = &s[j] + &s[k];
            let v = norm2(&sum) / (4.0 * l) - 0.5 * out[(j, j)] - 0.5 * out[(k, k)];
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    Ok(out)
}

/// Stochastic Fisher information from L Rademacher probe vectors.
pub fn fisher_stochastic(
    model: &dyn SpectralModel,
    theta: &[f64],
    n: usize,
    samples: usize,
    seed: u64,
    cfg: &AssemblyConfig,
) -> Result<Mat<f64>> {
    fisher_stochastic_from(&assemble_with_derivatives(model, theta, n, cfg)?, samples, seed)
}

/// W⁻¹(F y).
pub fn whiten(op: &CorrectedWhittleOperator, y: &[f64]) -> Result<Vec<C64>> {
    op.check_data(y)?;
    let w = op.factor()?;
    Ok(w.solve(&op.dft.apply_real(y)?))
}
