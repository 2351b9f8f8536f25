mod common;

use common::*;
use dplr_core::dense::{dense_covariance, dense_dft_covariance};
use dplr_core::likelihood::{assemble_correction, nll, whiten, AssemblyConfig};
use dplr_core::lowrank::{build_symmetric_factor, DplrSolver, EigCorrection};
use dplr_core::models::WhiteNoise;
use dplr_core::toeplitz::{Dft, LinearOperator, ToeplitzOperator, WhittleResidual};
use dplr_core::whittle::{finite_sample_variances, periodogram, whittle_nll};
use dplr_core::C64;
use faer::Mat;
use proptest::prelude::*;

fn complex_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), len).prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// A random positive diagonal plus a Hermitian rank-r correction with
/// eigenvalues in (−min D/2, 2), so that the sum is positive definite.
fn random_dplr(n: usize, r: usize, vals: &[f64]) -> (Vec<f64>, EigCorrection) {
    let d: Vec<f64> = (0..n).map(|i| 0.5 + vals[i % vals.len()].abs()).collect();
    let g = Mat::from_fn(n, r, |i, j| {
        let a = vals[(3 * i + 7 * j) % vals.len()];
        let b = vals[(5 * i + 11 * j + 1) % vals.len()];
        C64::new(a + (i as f64 * 0.37 + j as f64).sin(), b + (i as f64 * 1.3 - j as f64).cos())
    });
    let u = g.qr().compute_thin_Q();
    let lambda = (0..r).map(|j| if j % 2 == 0 { 1.0 + j as f64 / r as f64 } else { -0.2 }).collect();
    (d, EigCorrection { u, lambda, antihermitian_residual: 0.0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dft_is_unitary(x in complex_vec(1..300)) {
        let f = Dft::new(x.len());
        let y = f.apply(&x).unwrap();
        prop_assert!((norm(&y) - norm(&x)).abs() <= 1e-12 * norm(&x).max(1e-300));
        let back = f.adjoint(&y).unwrap();
        prop_assert!(diff(&back, &x) <= 1e-12 * norm(&x).max(1e-300));
    }

    #[test]
    fn periodogram_parseval(y in prop::collection::vec(-1e3..1e3f64, 2..300)) {
        let total: f64 = periodogram(&y).unwrap().iter().sum();
        let sq: f64 = y.iter().map(|v| v * v).sum();
        prop_assert!((total - sq).abs() <= 1e-12 * sq.max(1e-300));
    }

    #[test]
    fn toeplitz_matvec_matches_dense(
        h in prop::collection::vec(-2.0..2.0f64, 1..120),
        seed in 0u64..1000,
    ) {
        let n = h.len();
        let t = ToeplitzOperator::new(&h).unwrap();
        let v: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        let got = t.matvec_real(&v).unwrap();
        let sigma = dense_covariance(&h, n).unwrap();
        let scale: f64 = h.iter().map(|x| x.abs()).sum::<f64>() * v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for i in 0..n {
            let want: f64 = (0..n).map(|j| sigma[(i, j)] * v[j]).sum();
            prop_assert!((got[i] - want).abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn whittle_residual_is_hermitian(
        rho in -0.95..0.95f64,
        x in complex_vec(16..17),
        y in complex_vec(16..17),
    ) {
        let n = 16;
        let h: Vec<f64> = (0..n).map(|k| rho.powi(k as i32)).collect();
        let d: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
        let e = WhittleResidual::new(ToeplitzOperator::new(&h).unwrap(), d).unwrap();
        let ex = e.apply(&x).unwrap();
        let ey = e.apply(&y).unwrap();
        let a: C64 = ex.iter().zip(&y).map(|(p, q)| p.conj() * q).sum();
        let b: C64 = x.iter().zip(&ey).map(|(p, q)| p.conj() * q).sum();
        prop_assert!((a - b).norm() <= 1e-12 * norm(&x) * norm(&y) * n as f64);
        let single = e.apply_adjoint_block(Mat::from_fn(n, 1, |i, _| x[i]).as_ref());
        prop_assert!((0..n).all(|i| (single[(i, 0)] - ex[i]).norm() <= 1e-12 * norm(&ex)));
    }

    #[test]
    fn dplr_round_trips(
        n in 8usize..80,
        r in 1usize..6,
        vals in prop::collection::vec(-2.0..2.0f64, 7..20),
        x in complex_vec(80..81),
    ) {
        let r = r.min(n);
        let x = &x[..n];
        let (d, eig) = random_dplr(n, r, &vals);
        let a = eig.to_dplr(d.clone()).unwrap();
        let solver = DplrSolver::new(a.clone()).unwrap();
        let back = solver.solve(&a.apply(x));
        prop_assert!(diff(&back, x) <= 1e-10 * norm(x));

        let w = build_symmetric_factor(&d, &eig).unwrap();
        let dense = a.to_dense();
        let id = Mat::<C64>::identity(n, n);
        let wwh = w.apply_block(w.apply_adjoint_block(id.as_ref()).as_ref());
        prop_assert!((&wwh - &dense).norm_l2() <= 1e-10 * dense.norm_l2());
        let inv = w.solve_block(w.apply_block(id.as_ref()).as_ref());
        prop_assert!((&inv - &id).norm_l2() <= 1e-10);
        let inv = w.solve_adjoint_block(w.apply_adjoint_block(id.as_ref()).as_ref());
        prop_assert!((&inv - &id).norm_l2() <= 1e-10);
    }

    #[test]
    fn white_noise_exactness_chain(
        s2 in 0.01..100.0f64,
        y in prop::collection::vec(-10.0..10.0f64, 9..200),
    ) {
        let n = y.len();
        let op = assemble_correction(&WhiteNoise, &[s2], n, &AssemblyConfig::with_rank(4)).unwrap();
        prop_assert_eq!(op.eig.rank(), 0);
        let sq: f64 = y.iter().map(|v| v * v).sum();
        let want = 0.5 * (n as f64 * s2.ln() + sq / s2);
        let got = nll(&op, &y).unwrap();
        let w = whittle_nll(&WhiteNoise, &[s2], &y).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        prop_assert!((w - want).abs() <= 1e-12 * want.abs().max(1.0));
        // W = σI, so W⁻¹Fy = Fy/σ.
        let z = whiten(&op, &y).unwrap();
        let fy = Dft::new(n).apply_real(&y).unwrap();
        let sig = s2.sqrt();
        prop_assert!(z.iter().zip(&fy).all(|(a, b)| (a * sig - b).norm() <= 1e-12 * norm(&fy).max(1e-300)));
        let factor = op.factor().unwrap();
        let probe: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let wp = factor.apply(&probe);
        prop_assert!(wp.iter().zip(&probe).all(|(a, b)| (a - b * sig).norm() <= 1e-12 * sig * norm(&probe)));
    }

    #[test]
    fn finite_sample_variances_sum_to_trace(
        rho in -0.95..0.95f64,
        n in 2usize..300,
    ) {
        // Σ_j (FΣFᴴ)_jj = tr Σ = n h_0.
        let h: Vec<f64> = (0..n).map(|k| rho.powi(k as i32)).collect();
        let v = finite_sample_variances(&h, n).unwrap();
        let total: f64 = v.values.iter().sum();
        prop_assert!((total - n as f64).abs() <= 1e-11 * n as f64);
    }
}

#[test]
fn finite_sample_variances_are_the_conjugated_diagonal() {
    let n = 64;
    let h = ar1_acov(&[1.0, 0.7], n);
    let a = dense_dft_covariance(dense_covariance(&h, n).unwrap().as_ref());
    let v = finite_sample_variances(&h, n).unwrap();
    assert_eq!(v.nonpositive, 0);
    for j in 0..n {
        assert!((v.values[j] - a[(j, j)].re).abs() <= 1e-13 * h[0], "{j}");
    }
}
