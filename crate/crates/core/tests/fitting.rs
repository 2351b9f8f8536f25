mod common;

use common::*;
use dplr_core::fit::{estimator_study, fit, FitConfig, Method, StudyConfig};
use dplr_core::likelihood::{nll_and_gradient, AssemblyConfig};
use dplr_core::models::{Ar1, ExpDecay, SpectralModel, WhiteNoise};
use dplr_core::simulate::circulant_embedding_sample;

#[test]
fn white_noise_dense_fit_is_the_sample_variance() {
    let n = 4096;
    let mut h = vec![0.0; n];
    h[0] = 4.0;
    let y = circulant_embedding_sample(&h, n, 1, 8).unwrap().remove(0);
    let want = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    // The default stopping rule |∇| ≤ 1e-8·|nll| leaves σ̂² about 2e-8 off the
    // argmin at this n, so the test asks for a tighter gradient.
    let mut cfg = FitConfig::default();
    cfg.optim.grad_tol = 1e-12;
    let r = fit(Method::Dense, &WhiteNoise, &y, &[1.0], &cfg).unwrap();
    assert!(r.converged);
    assert!(rel(r.theta[0], want) <= 1e-8, "{} vs {want}", r.theta[0]);
}

#[test]
fn standard_errors_match_the_white_noise_fisher() {
    // I = n/(2σ⁴), so se(σ̂²) = σ²√(2/n).
    let n = 512;
    let mut h = vec![0.0; n];
    h[0] = 2.0;
    let y = circulant_embedding_sample(&h, n, 1, 2).unwrap().remove(0);
    let cfg = FitConfig { standard_errors: true, ..Default::default() };
    let r = fit(Method::Dplr, &WhiteNoise, &y, &[1.0], &cfg).unwrap();
    let se = r.standard_errors.unwrap()[0];
    assert!(rel(se, r.theta[0] * (2.0 / n as f64).sqrt()) <= 1e-10, "{se}");
}

#[test]
fn dplr_gradient_vanishes_at_the_dense_mle() {
    let n = 1024;
    for (model, theta, rank) in [
        (&Ar1 as &dyn SpectralModel, [1.0, 0.9], 2usize),
        (&ExpDecay, [10.0, 10.0], 128),
    ] {
        let h = dplr_core::acov::acov_hybrid(model, &theta, n, &Default::default()).unwrap();
        let y = circulant_embedding_sample(&h.values, n, 1, 4).unwrap().remove(0);
        let dense = fit(Method::Dense, model, &y, &theta, &FitConfig::default()).unwrap();
        assert!(dense.converged, "{dense:?}");
        let (f, g) = nll_and_gradient(model, &dense.theta, &y, &AssemblyConfig::with_rank(rank)).unwrap();
        let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gn <= 1e-6 * (1.0 + f.abs()), "{}: |g| = {gn:e}, nll {f}", model.name());
    }
}

#[test]
fn study_smoke_and_reproducibility() {
    let cfg = StudyConfig { fit: FitConfig { assembly: AssemblyConfig::with_rank(4), ..Default::default() }, theta0: None };
    let run = || estimator_study(&Ar1, &[1.0, 0.9], 256, 1, &Method::ALL, 3, &cfg).unwrap();
    let a = run();
    assert_eq!(a.fits.len(), 4);
    assert!(a.fits.iter().all(|f| f.result.is_ok()));
    let b = run();
    assert_eq!(a.trials_csv(), b.trials_csv());
    assert_eq!(a.summary_csv(), b.summary_csv());
    assert_eq!(a.trials_csv().lines().next().unwrap(), "trial,method,theta0,theta1,nll,iterations,converged,grad_norm,error");
}

#[test]
fn ar1_dplr_estimator_is_unbiased() {
    let theta = [1.0, 0.9];
    let cfg = StudyConfig { fit: FitConfig { assembly: AssemblyConfig::with_rank(2), ..Default::default() }, theta0: None };
    let trials = 40;
    let t = estimator_study(&Ar1, &theta, 2048, trials, &[Method::Dplr, Method::Dense], 99, &cfg).unwrap();
    let s = &t.summary[0];
    assert_eq!(s.method, Method::Dplr);
    assert_eq!(s.trials, trials);
    for j in 0..2 {
        let se = s.sd[j] / (trials as f64).sqrt();
        assert!(s.bias[j].abs() <= 3.0 * se, "param {j}: bias {} se {se}", s.bias[j]);
        assert!(s.max_dev_from_mle.as_ref().unwrap()[j] <= 1e-6, "{:?}", s.max_dev_from_mle);
    }
}
