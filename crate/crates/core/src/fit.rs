//! Maximum-likelihood fits and Monte Carlo estimator studies.

use std::fmt::Write as _;
use std::str::FromStr;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use rayon::prelude::*;

use crate::acov::{acov_hybrid, acov_tables};
use crate::dense::levinson_nll_and_gradient;
use crate::error::{Error, Result};
use crate::likelihood::{fisher_exact, nll_and_gradient, AssemblyConfig};
use crate::models::{Component, ParamTransform, SpectralModel};
use crate::optim::{bfgs, BfgsOptions};
use crate::simulate::circulant_embedding_sample;
use crate::whittle::{debiased_whittle_nll, whittle_nll};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Dplr,
    Whittle,
    Debiased,
    Dense,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Dplr, Method::Whittle, Method::Debiased, Method::Dense];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dplr => "dplr",
            Method::Whittle => "whittle",
            Method::Debiased => "debiased",
            Method::Dense => "dense",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown method '{s}' (expected dplr, whittle, debiased or dense)")))
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub assembly: AssemblyConfig,
    pub optim: BfgsOptions,
    /// Relative step of the central differences used by the Whittle variants.
    pub fd_step: f64,
    /// Emit inverse-Fisher standard errors at θ̂.
    pub standard_errors: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            assembly: AssemblyConfig::default(),
            optim: BfgsOptions::default(),
            fd_step: 1e-6,
            standard_errors: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: Method,
    pub theta: Vec<f64>,
    pub nll: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// ∞-norm of the gradient in the unconstrained coordinates.
    pub grad_norm: f64,
    pub standard_errors: Option<Vec<f64>>,
}

/// Objective value and θ-gradient for one method.
pub fn objective(
    method: Method,
    model: &dyn SpectralModel,
    theta: &[f64],
    y: &[f64],
    cfg: &FitConfig,
) -> Result<(f64, Vec<f64>)> {
    model.check_params(theta)?;
    match method {
        Method::Dplr => nll_and_gradient(model, theta, y, &cfg.assembly),
        Method::Dense => {
            let p = model.param_count();
            let comps: Vec<Component> = std::iter::once(Component::Density)
                .chain((0..p).map(Component::Partial))
                .collect();
            let tables = acov_tables(model, theta, y.len(), &comps, &cfg.assembly.quadrature)?;
            let partials: Vec<&[f64]> = tables[1..].iter().map(|t| t.values.as_slice()).collect();
            levinson_nll_and_gradient(&tables[0].values, &partials, y)
        }
        Method::Whittle | Method::Debiased => {
            let value = |t: &[f64]| -> Result<f64> {
                match method {
                    Method::Whittle => whittle_nll(model, t, y),
                    _ => debiased_whittle_nll(y, &acov_hybrid(model, t, y.len(), &cfg.assembly.quadrature)?),
                }
            };
            let f = value(theta)?;
            let mut g = Vec::with_capacity(theta.len());
            for j in 0..theta.len() {
                let h = cfg.fd_step * theta[j].abs().max(f64::MIN_POSITIVE);
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[j] += h;
                tm[j] -= h;
                g.push((value(&tp)? - value(&tm)?) / (tp[j] - tm[j]));
            }
            Ok((f, g))
        }
    }
}

/// Quasi-Newton minimization of the chosen negative log-likelihood in the
/// model's unconstrained coordinates.
pub fn fit(method: Method, model: &dyn SpectralModel, y: &[f64], theta0: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    if theta0.len() != model.param_count() {
        return Err(Error::Usage(format!(
            "'{}' takes {} parameters, got {}",
            model.name(),
            model.param_count(),
            theta0.len()
        )));
    }
    model.check_params(theta0)?;
    let tr: Vec<ParamTransform> = model.transforms();
    let to_theta = |phi: &[f64]| -> Vec<f64> { tr.iter().zip(phi).map(|(t, &p)| t.to_constrained(p)).collect() };
    let phi0: Vec<f64> = tr.iter().zip(theta0).map(|(t, &v)| t.to_unconstrained(v)).collect();
    let res = bfgs(
        &phi0,
        |phi| {
            let theta = to_theta(phi);
            let (f, g) = objective(method, model, &theta, y, cfg)?;
            Ok((f, g.iter().zip(&tr).zip(&theta).map(|((g, t), &v)| g * t.jacobian(v)).collect()))
        },
        &cfg.optim,
    )?;
    let theta = to_theta(&res.x);
    let standard_errors = if cfg.standard_errors {
        Some(inverse_fisher_se(model, &theta, y.len(), &cfg.assembly)?)
    } else {
        None
    };
    Ok(FitResult {
        method,
        grad_norm: res.grad_norm(),
        theta,
        nll: res.f,
        iterations: res.iterations,
        evaluations: res.evaluations,
        converged: res.converged,
        standard_errors,
    })
}

/// Square roots of the diagonal of the inverse expected Fisher information.
pub fn inverse_fisher_se(model: &dyn SpectralModel, theta: &[f64], n: usize, cfg: &AssemblyConfig) -> Result<Vec<f64>> {
    let info = fisher_exact(model, theta, n, cfg)?;
    let p = info.nrows();
    let inv: Mat<f64> = info
        .llt(faer::Side::Lower)
        .map_err(|_| Error::NotPositiveDefinite("Fisher information".into()))?
        .inverse();
    Ok((0..p).map(|j| inv[(j, j)].sqrt()).collect())
}

#[derive(Debug, Clone)]
pub struct TrialFit {
    pub trial: usize,
    pub method: Method,
    /// The failure message when the fit could not start.
    pub result: std::result::Result<FitResult, String>,
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub converged: usize,
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    /// max over trials of |θ̂ − θ̂^dense| per parameter, when dense was run.
    pub max_dev_from_mle: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StudyTable {
    pub param_count: usize,
    pub theta_true: Vec<f64>,
    pub fits: Vec<TrialFit>,
    pub summary: Vec<MethodSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct StudyConfig {
    pub fit: FitConfig,
    /// Starting point of every fit; θ_true when absent.
    pub theta0: Option<Vec<f64>>,
}

/// Simulate `trials` series from θ_true and fit each with every method.
pub fn estimator_study(
    model: &dyn SpectralModel,
    theta_true: &[f64],
    n: usize,
    trials: usize,
    methods: &[Method],
    seed: u64,
    cfg: &StudyConfig,
) -> Result<StudyTable> {
    if trials == 0 || methods.is_empty() {
        return Err(Error::Usage("a study needs at least one trial and one method".into()));
    }
    model.check_params(theta_true)?;
    let h = acov_hybrid(model, theta_true, n, &cfg.fit.assembly.quadrature)?;
    let samples = circulant_embedding_sample(&h.values, n, trials, seed)?;
    let theta0 = cfg.theta0.clone().unwrap_or_else(|| theta_true.to_vec());
    let fits: Vec<TrialFit> = samples
        .par_iter()
        .enumerate()
        .flat_map_iter(|(trial, y)| {
            methods.iter().map(move |&method| (trial, y, method))
        })
        .map(|(trial, y, method)| TrialFit {
            trial,
            method,
            result: fit(method, model, y, &theta0, &cfg.fit).map_err(|e| e.to_string()),
        })
        .collect();
    let p = model.param_count();
    let summary = methods
        .iter()
        .map(|&m| summarize(m, &fits, theta_true, methods.contains(&Method::Dense)))
        .collect();
    Ok(StudyTable { param_count: p, theta_true: theta_true.to_vec(), fits, summary })
}

fn summarize(method: Method, fits: &[TrialFit], truth: &[f64], with_dense: bool) -> MethodSummary {
    let p = truth.len();
    let ok: Vec<(usize, &FitResult)> = fits
        .iter()
        .filter(|f| f.method == method)
        .filter_map(|f| f.result.as_ref().ok().map(|r| (f.trial, r)))
        .collect();
    let trials = fits.iter().filter(|f| f.method == method).count();
    let m = ok.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| ok.iter().map(|(_, r)| r.theta[j]).sum::<f64>() / m).collect();
    let bias = (0..p).map(|j| mean[j] - truth[j]).collect();
    let sd = (0..p)
        .map(|j| {
            if ok.len() < 2 {
                return f64::NAN;
            }
            (ok.iter().map(|(_, r)| (r.theta[j] - mean[j]).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        })
        .collect();
    let max_dev_from_mle = with_dense.then(|| {
        let mut dev = vec![0.0f64; p];
        for (trial, r) in &ok {
            let dense = fits
                .iter()
                .find(|f| f.trial == *trial && f.method == Method::Dense)
                .and_then(|f| f.result.as_ref().ok());
            for j in 0..p {
                let d = dense.map_or(f64::NAN, |d| (r.theta[j] - d.theta[j]).abs());
                dev[j] = if d.is_nan() || dev[j].is_nan() { f64::NAN } else { dev[j].max(d) };
            }
        }
        dev
    });
    MethodSummary {
        method,
        trials,
        converged: ok.iter().filter(|(_, r)| r.converged).count(),
        bias,
        sd,
        max_dev_from_mle,
    }
}

/// Round-trippable float text.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl StudyTable {
    /// One row per trial and method.
    pub fn trials_csv(&self) -> String {
        let mut s = String::from("trial,method");
        for j in 0..self.param_count {
            let _ = write!(s, ",theta{j}");
        }
        s.push_str(",nll,iterations,converged,grad_norm,error\n");
        for f in &self.fits {
            let _ = write!(s, "{},{}", f.trial, f.method.name());
            match &f.result {
                Ok(r) => {
                    for v in &r.theta {
                        let _ = write!(s, ",{}", fmt_float(*v));
                    }
                    let _ = writeln!(
                        s,
                        ",{},{},{},{},",
                        fmt_float(r.nll),
                        r.iterations,
                        r.converged,
                        fmt_float(r.grad_norm)
                    );
                }
                Err(e) => {
                    for _ in 0..self.param_count {
                        s.push_str(",NaN");
                    }
                    let _ = writeln!(s, ",NaN,0,false,NaN,\"{}\"", e.replace('"', "'"));
                }
            }
        }
        s
    }

    /// One row per method and parameter.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,param,truth,bias,sd,max_dev_from_dense,trials,converged\n");
        for m in &self.summary {
            for j in 0..self.param_count {
                let dev = m.max_dev_from_mle.as_ref().map_or("NaN".to_string(), |d| fmt_float(d[j]));
                let _ = writeln!(
                    s,
                    "{},{j},{},{},{},{dev},{},{}",
                    m.method.name(),
                    fmt_float(self.theta_true[j]),
                    fmt_float(m.bias[j]),
                    fmt_float(m.sd[j]),
                    m.trials,
                    m.converged
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::WhiteNoise;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("mle".parse::<Method>(), Err(Error::Usage(_))));
    }

    #[test]
    fn white_noise_mle_all_methods() {
        let y: Vec<f64> = (0..64).map(|i| ((i * 29 % 17) as f64 - 8.0) / 2.0).collect();
        let want = y.iter().map(|v| v * v).sum::<f64>() / 64.0;
        for m in Method::ALL {
            let r = fit(m, &WhiteNoise, &y, &[1.0], &FitConfig::default()).unwrap();
            assert!(r.converged, "{m:?}: {r:?}");
            // Finite differences limit the Whittle variants.
            let tol = if matches!(m, Method::Whittle | Method::Debiased) { 1e-6 } else { 1e-8 };
            assert!((r.theta[0] - want).abs() <= tol * want, "{m:?}: {} vs {want}", r.theta[0]);
        }
    }

    #[test]
    fn wrong_parameter_count() {
        assert!(matches!(
            fit(Method::Dense, &WhiteNoise, &[1.0, 2.0], &[1.0, 2.0], &FitConfig::default()),
            Err(Error::Usage(_))
        ));
        assert!(fit(Method::Dense, &WhiteNoise, &[1.0, 2.0], &[-1.0], &FitConfig::default()).is_err());
    }

    #[test]
    fn fmt_float_round_trips() {
        for v in [0.1, -3.0e-300, 1.0 / 3.0, 6.02214076e23] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }
}
