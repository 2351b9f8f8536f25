//! BFGS with a backtracking line search.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when ‖g‖∞ ≤ grad_tol · max(1, |f|).
    pub grad_tol: f64,
    /// Largest ∞-norm of a trial step.
    pub max_step: f64,
    pub max_halvings: usize,
    /// Relative objective noise tolerated by the approximate Wolfe test.
    pub noise_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-8,
            max_step: 2.0,
            max_halvings: 40,
            noise_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl OptimResult {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes f from x0, where `fg` returns (f(x), ∇f(x)).
///
/// A trial point is accepted under the Armijo condition, or under the
/// approximate Wolfe condition of Hager and Zhang when f has flattened to
/// within `noise_tol·|f|` and only the gradient still carries information.
/// A failed evaluation during the line search halves the step. A failure at
/// x0 is returned as an error.
pub fn bfgs<F>(x0: &[f64], mut fg: F, opts: &BfgsOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let p = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x)?;
    if !finite(f, &g) {
        return Err(Error::Numerical(format!("objective or gradient not finite at the start: f = {f}, g = {g:?}")));
    }
    let mut evaluations = 1;
    // Inverse Hessian approximation, row-major.
    let mut h = vec![0.0; p * p];
    for i in 0..p {
        h[i * p + i] = 1.0;
    }
    let mut first = true;
    let mut flat = 0;
    let converged = |f: f64, g: &[f64]| inf_norm(g) <= opts.grad_tol * f.abs().max(1.0);
    for it in 0..opts.max_iter {
        if converged(f, &g) {
            return Ok(OptimResult { x, f, grad: g, iterations: it, evaluations, converged: true });
        }
        let mut d: Vec<f64> = (0..p).map(|i| -dot(&h[i * p..(i + 1) * p], &g)).collect();
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            h.iter_mut().enumerate().for_each(|(k, v)| *v = if k % (p + 1) == 0 { 1.0 } else { 0.0 });
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let dn = inf_norm(&d);
        let mut alpha = if dn > opts.max_step { opts.max_step / dn } else { 1.0 };
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            evaluations += 1;
            if let Ok((ft, gt)) = fg(&xt) {
                let dt = dot(&gt, &d);
                let armijo = ft <= f + 1e-4 * alpha * slope;
                let approx_wolfe = ft <= f + opts.noise_tol * f.abs() && dt >= 0.9 * slope && dt <= -0.8 * slope;
                if finite(ft, &gt) && (armijo || approx_wolfe) {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
            if alpha * dn < 1e-12 * inf_norm(&x).max(1.0) {
                break;
            }
        }
        let Some((xn, fnew, gn)) = accepted else {
            return Ok(OptimResult { x, f, grad: g, iterations: it, evaluations, converged: false });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if first {
                let scale = sy / dot(&yv, &yv);
                h.iter_mut().for_each(|v| *v *= scale);
                first = false;
            }
            let hy: Vec<f64> = (0..p).map(|i| dot(&h[i * p..(i + 1) * p], &yv)).collect();
            let yhy = dot(&yv, &hy);
            let rho = 1.0 / sy;
            for i in 0..p {
                for j in 0..p {
                    h[i * p + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        // Steps taken on gradient information alone cannot go on forever.
        flat = if fnew < f - opts.noise_tol * f.abs() { 0 } else { flat + 1 };
        let stalled = flat >= 20 || (f - fnew).abs() <= f64::EPSILON * f.abs().max(1.0) && inf_norm(&s) <= 1e-14;
        x = xn;
        f = fnew;
        g = gn;
        if stalled {
            let c = converged(f, &g);
            return Ok(OptimResult { x, f, grad: g, iterations: it + 1, evaluations, converged: c });
        }
    }
    let c = converged(f, &g);
    Ok(OptimResult { x, f, grad: g, iterations: opts.max_iter, evaluations, converged: c })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let fg = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        };
        let r = bfgs(&[-1.2, 1.0], fg, &BfgsOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn failures_shrink_the_step() {
        // The objective refuses x > 0.5; the minimum of (x − 0.4)² lies inside.
        let fg = |x: &[f64]| {
            if x[0] > 0.5 {
                return Err(Error::Indefinite("outside".into()));
            }
            Ok(((x[0] - 0.4).powi(2), vec![2.0 * (x[0] - 0.4)]))
        };
        let r = bfgs(&[-3.0], fg, &BfgsOptions::default()).unwrap();
        assert!(r.converged && (r.x[0] - 0.4).abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn noisy_objective_reaches_gradient_tolerance() {
        // f carries deterministic noise far above what a 1e-8 gradient buys.
        let fg = |x: &[f64]| {
            let noise = 1e-9 * (1e7 * x[0]).sin();
            Ok((1e4 + 0.5 * x[0] * x[0] + noise, vec![x[0]]))
        };
        let r = bfgs(&[1.0], fg, &BfgsOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        // The gradient blows up beyond x = 1; the step from 0 must be cut back.
        let fg = |x: &[f64]| {
            let g = if x[0] > 1.0 { f64::NAN } else { x[0] - 0.9 };
            Ok((0.5 * (x[0] - 0.9).powi(2), vec![g]))
        };
        let r = bfgs(&[-2.0], fg, &BfgsOptions::default()).unwrap();
        assert!(r.converged && (r.x[0] - 0.9).abs() < 1e-8, "{r:?}");
        let bad = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(bfgs(&[0.0], bad, &BfgsOptions::default()), Err(Error::Numerical(_))));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let fg = |x: &[f64]| Ok((x[0].powi(4), vec![4.0 * x[0].powi(3)]));
        let opts = BfgsOptions { max_iter: 2, ..Default::default() };
        let r = bfgs(&[5.0], fg, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
