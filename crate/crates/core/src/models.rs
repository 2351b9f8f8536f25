//! Spectral density models on [-1/2, 1/2].
//!
//! A model supplies S_θ(ω), its ω-derivatives (one-sided where S is not
//! smooth) and its θ-partials, which in turn have ω-derivatives so that the
//! derivative matrices can be compressed with the same machinery.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Which one-sided limit an ω-derivative refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    TwoSided,
}

/// The function being differentiated: S itself or ∂S/∂θ_j.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Density,
    Partial(usize),
}

/// Map from an unconstrained coordinate to a parameter's validity interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamTransform {
    /// θ = exp(φ), for θ > 0.
    Log,
    /// θ = 1/(1 + exp(-φ)), for 0 < θ < 1.
    Logit,
}

impl ParamTransform {
    pub fn to_unconstrained(self, theta: f64) -> f64 {
        match self {
            ParamTransform::Log => theta.ln(),
            ParamTransform::Logit => (theta / (1.0 - theta)).ln(),
        }
    }

    pub fn to_constrained(self, phi: f64) -> f64 {
        match self {
            ParamTransform::Log => phi.exp(),
            ParamTransform::Logit => 1.0 / (1.0 + (-phi).exp()),
        }
    }

    /// dθ/dφ expressed through θ.
    pub fn jacobian(self, theta: f64) -> f64 {
        match self {
            ParamTransform::Log => theta,
            ParamTransform::Logit => theta * (1.0 - theta),
        }
    }
}

pub trait SpectralModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn param_count(&self) -> usize;
    /// Interior points where S is continuous but not smooth, ascending.
    fn rough_points(&self) -> Vec<f64>;
    fn is_symmetric(&self) -> bool;
    fn max_deriv_order(&self) -> usize;
    /// Validity box check.
    fn check_params(&self, theta: &[f64]) -> Result<()>;
    fn transforms(&self) -> Vec<ParamTransform>;
    /// Unchecked evaluation of the `order`-th ω-derivative of `comp`.
    ///
    /// `theta` must be valid and `omega` in [-1/2, 1/2]. At a rough point a
    /// `TwoSided` request falls back to the right limit.
    fn raw(&self, theta: &[f64], omega: f64, order: usize, side: Side, comp: Component) -> f64;
    /// True when derivatives come from finite differences.
    fn reduced_accuracy(&self) -> bool {
        false
    }
}

/// Look up a built-in model by name.
pub fn builtin(name: &str) -> Result<Arc<dyn SpectralModel>> {
    match name {
        "ar1" => Ok(Arc::new(Ar1)),
        "expdecay" => Ok(Arc::new(ExpDecay)),
        "white" => Ok(Arc::new(WhiteNoise)),
        other => Err(Error::Usage(format!(
            "unknown model '{other}' (expected ar1, expdecay or white)"
        ))),
    }
}

fn check_len(model: &dyn SpectralModel, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_count() {
        return Err(Error::ParamDomain(format!(
            "model '{}' takes {} parameters, got {}",
            model.name(),
            model.param_count(),
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::ParamDomain(format!("non-finite parameter in {theta:?}")));
    }
    Ok(())
}

fn check_omega(omega: f64) -> Result<()> {
    if !(-0.5..=0.5).contains(&omega) {
        return Err(Error::Domain(format!("frequency {omega} outside [-1/2, 1/2]")));
    }
    Ok(())
}

fn check_component(model: &dyn SpectralModel, comp: Component) -> Result<()> {
    if let Component::Partial(j) = comp {
        if j >= model.param_count() {
            return Err(Error::Usage(format!(
                "partial {j} requested from a {}-parameter model",
                model.param_count()
            )));
        }
    }
    Ok(())
}

/// S_θ(ω).
pub fn eval_sdf(model: &dyn SpectralModel, theta: &[f64], omega: f64) -> Result<f64> {
    check_len(model, theta)?;
    model.check_params(theta)?;
    check_omega(omega)?;
    Ok(model.raw(theta, omega, 0, Side::TwoSided, Component::Density))
}

/// One- or two-sided ω-derivative of S_θ.
pub fn eval_sdf_deriv(
    model: &dyn SpectralModel,
    theta: &[f64],
    omega: f64,
    order: usize,
    side: Side,
) -> Result<f64> {
    eval_component_deriv(model, theta, omega, order, side, Component::Density)
}

/// One- or two-sided ω-derivative of S_θ or of one of its θ-partials.
pub fn eval_component_deriv(
    model: &dyn SpectralModel,
    theta: &[f64],
    omega: f64,
    order: usize,
    side: Side,
    comp: Component,
) -> Result<f64> {
    check_len(model, theta)?;
    model.check_params(theta)?;
    check_omega(omega)?;
    check_component(model, comp)?;
    if order > model.max_deriv_order() {
        return Err(Error::Capability(format!(
            "model '{}' supplies derivatives up to order {}, requested {order}",
            model.name(),
            model.max_deriv_order()
        )));
    }
    if order > 0 && side == Side::TwoSided {
        let at_boundary = omega.abs() == 0.5 || model.rough_points().contains(&omega);
        if at_boundary {
            return Err(Error::Usage(format!(
                "two-sided derivative requested at {omega}, which is a rough point or endpoint"
            )));
        }
    }
    Ok(model.raw(theta, omega, order, side, comp))
}

/// ∂S/∂θ_j at ω for every j.
pub fn eval_sdf_grad_theta(model: &dyn SpectralModel, theta: &[f64], omega: f64) -> Result<Vec<f64>> {
    check_len(model, theta)?;
    model.check_params(theta)?;
    check_omega(omega)?;
    Ok((0..model.param_count())
        .map(|j| model.raw(theta, omega, 0, Side::TwoSided, Component::Partial(j)))
        .collect())
}

/// Validates θ and samples S on a 1000-point grid for NaN or negative values.
pub fn check_spectrum(model: &dyn SpectralModel, theta: &[f64]) -> Result<()> {
    check_len(model, theta)?;
    model.check_params(theta)?;
    let rough = model.rough_points();
    for (i, w) in rough.iter().enumerate() {
        if !(*w > -0.5 && *w < 0.5) || (i > 0 && rough[i - 1] >= *w) {
            return Err(Error::ModelValidity(format!(
                "rough points of '{}' must be strictly increasing inside (-1/2, 1/2): {rough:?}",
                model.name()
            )));
        }
    }
    for i in 0..1000 {
        let omega = -0.5 + i as f64 / 999.0;
        let s = model.raw(theta, omega, 0, Side::TwoSided, Component::Density);
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::ModelValidity(format!(
                "S({omega}) = {s} for model '{}' at θ = {theta:?}",
                model.name()
            )));
        }
    }
    Ok(())
}

fn binom(n: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Derivatives of cos(2πω) of order 0..=m: (2π)^i cos(2πω + iπ/2).
fn cos_derivs(omega: f64, m: usize) -> Vec<f64> {
    let (s, c) = (TWO_PI * omega).sin_cos();
    let mut out = Vec::with_capacity(m + 1);
    let mut scale = 1.0;
    for i in 0..=m {
        let v = match i % 4 {
            0 => c,
            1 => -s,
            2 => -c,
            _ => s,
        };
        out.push(scale * v);
        scale *= TWO_PI;
    }
    out
}

/// AR(1) spectrum θ1 / (1 − 2θ2 cos 2πω + θ2²).
#[derive(Debug, Clone, Copy)]
pub struct Ar1;

impl Ar1 {
    /// Derivatives 0..=m of 1/g and of g, with g = 1 − 2θ2 cos 2πω + θ2².
    fn recip_derivs(theta2: f64, omega: f64, m: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let cd = cos_derivs(omega, m);
        let g: Vec<f64> = (0..=m)
            .map(|i| {
                if i == 0 {
                    1.0 - 2.0 * theta2 * cd[0] + theta2 * theta2
                } else {
                    -2.0 * theta2 * cd[i]
                }
            })
            .collect();
        let mut f = vec![0.0; m + 1];
        f[0] = 1.0 / g[0];
        for j in 1..=m {
            let mut acc = 0.0;
            for i in 0..j {
                acc += binom(j, i) * f[i] * g[j - i];
            }
            f[j] = -acc / g[0];
        }
        (f, g, cd)
    }
}

impl SpectralModel for Ar1 {
    fn name(&self) -> &str {
        "ar1"
    }
    fn param_count(&self) -> usize {
        2
    }
    fn rough_points(&self) -> Vec<f64> {
        Vec::new()
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn max_deriv_order(&self) -> usize {
        10
    }
    fn check_params(&self, theta: &[f64]) -> Result<()> {
        check_len(self, theta)?;
        if !(theta[0] > 0.0) || !(theta[1] > 0.0 && theta[1] < 1.0) {
            return Err(Error::ParamDomain(format!(
                "ar1 requires θ1 > 0 and 0 < θ2 < 1, got {theta:?}"
            )));
        }
        Ok(())
    }
    fn transforms(&self) -> Vec<ParamTransform> {
        vec![ParamTransform::Log, ParamTransform::Logit]
    }
    fn raw(&self, theta: &[f64], omega: f64, order: usize, _side: Side, comp: Component) -> f64 {
        let (f, _, cd) = Self::recip_derivs(theta[1], omega, order);
        match comp {
            Component::Density => theta[0] * f[order],
            Component::Partial(0) => f[order],
            Component::Partial(_) => {
                // ∂S/∂θ2 = −θ1 q f², q = 2θ2 − 2cos 2πω.
                let q: Vec<f64> = (0..=order)
                    .map(|i| if i == 0 { 2.0 * theta[1] - 2.0 * cd[0] } else { -2.0 * cd[i] })
                    .collect();
                let f2: Vec<f64> = (0..=order)
                    .map(|j| (0..=j).map(|i| binom(j, i) * f[i] * f[j - i]).sum())
                    .collect();
                let qf2: f64 = (0..=order).map(|i| binom(order, i) * q[i] * f2[order - i]).sum();
                -theta[0] * qf2
            }
        }
    }
}

/// θ1 exp(−θ2|ω|), with a kink at ω = 0.
#[derive(Debug, Clone, Copy)]
pub struct ExpDecay;

impl SpectralModel for ExpDecay {
    fn name(&self) -> &str {
        "expdecay"
    }
    fn param_count(&self) -> usize {
        2
    }
    fn rough_points(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn max_deriv_order(&self) -> usize {
        10
    }
    fn check_params(&self, theta: &[f64]) -> Result<()> {
        check_len(self, theta)?;
        if !(theta[0] > 0.0) || !(theta[1] > 0.0) {
            return Err(Error::ParamDomain(format!(
                "expdecay requires θ1 > 0 and θ2 > 0, got {theta:?}"
            )));
        }
        Ok(())
    }
    fn transforms(&self) -> Vec<ParamTransform> {
        vec![ParamTransform::Log, ParamTransform::Log]
    }
    fn raw(&self, theta: &[f64], omega: f64, order: usize, side: Side, comp: Component) -> f64 {
        let left = omega < 0.0 || (omega == 0.0 && side == Side::Left);
        // Work on the right branch in x = |ω| and flip odd derivatives.
        let x = omega.abs();
        let sign = if left && order % 2 == 1 { -1.0 } else { 1.0 };
        let b = -theta[1];
        let e = (b * x).exp();
        let v = match comp {
            Component::Density => theta[0] * b.powi(order as i32) * e,
            Component::Partial(0) => b.powi(order as i32) * e,
            Component::Partial(_) => {
                // d^j/dx^j of −θ1 x e^{bx} = −θ1 (b^j x + j b^{j−1}) e^{bx}.
                let lower = if order == 0 { 0.0 } else { order as f64 * b.powi(order as i32 - 1) };
                -theta[0] * (b.powi(order as i32) * x + lower) * e
            }
        };
        sign * v
    }
}

/// Constant spectrum σ².
#[derive(Debug, Clone, Copy)]
pub struct WhiteNoise;

impl SpectralModel for WhiteNoise {
    fn name(&self) -> &str {
        "white"
    }
    fn param_count(&self) -> usize {
        1
    }
    fn rough_points(&self) -> Vec<f64> {
        Vec::new()
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn max_deriv_order(&self) -> usize {
        10
    }
    fn check_params(&self, theta: &[f64]) -> Result<()> {
        check_len(self, theta)?;
        if !(theta[0] > 0.0) {
            return Err(Error::ParamDomain(format!("white requires σ² > 0, got {theta:?}")));
        }
        Ok(())
    }
    fn transforms(&self) -> Vec<ParamTransform> {
        vec![ParamTransform::Log]
    }
    fn raw(&self, theta: &[f64], _omega: f64, order: usize, _side: Side, comp: Component) -> f64 {
        match (order, comp) {
            (0, Component::Density) => theta[0],
            (0, Component::Partial(_)) => 1.0,
            _ => 0.0,
        }
    }
}

pub type ValueFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type DerivFn = Arc<dyn Fn(&[f64], f64, usize, Side, Component) -> f64 + Send + Sync>;
pub type ValidityFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A user-supplied model.
///
/// With an analytic derivative closure it behaves like a built-in. With only
/// a value closure, ω-derivatives come from Richardson-extrapolated finite
/// differences (order ≤ 3) and θ-partials from central differences.
#[derive(Clone)]
pub struct CustomModel {
    name: String,
    param_count: usize,
    rough_points: Vec<f64>,
    symmetric: bool,
    value: ValueFn,
    deriv: Option<(DerivFn, usize)>,
    validity: ValidityFn,
    transforms: Vec<ParamTransform>,
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("name", &self.name)
            .field("param_count", &self.param_count)
            .field("rough_points", &self.rough_points)
            .field("symmetric", &self.symmetric)
            .field("analytic", &self.deriv.is_some())
            .finish()
    }
}

impl CustomModel {
    /// A value-only model. Parameters default to the log transform.
    pub fn from_values(
        name: &str,
        param_count: usize,
        rough_points: Vec<f64>,
        symmetric: bool,
        value: ValueFn,
        validity: ValidityFn,
    ) -> Result<Self> {
        if symmetric {
            for &x in &rough_points {
                if x != 0.0 && !rough_points.contains(&-x) {
                    return Err(Error::ModelValidity(format!(
                        "symmetric model '{name}' has rough point {x} without its mirror"
                    )));
                }
            }
        }
        Ok(CustomModel {
            name: name.to_string(),
            param_count,
            rough_points,
            symmetric,
            value,
            deriv: None,
            validity,
            transforms: vec![ParamTransform::Log; param_count],
        })
    }

    /// Attach analytic derivatives supported up to `max_order`.
    pub fn with_derivatives(mut self, deriv: DerivFn, max_order: usize) -> Self {
        self.deriv = Some((deriv, max_order));
        self
    }

    pub fn with_transforms(mut self, transforms: Vec<ParamTransform>) -> Self {
        self.transforms = transforms;
        self
    }

    fn component_value(&self, theta: &[f64], omega: f64, comp: Component) -> f64 {
        match comp {
            Component::Density => (self.value)(theta, omega),
            Component::Partial(j) => {
                let h = 1e-6 * theta[j].abs().max(1e-8);
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[j] += h;
                tm[j] -= h;
                ((self.value)(&tp, omega) - (self.value)(&tm, omega)) / (2.0 * h)
            }
        }
    }

    fn fd_deriv(&self, theta: &[f64], omega: f64, order: usize, side: Side, comp: Component) -> f64 {
        if order == 0 {
            return self.component_value(theta, omega, comp);
        }
        let f = |x: f64| self.component_value(theta, x, comp);
        // Forward, backward or central difference of the requested order at step h.
        let diff = |h: f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..=order {
                let c = binom(order, i) * if (order - i) % 2 == 0 { 1.0 } else { -1.0 };
                let x = match side {
                    Side::Right => omega + i as f64 * h,
                    Side::Left => omega - (order - i) as f64 * h,
                    Side::TwoSided => omega + (i as f64 - order as f64 / 2.0) * h,
                };
                acc += c * f(x.clamp(-0.5, 0.5));
            }
            acc / h.powi(order as i32)
        };
        let h = 10f64.powf(-3.0 / (order as f64 + 1.0)) * 0.1;
        let (d1, d2, d4) = (diff(h), diff(h / 2.0), diff(h / 4.0));
        match side {
            Side::TwoSided => {
                let r1 = (4.0 * d2 - d1) / 3.0;
                let r2 = (4.0 * d4 - d2) / 3.0;
                (16.0 * r2 - r1) / 15.0
            }
            _ => {
                let r1 = 2.0 * d2 - d1;
                let r2 = 2.0 * d4 - d2;
                (4.0 * r2 - r1) / 3.0
            }
        }
    }
}

impl SpectralModel for CustomModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn param_count(&self) -> usize {
        self.param_count
    }
    fn rough_points(&self) -> Vec<f64> {
        self.rough_points.clone()
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn max_deriv_order(&self) -> usize {
        match &self.deriv {
            Some((_, m)) => *m,
            None => 3,
        }
    }
    fn check_params(&self, theta: &[f64]) -> Result<()> {
        check_len(self, theta)?;
        if !(self.validity)(theta) {
            return Err(Error::ParamDomain(format!(
                "θ = {theta:?} outside the validity box of '{}'",
                self.name
            )));
        }
        Ok(())
    }
    fn transforms(&self) -> Vec<ParamTransform> {
        self.transforms.clone()
    }
    fn raw(&self, theta: &[f64], omega: f64, order: usize, side: Side, comp: Component) -> f64 {
        match &self.deriv {
            Some((d, _)) => d(theta, omega, order, side, comp),
            None => self.fd_deriv(theta, omega, order, side, comp),
        }
    }
    fn reduced_accuracy(&self) -> bool {
        self.deriv.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_peak_value() {
        let s = eval_sdf(&Ar1, &[1.0, 0.9], 0.0).unwrap();
        assert!((s - 100.0).abs() < 1e-11);
    }

    #[test]
    fn expdecay_values_and_kink() {
        let m = ExpDecay;
        assert_eq!(eval_sdf(&m, &[10.0, 10.0], 0.0).unwrap(), 10.0);
        let r = eval_sdf_deriv(&m, &[10.0, 10.0], 0.0, 1, Side::Right).unwrap();
        let l = eval_sdf_deriv(&m, &[10.0, 10.0], 0.0, 1, Side::Left).unwrap();
        assert_eq!(r, -100.0);
        assert_eq!(l, 100.0);
        let g = eval_sdf_grad_theta(&m, &[10.0, 10.0], 0.0).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn white_noise_is_flat() {
        let m = WhiteNoise;
        assert_eq!(eval_sdf(&m, &[2.0], 0.3).unwrap(), 2.0);
        assert_eq!(eval_sdf_deriv(&m, &[2.0], 0.1, 3, Side::TwoSided).unwrap(), 0.0);
        assert_eq!(eval_sdf_grad_theta(&m, &[2.0], -0.2).unwrap(), vec![1.0]);
    }

    #[test]
    fn ar1_partial_at_nyquist() {
        let g = eval_sdf_grad_theta(&Ar1, &[1.0, 0.9], 0.5).unwrap();
        assert!((g[0] - 1.0 / (1.0 + 1.8 + 0.81)).abs() < 1e-16);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(eval_sdf(&Ar1, &[1.0, 1.0], 0.0), Err(Error::ParamDomain(_))));
        assert!(matches!(eval_sdf(&ExpDecay, &[1.0, -1.0], 0.0), Err(Error::ParamDomain(_))));
        assert!(matches!(eval_sdf(&Ar1, &[1.0, 0.5], 0.6), Err(Error::Domain(_))));
        assert!(matches!(
            eval_sdf_deriv(&ExpDecay, &[1.0, 1.0], 0.0, 1, Side::TwoSided),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            eval_sdf_deriv(&Ar1, &[1.0, 0.5], 0.1, 11, Side::TwoSided),
            Err(Error::Capability(_))
        ));
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn transforms_round_trip() {
        for (t, x) in [(ParamTransform::Log, 3.5), (ParamTransform::Logit, 0.25)] {
            let phi = t.to_unconstrained(x);
            assert!((t.to_constrained(phi) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn custom_value_only_model() {
        let m = CustomModel::from_values(
            "ar1-fd",
            2,
            vec![],
            true,
            Arc::new(|t: &[f64], w: f64| t[0] / (1.0 - 2.0 * t[1] * (2.0 * PI * w).cos() + t[1] * t[1])),
            Arc::new(|t: &[f64]| t[0] > 0.0 && t[1] > 0.0 && t[1] < 1.0),
        )
        .unwrap();
        assert!(m.reduced_accuracy());
        assert_eq!(m.max_deriv_order(), 3);
        let theta = [1.0, 0.5];
        for order in 1..=2 {
            let fd = m.raw(&theta, 0.13, order, Side::TwoSided, Component::Density);
            let ex = Ar1.raw(&theta, 0.13, order, Side::TwoSided, Component::Density);
            assert!((fd - ex).abs() < 1e-5 * ex.abs().max(1.0), "order {order}: {fd} vs {ex}");
        }
        let fd = m.raw(&theta, 0.2, 1, Side::Right, Component::Density);
        let ex = Ar1.raw(&theta, 0.2, 1, Side::Right, Component::Density);
        assert!((fd - ex).abs() < 1e-5 * ex.abs());
        let p = m.raw(&theta, 0.2, 0, Side::TwoSided, Component::Partial(1));
        let pe = Ar1.raw(&theta, 0.2, 0, Side::TwoSided, Component::Partial(1));
        assert!((p - pe).abs() < 1e-7 * pe.abs());
    }
}
