//! Autocovariances h_k = ∫ S(ω) e^{2πikω} dω over [−1/2, 1/2].
//!
//! Low lags use adaptive Gauss–Kronrod quadrature; lags beyond the crossover
//! use the integration-by-parts expansion split at the rough points of S.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{check_spectrum, Component, Side, SpectralModel};
use crate::quadrature::{gauss_legendre, gk_panel, refine, KronrodRule, Panel, Tolerance};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Lags above this use the asymptotic expansion.
    pub crossover_lag: usize,
    /// Number of expansion terms m (derivatives 0..m−1).
    pub expansion_order: usize,
    pub max_panels: usize,
    /// Split quadrature and expansion at the model's rough points.
    pub split_rough_points: bool,
    /// Initial panel length in oscillation periods of e^{2πikω}; at most 2.
    pub periods_per_panel: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            rel_tol: 1e-13,
            abs_tol: 1e-15,
            crossover_lag: 2000,
            expansion_order: 5,
            max_panels: 10_000,
            split_rough_points: true,
            periods_per_panel: 0.25,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self, model: &dyn SpectralModel) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol >= 0.0) {
            return Err(Error::Usage(format!(
                "tolerances must satisfy rel_tol > 0, abs_tol >= 0 (got {}, {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.crossover_lag < 1 {
            return Err(Error::Usage("crossover lag must be at least 1".into()));
        }
        if self.expansion_order < 1 || self.expansion_order > model.max_deriv_order() {
            return Err(Error::Capability(format!(
                "expansion order {} outside 1..={} supported by '{}'",
                self.expansion_order,
                model.max_deriv_order(),
                model.name()
            )));
        }
        if !(self.periods_per_panel > 0.0 && self.periods_per_panel <= 2.0) {
            return Err(Error::Usage(format!(
                "periods per panel must lie in (0, 2], got {}",
                self.periods_per_panel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AcovTable {
    pub values: Vec<f64>,
    /// Lags above this came from the expansion.
    pub crossover_lag: usize,
    pub expansion_order: usize,
    pub max_imag_residual: f64,
    /// Set by the Gauss–Legendre reference when it has fewer than 4n nodes.
    pub aliasing_warning: bool,
}

impl AcovTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// "quad" or "expansion" for lag k.
    pub fn method(&self, k: usize) -> &'static str {
        if k <= self.crossover_lag {
            "quad"
        } else {
            "expansion"
        }
    }
}

fn effective_rough(model: &dyn SpectralModel, split: bool) -> Vec<f64> {
    if split {
        model.rough_points()
    } else {
        Vec::new()
    }
}

/// Integration segments, the fold weight, and whether the sine part is needed.
fn segments(model: &dyn SpectralModel, split: bool) -> (Vec<(f64, f64)>, f64, bool) {
    let rough = effective_rough(model, split);
    let mut pts = Vec::new();
    if model.is_symmetric() {
        pts.push(0.0);
        pts.extend(rough.iter().copied().filter(|&x| x > 0.0));
        pts.push(0.5);
        (pts.windows(2).map(|w| (w[0], w[1])).collect(), 2.0, false)
    } else {
        pts.push(-0.5);
        pts.extend(rough.iter().copied());
        pts.push(0.5);
        (pts.windows(2).map(|w| (w[0], w[1])).collect(), 1.0, true)
    }
}

/// e^{2πikx} with the argument reduced before scaling by 2π.
fn cis_lag(k: usize, x: f64) -> C64 {
    let kf = k as f64;
    let hi = kf * x;
    let lo = kf.mul_add(x, -hi);
    let t = hi.fract() + lo;
    let (s, c) = (TWO_PI * t).sin_cos();
    C64::new(c, s)
}

/// Integrand values at the nodes of 2^level equal panels of one segment.
struct PanelCache {
    a: f64,
    len: f64,
    levels: Vec<Vec<f64>>,
}

/// Per-node panel sums for every lag of a segment whose panel width is 1/M.
///
/// With nodes x_{p,i} = a + hw(1 + ξ_i) + p/M, the sum over panels
/// Σ_p f(x_{p,i}) e^{2πik p/M} is one length-M inverse DFT per node.
struct PanelSpectrum {
    a: f64,
    hw: f64,
    /// Indexed [(i·nc + q)·(max_lag + 1) + k].
    sums: Vec<C64>,
    /// ∫|f_q| over the segment.
    abs_int: Vec<f64>,
}

enum SegmentData {
    Spectrum(PanelSpectrum),
    Cache(PanelCache),
}

struct LagQuadrature<'a> {
    model: &'a dyn SpectralModel,
    theta: &'a [f64],
    comps: &'a [Component],
    rule: KronrodRule,
    segs: Vec<(f64, f64)>,
    weight: f64,
    sine: bool,
    data: Vec<SegmentData>,
    max_lag: usize,
    tol: Tolerance,
    max_panels: usize,
    periods_per_panel: f64,
}

impl<'a> LagQuadrature<'a> {
    fn new(
        model: &'a dyn SpectralModel,
        theta: &'a [f64],
        comps: &'a [Component],
        cfg: &QuadratureConfig,
        max_lag: usize,
    ) -> Self {
        let rule = KronrodRule::g7k15();
        let (segs, weight, sine) = segments(model, cfg.split_rough_points);
        let mut q = LagQuadrature {
            model,
            theta,
            comps,
            rule,
            segs,
            weight,
            sine,
            data: Vec::new(),
            max_lag,
            tol: Tolerance {
                rel: cfg.rel_tol,
                abs: cfg.abs_tol,
            },
            max_panels: cfg.max_panels,
            periods_per_panel: cfg.periods_per_panel,
        };
        let data = q
            .segs
            .iter()
            .map(|&(a, b)| {
                let len = b - a;
                let top = q.level_for(max_lag, len);
                let np = 1usize << top;
                let m = np as f64 / len;
                let mi = m.round();
                if (m - mi).abs() <= 1e-9 * m && mi as usize > max_lag {
                    SegmentData::Spectrum(q.panel_spectrum(a, len, top, mi as usize))
                } else {
                    SegmentData::Cache(PanelCache {
                        a,
                        len,
                        levels: (0..=top).map(|l| q.fill_level(a, len, l)).collect(),
                    })
                }
            })
            .collect();
        q.data = data;
        q
    }

    fn level_for(&self, k: usize, len: f64) -> usize {
        let panels = (k as f64 * len / self.periods_per_panel).ceil().max(1.0) as usize;
        panels.next_power_of_two().trailing_zeros() as usize
    }

    fn eval_comps(&self, x: f64, out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(self.comps) {
            *o = self.model.raw(self.theta, x, 0, Side::TwoSided, c);
        }
    }

    fn fill_level(&self, a: f64, len: f64, level: usize) -> Vec<f64> {
        let np = 1usize << level;
        let nc = self.comps.len();
        let r = self.rule.len();
        let hw = len / (2 * np) as f64;
        let mut out = vec![0.0; np * r * nc];
        out.par_chunks_mut(r * nc).enumerate().for_each(|(p, chunk)| {
            let c = a + hw * (2 * p + 1) as f64;
            for i in 0..r {
                self.eval_comps(c + hw * self.rule.nodes[i], &mut chunk[i * nc..(i + 1) * nc]);
            }
        });
        out
    }

    fn panel_spectrum(&self, a: f64, len: f64, level: usize, m: usize) -> PanelSpectrum {
        let vals = self.fill_level(a, len, level);
        let np = 1usize << level;
        let nc = self.comps.len();
        let r = self.rule.len();
        let hw = len / (2 * np) as f64;
        let keep = self.max_lag + 1;
        let fft = rustfft::FftPlanner::<f64>::new().plan_fft_inverse(m);
        let mut sums = vec![C64::new(0.0, 0.0); r * nc * keep];
        sums.par_chunks_mut(keep).enumerate().for_each_init(
            || vec![C64::new(0.0, 0.0); m],
            |buf, (iq, out)| {
                let (i, q) = (iq / nc, iq % nc);
                buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for p in 0..np {
                    buf[p].re = vals[(p * r + i) * nc + q];
                }
                fft.process(buf);
                out.copy_from_slice(&buf[..keep]);
            },
        );
        let mut abs_int = vec![0.0; nc];
        for p in 0..np {
            for i in 0..r {
                for q in 0..nc {
                    abs_int[q] += self.rule.kronrod_weights[i] * vals[(p * r + i) * nc + q].abs() * hw;
                }
            }
        }
        PanelSpectrum { a, hw, sums, abs_int }
    }

    /// Number of output components: one per model component per trig factor.
    fn width(&self) -> usize {
        self.comps.len() * if self.sine { 2 } else { 1 }
    }

    /// Integrand f(x)·cos(2πkx) (and ·sin) for direct evaluation.
    fn direct(&self, k: usize, x: f64, out: &mut [f64]) {
        let nc = self.comps.len();
        let z = cis_lag(k, x);
        let mut f = vec![0.0; nc];
        self.eval_comps(x, &mut f);
        for q in 0..nc {
            out[q] = f[q] * z.re;
            if self.sine {
                out[nc + q] = f[q] * z.im;
            }
        }
    }

    /// Composite K15 value, |K15 − G7| and tolerance scale from panel sums.
    fn spectrum_pass(&self, k: usize, sp: &PanelSpectrum) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nc = self.comps.len();
        let w = self.width();
        let keep = self.max_lag + 1;
        let mut kk = vec![C64::new(0.0, 0.0); nc];
        let mut gg = vec![C64::new(0.0, 0.0); nc];
        for i in 0..self.rule.len() {
            let z = cis_lag(k, sp.a + sp.hw * (1.0 + self.rule.nodes[i]));
            let (wk, wg) = (self.rule.kronrod_weights[i], self.rule.gauss_weights[i]);
            for q in 0..nc {
                let v = z * sp.sums[(i * nc + q) * keep + k];
                kk[q] += wk * v;
                gg[q] += wg * v;
            }
        }
        let mut total = vec![0.0; w];
        let mut err = vec![0.0; w];
        let mut absv = vec![0.0; w];
        for q in 0..nc {
            total[q] = kk[q].re * sp.hw;
            err[q] = ((kk[q].re - gg[q].re) * sp.hw).abs();
            absv[q] = sp.abs_int[q];
            if self.sine {
                total[nc + q] = kk[q].im * sp.hw;
                err[nc + q] = ((kk[q].im - gg[q].im) * sp.hw).abs();
                absv[nc + q] = sp.abs_int[q];
            }
        }
        (total, err, absv)
    }

    /// Uniform-panel pass over one segment using cached integrand values.
    /// Returns per-panel results only when `keep` is set.
    fn uniform_pass(
        &self,
        k: usize,
        cache: &PanelCache,
        keep: bool,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<Panel>) {
        let level = self.level_for(k, cache.len).min(cache.levels.len() - 1);
        let vals = &cache.levels[level];
        let np = 1usize << level;
        let nc = self.comps.len();
        let w = self.width();
        let r = self.rule.len();
        let hw = cache.len / (2 * np) as f64;
        let node_phase: Vec<C64> = self.rule.nodes.iter().map(|&x| cis_lag(k, hw * x)).collect();
        let step = cis_lag(k, 2.0 * hw);
        let mut total = vec![0.0; w];
        let mut err = vec![0.0; w];
        let mut absv = vec![0.0; w];
        let mut panels = Vec::new();
        let mut cur = C64::new(1.0, 0.0);
        let mut kk = vec![0.0; w];
        let mut gg = vec![0.0; w];
        let mut aa = vec![0.0; w];
        for p in 0..np {
            if p % 32 == 0 {
                cur = cis_lag(k, cache.a + hw * (2 * p + 1) as f64);
            }
            kk.iter_mut().for_each(|v| *v = 0.0);
            gg.iter_mut().for_each(|v| *v = 0.0);
            aa.iter_mut().for_each(|v| *v = 0.0);
            let base = p * r * nc;
            for i in 0..r {
                let z = cur * node_phase[i];
                let (wk, wg) = (self.rule.kronrod_weights[i], self.rule.gauss_weights[i]);
                let f = &vals[base + i * nc..base + (i + 1) * nc];
                for q in 0..nc {
                    let v = f[q] * z.re;
                    kk[q] += wk * v;
                    gg[q] += wg * v;
                    aa[q] += wk * v.abs();
                    if self.sine {
                        let v = f[q] * z.im;
                        kk[nc + q] += wk * v;
                        gg[nc + q] += wg * v;
                        aa[nc + q] += wk * v.abs();
                    }
                }
            }
            for q in 0..w {
                total[q] += kk[q] * hw;
                err[q] += ((kk[q] - gg[q]) * hw).abs();
                absv[q] += aa[q] * hw;
            }
            if keep {
                let a = cache.a + hw * (2 * p) as f64;
                panels.push(Panel {
                    a,
                    b: a + 2.0 * hw,
                    value: kk.iter().map(|v| v * hw).collect(),
                    error: kk.iter().zip(&gg).map(|(k, g)| ((k - g) * hw).abs()).collect(),
                    abs_value: aa.iter().map(|v| v * hw).collect(),
                });
            }
            cur *= step;
        }
        (total, err, absv, panels)
    }

    /// Initial panels for bisection when the batched pass is not accurate enough.
    fn direct_panels(&self, k: usize, s: usize) -> Vec<Panel> {
        let (a, b) = self.segs[s];
        let np = 1usize << self.level_for(k, b - a);
        let w = self.width();
        let h = (b - a) / np as f64;
        let f = |x: f64, o: &mut [f64]| self.direct(k, x, o);
        let mut buf = vec![0.0; w];
        (0..np)
            .map(|p| {
                let lo = a + h * p as f64;
                let hi = if p + 1 == np { b } else { lo + h };
                gk_panel(&self.rule, &f, lo, hi, w, &mut buf)
            })
            .collect()
    }

    /// ∫ f_q(ω) e^{2πikω} dω for every component, as (re, im) pairs.
    fn lag(&self, k: usize) -> Result<Vec<C64>> {
        let nc = self.comps.len();
        let w = self.width();
        let mut out = vec![C64::new(0.0, 0.0); nc];
        for s in 0..self.segs.len() {
            let (total, err, absv) = match &self.data[s] {
                SegmentData::Spectrum(sp) => self.spectrum_pass(k, sp),
                SegmentData::Cache(c) => {
                    let (t, e, a, _) = self.uniform_pass(k, c, false);
                    (t, e, a)
                }
            };
            let ok = (0..w).all(|q| err[q] <= self.tol.abs.max(self.tol.rel * absv[q]));
            let value = if ok {
                total
            } else {
                let panels = match &self.data[s] {
                    SegmentData::Cache(c) => self.uniform_pass(k, c, true).3,
                    SegmentData::Spectrum(_) => self.direct_panels(k, s),
                };
                let f = |x: f64, o: &mut [f64]| self.direct(k, x, o);
                let rule = &self.rule;
                refine(panels, w, self.tol, self.max_panels, |lo, hi| {
                    let mut buf = vec![0.0; w];
                    gk_panel(rule, &f, lo, hi, w, &mut buf)
                })?
                .value
            };
            for q in 0..nc {
                out[q].re += self.weight * value[q];
                if self.sine {
                    out[q].im += self.weight * value[nc + q];
                }
            }
        }
        Ok(out)
    }
}

/// Jump coefficients of the expansion at each boundary point.
struct Expansion {
    /// (x, c_j for j < m) per component.
    points: Vec<(f64, Vec<Vec<f64>>)>,
    order: usize,
}

impl Expansion {
    fn new(model: &dyn SpectralModel, theta: &[f64], comps: &[Component], order: usize, split: bool) -> Self {
        let rough = effective_rough(model, split);
        let raw = |x: f64, j: usize, side: Side, c: Component| model.raw(theta, x, j, side, c);
        let mut points = Vec::new();
        // The two endpoints share e^{±iπk} = (−1)^k and are merged at x = 1/2.
        let ends: Vec<Vec<f64>> = comps
            .iter()
            .map(|&c| {
                (0..order)
                    .map(|j| raw(0.5, j, Side::Left, c) - raw(-0.5, j, Side::Right, c))
                    .collect()
            })
            .collect();
        points.push((0.5, ends));
        for &x in &rough {
            let jumps = comps
                .iter()
                .map(|&c| {
                    (0..order)
                        .map(|j| raw(x, j, Side::Left, c) - raw(x, j, Side::Right, c))
                        .collect()
                })
                .collect();
            points.push((x, jumps));
        }
        Expansion { points, order }
    }

    /// Complex expansion value per component at lag k ≥ 1.
    fn eval(&self, k: usize, out: &mut [C64]) {
        let u = 1.0 / (TWO_PI * k as f64);
        // t_j = (−2πik)^{−(j+1)} = (i u)^{j+1}
        let mut t = Vec::with_capacity(self.order);
        let mut cur = C64::new(0.0, u);
        for _ in 0..self.order {
            t.push(cur);
            cur *= C64::new(0.0, u);
        }
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (x, jumps) in &self.points {
            let e = if *x == 0.5 {
                C64::new(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
            } else {
                cis_lag(k, *x)
            };
            for (o, c) in out.iter_mut().zip(jumps) {
                let inner: C64 = t.iter().zip(c).map(|(t, c)| t * c).sum();
                *o -= e * inner;
            }
        }
    }
}

fn check_derivs(model: &dyn SpectralModel, order: usize) -> Result<()> {
    if order == 0 || order > model.max_deriv_order() {
        return Err(Error::Capability(format!(
            "expansion order {order} outside 1..={} supported by '{}'",
            model.max_deriv_order(),
            model.name()
        )));
    }
    Ok(())
}

/// Asymptotic value of h_k from the expansion split at the model's rough points.
pub fn asymptotic_tail(model: &dyn SpectralModel, theta: &[f64], k: usize, m: usize) -> Result<f64> {
    asymptotic_tail_complex(model, theta, k, m, Component::Density, true).map(|z| z.re)
}

/// Complex expansion value; the imaginary part is the realification residual.
pub fn asymptotic_tail_complex(
    model: &dyn SpectralModel,
    theta: &[f64],
    k: usize,
    m: usize,
    comp: Component,
    split: bool,
) -> Result<C64> {
    model.check_params(theta)?;
    check_derivs(model, m)?;
    if k == 0 {
        return Err(Error::Usage("the expansion needs lag k >= 1".into()));
    }
    let e = Expansion::new(model, theta, &[comp], m, split);
    let mut out = [C64::new(0.0, 0.0)];
    e.eval(k, &mut out);
    Ok(out[0])
}

/// h_0..h_{n−1} for S.
pub fn acov_hybrid(model: &dyn SpectralModel, theta: &[f64], n: usize, cfg: &QuadratureConfig) -> Result<AcovTable> {
    Ok(acov_tables(model, theta, n, &[Component::Density], cfg)?.remove(0))
}

/// Autocovariance tables for several components sharing integrand evaluations.
pub fn acov_tables(
    model: &dyn SpectralModel,
    theta: &[f64],
    n: usize,
    comps: &[Component],
    cfg: &QuadratureConfig,
) -> Result<Vec<AcovTable>> {
    if n == 0 {
        return Err(Error::Size("autocovariance table of length 0".into()));
    }
    check_spectrum(model, theta)?;
    cfg.validate(model)?;
    for &c in comps {
        if let Component::Partial(j) = c {
            if j >= model.param_count() {
                return Err(Error::Usage(format!("partial {j} of a {}-parameter model", model.param_count())));
            }
        }
    }
    let nc = comps.len();
    let kq = cfg.crossover_lag.min(n - 1);
    let quad = LagQuadrature::new(model, theta, comps, cfg, kq);
    let low: Vec<Vec<C64>> = (0..=kq).into_par_iter().map(|k| quad.lag(k)).collect::<Result<_>>()?;

    let mut values = vec![vec![0.0; n]; nc];
    let mut imag = vec![0.0f64; nc];
    for (k, row) in low.iter().enumerate() {
        for q in 0..nc {
            values[q][k] = row[q].re;
            imag[q] = imag[q].max(row[q].im.abs());
        }
    }
    if n - 1 > kq {
        let exp = Expansion::new(model, theta, comps, cfg.expansion_order, cfg.split_rough_points);
        let tail: Vec<Vec<C64>> = (kq + 1..n)
            .into_par_iter()
            .map_init(
                || vec![C64::new(0.0, 0.0); nc],
                |buf, k| {
                    exp.eval(k, buf);
                    buf.clone()
                },
            )
            .collect();
        for (i, row) in tail.iter().enumerate() {
            for q in 0..nc {
                values[q][kq + 1 + i] = row[q].re;
                imag[q] = imag[q].max(row[q].im.abs());
            }
        }
    }
    let tables: Vec<AcovTable> = values
        .into_iter()
        .zip(imag)
        .map(|(values, max_imag_residual)| AcovTable {
            values,
            crossover_lag: kq,
            expansion_order: cfg.expansion_order,
            max_imag_residual,
            aliasing_warning: false,
        })
        .collect();
    for (t, c) in tables.iter().zip(comps) {
        if *c == Component::Density && model.is_symmetric() {
            let h0 = t.values[0];
            if !(h0 > 0.0) {
                return Err(Error::ModelValidity(format!("h_0 = {h0} is not positive")));
            }
            if t.max_imag_residual > 1e-12 * h0 {
                return Err(Error::Numerical(format!(
                    "imaginary residual {:e} exceeds 1e-12·h_0",
                    t.max_imag_residual
                )));
            }
        }
    }
    Ok(tables)
}

/// Direct panel-wise Gauss–Legendre sum h_k = Σ α_j e^{2πikω_j} S(ω_j).
///
/// Panels are distributed over the segments between rough points in
/// proportion to their length. Fewer than n nodes is refused; fewer than 4n
/// sets `aliasing_warning`.
pub fn acov_gauss_legendre_reference(
    model: &dyn SpectralModel,
    theta: &[f64],
    n: usize,
    nodes_per_panel: usize,
    panels: usize,
) -> Result<AcovTable> {
    check_spectrum(model, theta)?;
    if nodes_per_panel < 2 {
        return Err(Error::Usage("nodes_per_panel must be at least 2".into()));
    }
    if n > 16384 {
        return Err(Error::Size(format!("reference path capped at n <= 16384, got {n}")));
    }
    let mut bounds = vec![-0.5];
    bounds.extend(model.rough_points());
    bounds.push(0.5);
    let nseg = bounds.len() - 1;
    let panels = panels.max(nseg);
    let total_nodes = panels * nodes_per_panel;
    if total_nodes < n {
        return Err(Error::Usage(format!(
            "{total_nodes} quadrature nodes for {n} lags would alias"
        )));
    }
    let (gx, gw) = gauss_legendre(nodes_per_panel);
    let mut nodes = Vec::with_capacity(total_nodes);
    let mut assigned = 0;
    for s in 0..nseg {
        let (a, b) = (bounds[s], bounds[s + 1]);
        let np = if s + 1 == nseg {
            panels - assigned
        } else {
            (((b - a) * panels as f64).round() as usize).clamp(1, panels - assigned - (nseg - s - 1))
        };
        assigned += np;
        let hw = (b - a) / (2 * np) as f64;
        for p in 0..np {
            let c = a + hw * (2 * p + 1) as f64;
            for (x, w) in gx.iter().zip(&gw) {
                let om = c + hw * x;
                nodes.push((om, w * hw * model.raw(theta, om, 0, Side::TwoSided, Component::Density)));
            }
        }
    }
    let chunk = 256;
    let partial: Vec<(Vec<f64>, f64)> = nodes
        .par_chunks(chunk)
        .map(|ch| {
            let mut acc = vec![0.0; n];
            let mut im = vec![0.0; n];
            for &(om, wf) in ch {
                let step = C64::from_polar(1.0, TWO_PI * om);
                let mut z = C64::new(wf, 0.0);
                for k in 0..n {
                    if k % 64 == 0 {
                        z = cis_lag(k, om) * wf;
                    }
                    acc[k] += z.re;
                    im[k] += z.im;
                    z *= step;
                }
            }
            let m = im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (acc, m)
        })
        .collect();
    let mut values = vec![0.0; n];
    let mut imag_bound = 0.0f64;
    for (acc, m) in partial {
        for (v, a) in values.iter_mut().zip(acc) {
            *v += a;
        }
        imag_bound += m;
    }
    Ok(AcovTable {
        values,
        crossover_lag: n - 1,
        expansion_order: 0,
        max_imag_residual: if model.is_symmetric() { 0.0 } else { imag_bound },
        aliasing_warning: total_nodes < 4 * n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Ar1, ExpDecay, WhiteNoise};

    fn h1(theta: &[f64], k: usize) -> f64 {
        theta[0] * theta[1].powi(k as i32) / (1.0 - theta[1] * theta[1])
    }

    fn h2(theta: &[f64], k: usize) -> f64 {
        let (a, b) = (theta[0], theta[1]);
        let w = TWO_PI * k as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        2.0 * a * b * (1.0 - sign * (-b / 2.0).exp()) / (b * b + w * w)
    }

    #[test]
    fn white_noise_table() {
        let t = acov_hybrid(&WhiteNoise, &[2.0], 4, &QuadratureConfig::default()).unwrap();
        assert!((t.values[0] - 2.0).abs() < 1e-15);
        for v in &t.values[1..] {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn ar1_small_table() {
        let t = acov_hybrid(&Ar1, &[1.0, 0.9], 3, &QuadratureConfig::default()).unwrap();
        let expect = [5.263157894736842, 4.736842105263158, 4.263157894736842];
        for (a, b) in t.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn expdecay_variance() {
        let t = acov_hybrid(&ExpDecay, &[10.0, 10.0], 1, &QuadratureConfig::default()).unwrap();
        assert!((t.values[0] - 1.9865241060018290).abs() < 1e-14);
    }

    #[test]
    fn tails_match_closed_forms() {
        let v = asymptotic_tail(&Ar1, &[1.0, 0.9], 5000, 5).unwrap();
        assert!((v - h1(&[1.0, 0.9], 5000)).abs() <= 1e-16);
        let v = asymptotic_tail(&ExpDecay, &[10.0, 10.0], 3000, 5).unwrap();
        let e = h2(&[10.0, 10.0], 3000);
        assert!(((v - e) / e).abs() < 1e-12, "{v} vs {e}");
        assert!((e - 5.6e-7).abs() < 1e-7);
        for k in [1usize, 2, 17] {
            assert_eq!(asymptotic_tail(&WhiteNoise, &[3.0], k, 4).unwrap(), 0.0);
        }
    }

    #[test]
    fn hybrid_uses_tail_beyond_crossover() {
        let cfg = QuadratureConfig {
            crossover_lag: 600,
            ..Default::default()
        };
        let theta = [10.0, 10.0];
        let t = acov_hybrid(&ExpDecay, &theta, 1500, &cfg).unwrap();
        assert_eq!(t.method(600), "quad");
        assert_eq!(t.method(601), "expansion");
        for k in 0..1500 {
            let e = h2(&theta, k);
            assert!((t.values[k] - e).abs() <= 1e-11 * e.abs() + 1e-14 * t.values[0], "k={k}");
        }
    }

    #[test]
    fn partial_tables_match_derivatives_of_closed_form() {
        let theta = [2.0, 0.6];
        let cfg = QuadratureConfig::default();
        let ts = acov_tables(&Ar1, &theta, 40, &[Component::Partial(0), Component::Partial(1)], &cfg).unwrap();
        for k in 0..40 {
            let d1 = h1(&theta, k) / theta[0];
            let (b, kf) = (theta[1], k as f64);
            let d2 = theta[0] * (kf * b.powf(kf - 1.0) * (1.0 - b * b) + 2.0 * b * b.powf(kf)) / (1.0 - b * b).powi(2);
            assert!((ts[0].values[k] - d1).abs() < 1e-12 * d1.abs().max(1.0));
            assert!((ts[1].values[k] - d2).abs() < 1e-12 * d2.abs().max(1.0), "k={k}");
        }
    }

    #[test]
    fn reference_path_limits() {
        assert!(acov_gauss_legendre_reference(&Ar1, &[1.0, 0.5], 100, 4, 10).is_err());
        let w = acov_gauss_legendre_reference(&WhiteNoise, &[2.5], 8, 4, 3).unwrap();
        assert!(w.aliasing_warning);
        let t = acov_gauss_legendre_reference(&WhiteNoise, &[2.5], 8, 8, 8).unwrap();
        assert!(!t.aliasing_warning);
        assert!((t.values[0] - 2.5).abs() < 1e-14);
        for v in &t.values[1..] {
            assert!(v.abs() < 1e-14);
        }
    }
}
