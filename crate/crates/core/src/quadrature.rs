//! Gauss–Kronrod and Gauss–Legendre rules, and a globally adaptive
//! vector-valued integrator.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A Gauss–Kronrod pair expanded to full symmetric node lists on [−1, 1].
#[derive(Debug, Clone)]
pub struct KronrodRule {
    pub nodes: Vec<f64>,
    pub kronrod_weights: Vec<f64>,
    /// Zero at Kronrod-only nodes.
    pub gauss_weights: Vec<f64>,
}

const XGK15: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WG7: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];
const WGK15: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

impl KronrodRule {
    /// The 7-point Gauss / 15-point Kronrod pair.
    pub fn g7k15() -> Self {
        Self::from_half(&XGK15, &WGK15, &WG7)
    }

    /// Builds full node lists from the half tables (descending nodes, centre last).
    /// Gauss nodes sit at the odd 0-based positions of the half table.
    fn from_half(xgk: &[f64], wgk: &[f64], wg: &[f64]) -> Self {
        let h = xgk.len();
        let mut nodes = Vec::with_capacity(2 * h - 1);
        let mut kw = Vec::with_capacity(2 * h - 1);
        let mut gw = Vec::with_capacity(2 * h - 1);
        let gauss = |i: usize| if i % 2 == 1 { wg[(i - 1) / 2] } else { 0.0 };
        for i in 0..h - 1 {
            nodes.push(-xgk[i]);
            kw.push(wgk[i]);
            gw.push(gauss(i));
        }
        nodes.push(0.0);
        kw.push(wgk[h - 1]);
        gw.push(gauss(h - 1));
        for i in (0..h - 1).rev() {
            nodes.push(xgk[i]);
            kw.push(wgk[i]);
            gw.push(gauss(i));
        }
        KronrodRule {
            nodes,
            kronrod_weights: kw,
            gauss_weights: gw,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on P_m.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "Gauss–Legendre needs at least one node");
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = mf * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if m == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

/// Integration tolerance: a component is converged when its error is at most
/// max(abs_tol, rel_tol · ∫|f|).
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    pub abs_value: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Integral {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    pub abs_value: Vec<f64>,
    pub panels: usize,
}

/// Applies the rule to a vector-valued integrand on [a, b].
pub fn gk_panel<F>(rule: &KronrodRule, f: &F, a: f64, b: f64, ncomp: usize, buf: &mut [f64]) -> Panel
where
    F: Fn(f64, &mut [f64]),
{
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut k = vec![0.0; ncomp];
    let mut g = vec![0.0; ncomp];
    let mut ab = vec![0.0; ncomp];
    for i in 0..rule.len() {
        f(c + hw * rule.nodes[i], buf);
        let (wk, wg) = (rule.kronrod_weights[i], rule.gauss_weights[i]);
        for q in 0..ncomp {
            k[q] += wk * buf[q];
            g[q] += wg * buf[q];
            ab[q] += wk * buf[q].abs();
        }
    }
    Panel {
        a,
        b,
        value: k.iter().map(|v| v * hw).collect(),
        error: k.iter().zip(&g).map(|(k, g)| ((k - g) * hw).abs()).collect(),
        abs_value: ab.iter().map(|v| v * hw.abs()).collect(),
    }
}

struct Keyed {
    key: f64,
    panel: Panel,
}

impl PartialEq for Keyed {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Keyed {}
impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key)
    }
}

fn totals(panels: &[Panel], ncomp: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; ncomp];
    let mut e = vec![0.0; ncomp];
    let mut a = vec![0.0; ncomp];
    for p in panels {
        for q in 0..ncomp {
            v[q] += p.value[q];
            e[q] += p.error[q];
            a[q] += p.abs_value[q];
        }
    }
    (v, e, a)
}

fn targets(abs_value: &[f64], tol: Tolerance) -> Vec<f64> {
    abs_value.iter().map(|a| tol.abs.max(tol.rel * a)).collect()
}

fn priority(p: &Panel, target: &[f64]) -> f64 {
    p.error
        .iter()
        .zip(target)
        .map(|(e, t)| e / t.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Global bisection starting from the given panels. `eval` integrates one
/// sub-panel from scratch.
pub fn refine<E>(initial: Vec<Panel>, ncomp: usize, tol: Tolerance, max_panels: usize, eval: E) -> Result<Integral>
where
    E: Fn(f64, f64) -> Panel,
{
    let (mut value, mut error, mut abs_value) = totals(&initial, ncomp);
    let mut target = targets(&abs_value, tol);
    let done = |error: &[f64], target: &[f64]| error.iter().zip(target).all(|(e, t)| e <= t);
    if done(&error, &target) {
        return Ok(Integral {
            value,
            error,
            abs_value,
            panels: initial.len(),
        });
    }
    let mut heap: BinaryHeap<Keyed> = initial
        .into_iter()
        .map(|panel| Keyed {
            key: priority(&panel, &target),
            panel,
        })
        .collect();
    let mut count = heap.len();
    loop {
        if done(&error, &target) {
            break;
        }
        let worst = heap.pop().expect("heap never empties during refinement");
        let p = worst.panel;
        if count >= max_panels || (p.b - p.a).abs() < 8.0 * f64::EPSILON * p.a.abs().max(p.b.abs()).max(1e-300) {
            let estimate = error.iter().cloned().fold(0.0, f64::max);
            return Err(Error::Integration {
                message: format!("{count} panels used, limit {max_panels}"),
                lo: p.a,
                hi: p.b,
                estimate,
            });
        }
        let mid = 0.5 * (p.a + p.b);
        let left = eval(p.a, mid);
        let right = eval(mid, p.b);
        for q in 0..ncomp {
            value[q] += left.value[q] + right.value[q] - p.value[q];
            error[q] += left.error[q] + right.error[q] - p.error[q];
            abs_value[q] += left.abs_value[q] + right.abs_value[q] - p.abs_value[q];
        }
        // Guard against drift in the running error sum.
        for e in error.iter_mut() {
            *e = e.max(0.0);
        }
        target = targets(&abs_value, tol);
        for panel in [left, right] {
            heap.push(Keyed {
                key: priority(&panel, &target),
                panel,
            });
        }
        count += 1;
    }
    let panels: Vec<Panel> = heap.into_iter().map(|k| k.panel).collect();
    let (value, error, abs_value) = totals(&panels, ncomp);
    Ok(Integral {
        value,
        error,
        abs_value,
        panels: panels.len(),
    })
}

/// Adaptive integration of a vector-valued f over [a, b] starting from
/// `initial_panels` equal panels.
pub fn integrate<F>(
    f: F,
    a: f64,
    b: f64,
    ncomp: usize,
    initial_panels: usize,
    tol: Tolerance,
    max_panels: usize,
) -> Result<Integral>
where
    F: Fn(f64, &mut [f64]),
{
    let rule = KronrodRule::g7k15();
    let np = initial_panels.max(1);
    let width = (b - a) / np as f64;
    let mut buf = vec![0.0; ncomp];
    let initial: Vec<Panel> = (0..np)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = if i + 1 == np { b } else { lo + width };
            gk_panel(&rule, &f, lo, hi, ncomp, &mut buf)
        })
        .collect();
    refine(initial, ncomp, tol, max_panels, |lo, hi| {
        let mut buf = vec![0.0; ncomp];
        gk_panel(&rule, &f, lo, hi, ncomp, &mut buf)
    })
}

/// Scalar convenience wrapper returning (value, error estimate).
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, tol: Tolerance, max_panels: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let r = integrate(|x, out: &mut [f64]| out[0] = f(x), a, b, 1, 1, tol, max_panels)?;
    Ok((r.value[0], r.error[0]))
}
