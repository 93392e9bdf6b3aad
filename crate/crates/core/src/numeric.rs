//! Numerical building blocks: adaptive Gauss–Kronrod quadrature, Brent root
//! finding, Richardson-extrapolated finite differences and a few summary
//! statistics. Everything here works on plain `f64` closures.

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("integrand is not finite at {at}")]
    NonFiniteIntegrand { at: f64 },
    #[error("quadrature did not reach tolerance after {intervals} subintervals (estimate {estimate}, error {error})")]
    QuadratureLimit { intervals: usize, estimate: f64, error: f64 },
    #[error("integral over the half-line does not converge (partial sum {partial} up to {upto})")]
    Divergent { partial: f64, upto: f64 },
    #[error("root is not bracketed: f({a}) = {fa}, f({b}) = {fb}")]
    NotBracketed { a: f64, fa: f64, b: f64, fb: f64 },
    #[error("root finding did not converge in {iterations} iterations")]
    RootLimit { iterations: usize },
    #[error("finite-difference step {step} is too large at x = {x}")]
    StepTooLarge { x: f64, step: f64 },
    #[error("function is not finite at {at}")]
    NonFinite { at: f64 },
}

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Panel, NumericError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(NumericError::NonFiniteIntegrand { at: center });
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let (x1, x2) = (center - dx, center + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(NumericError::NonFiniteIntegrand { at: x1 });
        }
        if !f2.is_finite() {
            return Err(NumericError::NonFiniteIntegrand { at: x2 });
        }
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok(Panel { a, b, value: kronrod * half, error: abs((kronrod - gauss) * half) })
}

/// Globally adaptive Gauss–Kronrod quadrature of `f` over the finite
/// interval `[a, b]`. Stops once the summed error estimate is below
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64, NumericError> {
    const MAX_PANELS: usize = 4000;
    if a == b {
        return Ok(0.0);
    }
    let mut panels: Vec<Panel> = Vec::new();
    panels.push(gk15(&mut f, a, b)?);
    loop {
        let total: f64 = sum(panels.iter().map(|p| p.value));
        let err: f64 = panels.iter().map(|p| p.error).sum();
        let tol = abs_tol.max(rel_tol * abs(total));
        if err <= tol {
            return Ok(total);
        }
        if panels.len() >= MAX_PANELS {
            return Err(NumericError::QuadratureLimit { intervals: panels.len(), estimate: total, error: err });
        }
        let (worst, _) =
            panels.iter().enumerate().fold((0, -1.0), |acc, (i, p)| if p.error > acc.1 { (i, p.error) } else { acc });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // interval can no longer be split in floating point
            return Err(NumericError::QuadratureLimit { intervals: panels.len() + 1, estimate: total, error: err });
        }
        panels.push(gk15(&mut f, p.a, mid)?);
        panels.push(gk15(&mut f, mid, p.b)?);
    }
}

/// Integral of `f` over `[0, ∞)`.
///
/// The first panel is `[0, scale]`, then panels double in length. The tail
/// is accepted once a panel is negligible relative to the running total, or
/// when the panel contributions shrink geometrically and the extrapolated
/// remainder is negligible. Growing or non-finite contributions are
/// reported as divergence.
pub fn integrate_half_line<F: FnMut(f64) -> f64>(mut f: F, scale: f64, rel_tol: f64) -> Result<f64, NumericError> {
    const MAX_DOUBLINGS: usize = 400;
    let abs_floor = 1e-300;
    let mut total = match integrate(&mut f, 0.0, scale, rel_tol * 0.1, abs_floor) {
        Ok(v) => v,
        Err(NumericError::NonFiniteIntegrand { at }) => return Err(NumericError::NonFiniteIntegrand { at }),
        Err(e) => return Err(e),
    };
    let mut lo = scale;
    let mut contributions: Vec<f64> = Vec::new();
    let mut growing = 0usize;
    for _ in 0..MAX_DOUBLINGS {
        let hi = 2.0 * lo;
        if !hi.is_finite() {
            break;
        }
        let piece = match integrate(&mut f, lo, hi, rel_tol * 0.1, abs_floor) {
            Ok(v) => v,
            Err(NumericError::NonFiniteIntegrand { .. }) => {
                return Err(NumericError::Divergent { partial: total, upto: lo })
            }
            Err(e) => return Err(e),
        };
        total += piece;
        lo = hi;
        if !total.is_finite() {
            return Err(NumericError::Divergent { partial: total, upto: lo });
        }
        if abs(piece) <= 1e-3 * rel_tol * abs(total) || (piece == 0.0 && total == 0.0) {
            return Ok(total);
        }
        if let Some(&prev) = contributions.last() {
            if abs(piece) >= abs(prev) && prev != 0.0 {
                growing += 1;
                if growing >= 8 {
                    return Err(NumericError::Divergent { partial: total, upto: lo });
                }
            } else {
                growing = 0;
            }
        }
        contributions.push(piece);
        let n = contributions.len();
        if n >= 4 {
            let r1 = contributions[n - 1] / contributions[n - 2];
            let r2 = contributions[n - 2] / contributions[n - 3];
            let r3 = contributions[n - 3] / contributions[n - 4];
            let stable = r1 > 0.0 && r1 < 0.98 && abs(r1 - r2) <= 0.01 * abs(r1) && abs(r2 - r3) <= 0.01 * abs(r2);
            if stable {
                let tail = piece * r1 / (1.0 - r1);
                if abs(tail) <= rel_tol * abs(total) {
                    return Ok(total + tail);
                }
            }
        }
    }
    Err(NumericError::Divergent { partial: total, upto: lo })
}

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite
/// sign (or one of them zero).
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64, rtol: f64) -> Result<f64, NumericError> {
    const MAX_ITER: usize = 200;
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() {
        return Err(NumericError::NonFinite { at: a });
    }
    if !fb.is_finite() {
        return Err(NumericError::NonFinite { at: b });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if (fa > 0.0) == (fb > 0.0) {
        return Err(NumericError::NotBracketed { a, fa, b, fb });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if abs(fc) < abs(fb) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * abs(b) + 0.5 * xtol.max(rtol * abs(b));
        let m = 0.5 * (c - b);
        if abs(m) <= tol || fb == 0.0 {
            return Ok(b);
        }
        if abs(e) >= tol && abs(fa) > abs(fb) {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - abs(tol * q)).min(abs(e * q)) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if abs(d) > tol {
            d
        } else if m > 0.0 {
            tol
        } else {
            -tol
        };
        fb = f(b);
        if !fb.is_finite() {
            return Err(NumericError::NonFinite { at: b });
        }
    }
    Err(NumericError::RootLimit { iterations: MAX_ITER })
}

/// Derivative of order 1 or 2 by central differences with one level of
/// Richardson extrapolation (stencil reaches `x ± 2·step`).
///
/// When `lower` is given and the central stencil would cross it, a
/// one-sided forward stencil is used instead.
pub fn derivative<F: FnMut(f64) -> f64>(
    mut f: F,
    x: f64,
    order: u8,
    step: f64,
    lower: Option<f64>,
) -> Result<f64, NumericError> {
    let mut eval = |z: f64| {
        let v = f(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericError::NonFinite { at: z })
        }
    };
    let forward = matches!(lower, Some(lo) if x - 2.0 * step < lo);
    let h = step;
    let value = match (order, forward) {
        (1, false) => {
            let (fp1, fm1) = (eval(x + h)?, eval(x - h)?);
            let (fp2, fm2) = (eval(x + 2.0 * h)?, eval(x - 2.0 * h)?);
            let d1 = (fp1 - fm1) / (2.0 * h);
            let d2 = (fp2 - fm2) / (4.0 * h);
            (4.0 * d1 - d2) / 3.0
        }
        (2, false) => {
            let f0 = eval(x)?;
            let (fp1, fm1) = (eval(x + h)?, eval(x - h)?);
            let (fp2, fm2) = (eval(x + 2.0 * h)?, eval(x - 2.0 * h)?);
            let d1 = (fp1 - 2.0 * f0 + fm1) / (h * h);
            let d2 = (fp2 - 2.0 * f0 + fm2) / (4.0 * h * h);
            (4.0 * d1 - d2) / 3.0
        }
        (1, true) => {
            // second-order forward stencils at h and 2h, error O(h^2) -> O(h^3)
            let f0 = eval(x)?;
            let (f1, f2, f4) = (eval(x + h)?, eval(x + 2.0 * h)?, eval(x + 4.0 * h)?);
            let d1 = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
            let d2 = (-3.0 * f0 + 4.0 * f2 - f4) / (4.0 * h);
            (4.0 * d1 - d2) / 3.0
        }
        (2, true) => {
            let f0 = eval(x)?;
            let (f1, f2, f3) = (eval(x + h)?, eval(x + 2.0 * h)?, eval(x + 3.0 * h)?);
            let (f4, f6) = (eval(x + 4.0 * h)?, eval(x + 6.0 * h)?);
            let d1 = (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h);
            let d2 = (2.0 * f0 - 5.0 * f2 + 4.0 * f4 - f6) / (4.0 * h * h);
            (4.0 * d1 - d2) / 3.0
        }
        _ => return Err(NumericError::StepTooLarge { x, step }),
    };
    Ok(value)
}

/// Neumaier-compensated sum; deterministic for a fixed iteration order.
pub fn sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if abs(s) >= abs(v) {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

impl MeanEstimate {
    pub fn from_slice(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, n: 0 };
        }
        let mean = sum(values.iter().copied()) / n as f64;
        let var = if n > 1 { sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64 } else { 0.0 };
        Self { mean, std_error: sqrt(var / n as f64), n: n as u64 }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)
    }
}

/// Wilson score interval for a binomial proportion at the 95% level.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * sqrt(p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)) / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0).min(p) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0).max(p) };
    (lo, hi)
}

/// `n` points geometrically spaced on `[lo, hi]`, endpoints included.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let ratio = ln(hi / lo) / (n - 1) as f64;
            let mut g: Vec<f64> = (0..n).map(|i| lo * exp(ratio * i as f64)).collect();
            g[n - 1] = hi;
            g
        }
    }
}

/// `n` points linearly spaced on `[lo, hi]`, endpoints included.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}
