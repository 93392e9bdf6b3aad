//! Rate calculus: a concave rate function φ, its integral
//! Φ(s) = ∫₁ˢ du/φ(u), the inverse Ψ = Φ⁻¹, and the time-space function
//! G(t, u) = Ψ(Φ(u) + t).
//!
//! Also houses Young pairs and the product decomposition
//! h(t)·U(x) ≤ G(t, V(x)) that turns a drift certificate into a bound.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprIn};
use crate::lyapunov::LyapunovSpec;
use crate::numeric::{self, abs, exp, geometric_grid, linear_grid, ln, powf, NumericError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("argument {0} is below 1")]
    BelowOne(f64),
    #[error("argument {0} is negative")]
    Negative(f64),
    #[error("invalid rate function: {0}")]
    Invalid(String),
    #[error("value {value} is outside the range of Φ (sup = {sup})")]
    PsiDomain { value: f64, sup: f64 },
    #[error("rate function evaluation failed at s = {0}")]
    Eval(f64),
    #[error("quadrature: {0}")]
    Numeric(#[from] NumericError),
    #[error("decomposition audit failed at t = {t}, x = {x}: h·U = {product} > G = {g}")]
    AuditFailed { t: f64, x: f64, product: f64, g: f64 },
    #[error("decomposition is not supported for {0}")]
    Unsupported(&'static str),
    #[error("invalid Young exponent p = {0}; need p > 1")]
    YoungExponent(f64),
}

/// The rate function φ on [1, ∞).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PhiSpec {
    /// φ(s) = k·s
    Linear { k: f64 },
    /// φ(s) = c·s^γ with γ ∈ (0, 1)
    Power { c: f64, gamma: f64 },
    /// φ(s) = k
    Constant { k: f64 },
    /// φ given as an expression in `s`
    Custom { expr: ExprIn<'s'> },
}

impl PhiSpec {
    pub fn custom(source: &str) -> Result<Self, crate::expr::ParseError> {
        Ok(PhiSpec::Custom { expr: ExprIn(Expr::parse_in(source, 's')?) })
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            PhiSpec::Linear { .. } => "linear",
            PhiSpec::Power { .. } => "power",
            PhiSpec::Constant { .. } => "constant",
            PhiSpec::Custom { .. } => "custom",
        }
    }

    /// Checks positivity, monotonicity and concavity. Named families are
    /// checked on their parameters, custom ones on a geometric grid of
    /// [1, 10⁶].
    pub fn validate(&self) -> Result<(), RateError> {
        let bad = |m: String| Err(RateError::Invalid(m));
        match self {
            PhiSpec::Linear { k } | PhiSpec::Constant { k } => {
                if !(k.is_finite() && *k > 0.0) {
                    return bad(format!("coefficient k = {k} must be positive"));
                }
            }
            PhiSpec::Power { c, gamma } => {
                if !(c.is_finite() && *c > 0.0) {
                    return bad(format!("coefficient c = {c} must be positive"));
                }
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return bad(format!("exponent gamma = {gamma} must lie in (0, 1)"));
                }
            }
            PhiSpec::Custom { expr } => {
                let grid = geometric_grid(1.0, 1e6, 241);
                let mut vals = Vec::with_capacity(grid.len());
                for &s in &grid {
                    match expr.0.eval(s) {
                        Ok(v) if v > 0.0 => vals.push(v),
                        Ok(v) => return bad(format!("φ({s}) = {v} is not positive")),
                        Err(e) => return bad(format!("φ({s}): {e}")),
                    }
                }
                let mut prev_slope = f64::INFINITY;
                for i in 1..grid.len() {
                    let tol = 1e-9 * vals[i].abs().max(1.0);
                    if vals[i] < vals[i - 1] - tol {
                        return bad(format!("φ decreases near s = {}", grid[i]));
                    }
                    let slope = (vals[i] - vals[i - 1]) / (grid[i] - grid[i - 1]);
                    if slope > prev_slope + 1e-7 * prev_slope.abs().max(1e-12) + 1e-12 {
                        return bad(format!("φ is not concave near s = {}", grid[i]));
                    }
                    prev_slope = slope;
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> Result<f64, RateError> {
        if !(s >= 1.0) {
            return Err(RateError::BelowOne(s));
        }
        self.eval_unchecked(s)
    }

    pub(crate) fn eval_unchecked(&self, s: f64) -> Result<f64, RateError> {
        Ok(match self {
            PhiSpec::Linear { k } => k * s,
            PhiSpec::Power { c, gamma } => c * powf(s, *gamma),
            PhiSpec::Constant { k } => *k,
            PhiSpec::Custom { expr } => expr.0.eval(s).map_err(|_| RateError::Eval(s))?,
        })
    }

    /// Multiplies the leading coefficient by `factor`.
    pub fn scaled(&self, factor: f64) -> Option<Self> {
        Some(match self {
            PhiSpec::Linear { k } => PhiSpec::Linear { k: k * factor },
            PhiSpec::Power { c, gamma } => PhiSpec::Power { c: c * factor, gamma: *gamma },
            PhiSpec::Constant { k } => PhiSpec::Constant { k: k * factor },
            PhiSpec::Custom { .. } => return None,
        })
    }
}

/// Evaluates φ at `s ≥ 1`.
pub fn phi_eval(spec: &PhiSpec, s: f64) -> Result<f64, RateError> {
    spec.eval(s)
}

/// A validated rate function with its Φ / Ψ / G calculus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateKernel {
    pub phi: PhiSpec,
    /// Φ(∞); infinite for every concave positive φ.
    pub phi_domain_sup: f64,
    pub closed_form: bool,
}

const QUAD_REL_TOL: f64 = 1e-13;
const ROOT_REL_TOL: f64 = 1e-14;

impl RateKernel {
    pub fn new(phi: PhiSpec) -> Result<Self, RateError> {
        phi.validate()?;
        let closed_form = !matches!(phi, PhiSpec::Custom { .. });
        Ok(Self { phi, phi_domain_sup: f64::INFINITY, closed_form })
    }

    pub fn phi(&self, s: f64) -> Result<f64, RateError> {
        self.phi.eval(s)
    }

    /// Φ(s) = ∫₁ˢ du / φ(u).
    pub fn capital_phi(&self, s: f64) -> Result<f64, RateError> {
        if !(s >= 1.0) {
            return Err(RateError::BelowOne(s));
        }
        Ok(match &self.phi {
            PhiSpec::Linear { k } => ln(s) / k,
            PhiSpec::Power { c, gamma } => {
                let a = 1.0 - gamma;
                (powf(s, a) - 1.0) / (c * a)
            }
            PhiSpec::Constant { k } => (s - 1.0) / k,
            PhiSpec::Custom { expr } => custom_capital_phi(&expr.0, ln(s))?,
        })
    }

    /// Ψ(v) = Φ⁻¹(v) for v ∈ [0, Φ(∞)).
    pub fn capital_psi(&self, v: f64) -> Result<f64, RateError> {
        if !(v >= 0.0) {
            return Err(RateError::Negative(v));
        }
        if v >= self.phi_domain_sup {
            return Err(RateError::PsiDomain { value: v, sup: self.phi_domain_sup });
        }
        Ok(match &self.phi {
            PhiSpec::Linear { k } => exp(k * v),
            PhiSpec::Power { c, gamma } => {
                let a = 1.0 - gamma;
                powf(c * a * v + 1.0, 1.0 / a)
            }
            PhiSpec::Constant { k } => k * v + 1.0,
            PhiSpec::Custom { expr } => custom_capital_psi(&expr.0, v)?,
        })
    }

    /// G(t, u) = Ψ(Φ(u) + t), via closed forms where available.
    pub fn g(&self, t: f64, u: f64) -> Result<f64, RateError> {
        if !(t >= 0.0) {
            return Err(RateError::Negative(t));
        }
        if !(u >= 1.0) {
            return Err(RateError::BelowOne(u));
        }
        if t == 0.0 {
            return Ok(u);
        }
        match &self.phi {
            PhiSpec::Linear { k } => Ok(u * exp(k * t)),
            PhiSpec::Power { c, gamma } => {
                let a = 1.0 - gamma;
                Ok(powf(c * a * t + powf(u, a), 1.0 / a))
            }
            PhiSpec::Constant { k } => Ok(u + k * t),
            PhiSpec::Custom { .. } => self.g_generic(t, u),
        }
    }

    /// G through the general Ψ(Φ(u) + t) composition, bypassing the
    /// closed-form shortcut for G itself.
    pub fn g_generic(&self, t: f64, u: f64) -> Result<f64, RateError> {
        self.capital_psi(self.capital_phi(u)? + t)
    }
}

pub fn capital_phi(kernel: &RateKernel, s: f64) -> Result<f64, RateError> {
    kernel.capital_phi(s)
}

pub fn capital_psi(kernel: &RateKernel, v: f64) -> Result<f64, RateError> {
    kernel.capital_psi(v)
}

#[allow(non_snake_case)]
pub fn G_eval(kernel: &RateKernel, t: f64, u: f64) -> Result<f64, RateError> {
    kernel.g(t, u)
}

// Φ(e^w) = ∫₀ʷ e^y / φ(e^y) dy, integrated over unit panels in y so that
// Φ varies smoothly with its argument.
fn custom_capital_phi(phi: &Expr, w: f64) -> Result<f64, RateError> {
    let integrand = |y: f64| {
        let s = exp(y);
        s / phi.eval_or_nan(s)
    };
    let mut total = 0.0;
    let mut lo = 0.0;
    while lo < w {
        let hi = (lo + 1.0).min(w);
        total += numeric::integrate(integrand, lo, hi, QUAD_REL_TOL, 1e-300)?;
        lo = hi;
    }
    Ok(total)
}

fn custom_capital_psi(phi: &Expr, v: f64) -> Result<f64, RateError> {
    if v == 0.0 {
        return Ok(1.0);
    }
    // bracket in w = ln s
    let mut hi = 1.0;
    loop {
        let val = custom_capital_phi(phi, hi)?;
        if val >= v {
            break;
        }
        hi *= 2.0;
        if hi > 700.0 {
            return Err(RateError::PsiDomain { value: v, sup: val });
        }
    }
    let w = numeric::brent(
        |w| custom_capital_phi(phi, w).map(|p| p - v).unwrap_or(f64::NAN),
        0.0,
        hi,
        1e-15,
        ROOT_REL_TOL,
    )?;
    Ok(exp(w))
}

/// Outcome of the numerical audit of G's boundary values and PDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// max |∂G/∂t − φ(u)∂G/∂u| / max(1, |∂G/∂t|)
    pub max_pde_residual: f64,
    /// min of ∂G/∂u / max(1, G/u)
    pub min_du: f64,
    /// max of ∂²G/∂u² / max(1, G/u²)
    pub max_duu: f64,
    /// max relative error of G(0, u) = u and G(t, 1) = Ψ(t)
    pub max_boundary_error: f64,
    pub points: usize,
    pub pass: bool,
}

pub const AUDIT_PDE_TOL: f64 = 1e-6;
pub const AUDIT_SIGN_TOL: f64 = 1e-8;
pub const AUDIT_BOUNDARY_TOL: f64 = 1e-10;

/// Finite-difference audit of G: the transport equation
/// ∂G/∂t = φ(u)·∂G/∂u, monotonicity and concavity in u, and the boundary
/// identities G(0, u) = u, G(t, 1) = Ψ(t).
pub fn lemma_g_audit(kernel: &RateKernel, t_grid: &[f64], u_grid: &[f64]) -> Result<AuditReport, RateError> {
    let g = |t: f64, u: f64| kernel.g(t, u).unwrap_or(f64::NAN);
    let mut max_pde: f64 = 0.0;
    let mut min_du = f64::INFINITY;
    let mut max_duu = f64::NEG_INFINITY;
    let mut max_bdry: f64 = 0.0;
    for &t in t_grid {
        let psi_t = kernel.capital_psi(t)?;
        let at_one = kernel.g(t, 1.0)?;
        max_bdry = max_bdry.max(abs(at_one - psi_t) / psi_t);
        for &u in u_grid {
            let gv = kernel.g(t, u)?;
            let ht = 1e-3 * t.max(1.0);
            let hu1 = 1e-4 * u;
            let hu2 = 1e-2 * u;
            let dt = numeric::derivative(|s| g(s, u), t, 1, ht, Some(0.0))?;
            let du = numeric::derivative(|v| g(t, v), u, 1, hu1, Some(1.0))?;
            let duu = numeric::derivative(|v| g(t, v), u, 2, hu2, Some(1.0))?;
            let phi_u = kernel.phi(u)?;
            max_pde = max_pde.max(abs(dt - phi_u * du) / abs(dt).max(1.0));
            min_du = min_du.min(du / (gv / u).max(1.0));
            max_duu = max_duu.max(duu / (gv / (u * u)).max(1.0));
        }
    }
    for &u in u_grid {
        let at_zero = kernel.g(0.0, u)?;
        max_bdry = max_bdry.max(abs(at_zero - u) / u);
    }
    let pass = max_pde < AUDIT_PDE_TOL
        && min_du >= -AUDIT_SIGN_TOL
        && max_duu <= AUDIT_SIGN_TOL
        && max_bdry < AUDIT_BOUNDARY_TOL;
    Ok(AuditReport {
        max_pde_residual: max_pde,
        min_du,
        max_duu,
        max_boundary_error: max_bdry,
        points: t_grid.len() * u_grid.len(),
        pass,
    })
}

/// Conjugate exponents p, q > 1 with 1/p + 1/q = 1, i.e. the Young pair
/// H(x) = x^p/p, K(y) = y^q/q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoungPair {
    pub p: f64,
    pub q: f64,
}

impl YoungPair {
    pub fn new(p: f64) -> Result<Self, RateError> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(RateError::YoungExponent(p));
        }
        Ok(Self { p, q: p / (p - 1.0) })
    }

    pub fn h(&self, x: f64) -> f64 {
        powf(x, self.p) / self.p
    }

    pub fn k(&self, y: f64) -> f64 {
        powf(y, self.q) / self.q
    }

    pub fn h_inv(&self, x: f64) -> f64 {
        powf(self.p * x, 1.0 / self.p)
    }

    pub fn k_inv(&self, y: f64) -> f64 {
        powf(self.q * y, 1.0 / self.q)
    }
}

/// H⁻¹(x)·K⁻¹(y) ≤ x + y, checked with an absolute slack of 1e-12.
pub fn young_check(pair: &YoungPair, x: f64, y: f64) -> bool {
    pair.h_inv(x) * pair.k_inv(y) <= x + y + 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecompositionFamily {
    ExponentialExact,
    PowerYoung,
    ConstantYoung,
    GenericYoung,
    /// U ≡ 1, h = Ψ: the total-variation choice.
    TotalVariation,
}

/// The time factor h(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeRate {
    /// e^{k t}
    Exponential { k: f64 },
    /// coef · t^exponent
    Power { coef: f64, exponent: f64 },
    /// Ψ(t) of the kernel
    Psi { kernel: RateKernel },
}

impl TimeRate {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeRate::Exponential { k } => exp(k * t),
            TimeRate::Power { coef, exponent } => {
                if t == 0.0 {
                    0.0
                } else {
                    coef * powf(t, *exponent)
                }
            }
            TimeRate::Psi { kernel } => kernel.capital_psi(t).unwrap_or(f64::NAN),
        }
    }
}

/// The space weight U(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceWeight {
    /// U ≡ 1
    One,
    /// coef · V(x)^exponent
    PowerOfV { coef: f64, exponent: f64, v: LyapunovSpec },
}

impl SpaceWeight {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SpaceWeight::One => 1.0,
            SpaceWeight::PowerOfV { coef, exponent, v } => {
                let vx = v.value(x);
                if *exponent == 1.0 {
                    coef * vx
                } else {
                    coef * powf(vx, *exponent)
                }
            }
        }
    }

    pub fn is_one(&self) -> bool {
        matches!(self, SpaceWeight::One)
    }
}

/// A split h(t)·U(x) ≤ G(t, V(x)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDecomposition {
    pub h: TimeRate,
    pub u: SpaceWeight,
    pub family: DecompositionFamily,
    /// Smallest relative slack (G − hU)/G seen by the audit.
    pub audit_min_slack: f64,
}

impl ProductDecomposition {
    pub fn h(&self, t: f64) -> f64 {
        self.h.eval(t)
    }

    pub fn u(&self, x: f64) -> f64 {
        self.u.eval(x)
    }

    /// U ≡ 1 and h = Ψ, valid for any V ≥ 1 because G(t, V) ≥ G(t, 1) = Ψ(t).
    pub fn total_variation(kernel: &RateKernel, v: &LyapunovSpec) -> Result<Self, RateError> {
        let mut d = Self {
            h: TimeRate::Psi { kernel: kernel.clone() },
            u: SpaceWeight::One,
            family: DecompositionFamily::TotalVariation,
            audit_min_slack: f64::NAN,
        };
        d.audit_min_slack = audit_decomposition(&d, kernel, v)?;
        Ok(d)
    }
}

pub const DECOMPOSITION_AUDIT_TOL: f64 = 1e-9;
pub const DECOMPOSITION_AUDIT_T: (f64, f64) = (0.0, 10.0);
pub const DECOMPOSITION_AUDIT_X: (f64, f64) = (0.0, 100.0);

/// Audits h(t)·U(x) ≤ G(t, V(x)) on a 50×50 grid; returns the smallest
/// relative slack.
pub fn audit_decomposition(d: &ProductDecomposition, kernel: &RateKernel, v: &LyapunovSpec) -> Result<f64, RateError> {
    let ts = linear_grid(DECOMPOSITION_AUDIT_T.0, DECOMPOSITION_AUDIT_T.1, 50);
    let xs = linear_grid(DECOMPOSITION_AUDIT_X.0, DECOMPOSITION_AUDIT_X.1, 50);
    let mut min_slack = f64::INFINITY;
    for &t in &ts {
        let ht = d.h(t);
        for &x in &xs {
            let g = kernel.g(t, v.value(x))?;
            let product = ht * d.u(x);
            let slack = (g - product) / g;
            if !(slack >= -DECOMPOSITION_AUDIT_TOL) {
                return Err(RateError::AuditFailed { t, x, product, g });
            }
            min_slack = min_slack.min(slack);
        }
    }
    Ok(min_slack)
}

/// Splits G(t, V(x)) into h(t)·U(x) using the exact product for linear φ
/// and a Young split for power and constant φ. Every result is re-audited.
pub fn decompose(kernel: &RateKernel, v: &LyapunovSpec, pair: &YoungPair) -> Result<ProductDecomposition, RateError> {
    let (p, q) = (pair.p, pair.q);
    let (h, u, family) = match &kernel.phi {
        PhiSpec::Linear { k } => (
            TimeRate::Exponential { k: *k },
            SpaceWeight::PowerOfV { coef: 1.0, exponent: 1.0, v: v.clone() },
            DecompositionFamily::ExponentialExact,
        ),
        PhiSpec::Power { c, gamma } => {
            // cαt + u^α ≥ H⁻¹(cαt)·K⁻¹(u^α), then raise to 1/α
            let a = 1.0 - gamma;
            (
                TimeRate::Power { coef: powf(c * p * a, 1.0 / (a * p)), exponent: 1.0 / (a * p) },
                SpaceWeight::PowerOfV { coef: powf(q, 1.0 / (q * a)), exponent: 1.0 / q, v: v.clone() },
                DecompositionFamily::PowerYoung,
            )
        }
        PhiSpec::Constant { k } => (
            TimeRate::Power { coef: powf(p * k, 1.0 / p), exponent: 1.0 / p },
            SpaceWeight::PowerOfV { coef: powf(q, 1.0 / q), exponent: 1.0 / q, v: v.clone() },
            DecompositionFamily::ConstantYoung,
        ),
        PhiSpec::Custom { .. } => return Err(RateError::Unsupported("custom rate functions")),
    };
    let mut d = ProductDecomposition { h, u, family, audit_min_slack: f64::NAN };
    d.audit_min_slack = audit_decomposition(&d, kernel, v)?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(phi: PhiSpec) -> RateKernel {
        RateKernel::new(phi).unwrap()
    }

    // Simpson oracle for Φ, independent of the kernel code.
    fn simpson_phi(phi: impl Fn(f64) -> f64, s: f64) -> f64 {
        let n = 20_000;
        let h = (s - 1.0) / n as f64;
        let mut acc = 1.0 / phi(1.0) + 1.0 / phi(s);
        for i in 1..n {
            let u = 1.0 + h * i as f64;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } / phi(u);
        }
        acc * h / 3.0
    }

    // bisection oracle for Ψ
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi_eval(&PhiSpec::Linear { k: 2.0 }, 3.0).unwrap(), 6.0);
        assert_eq!(phi_eval(&PhiSpec::Power { c: 1.0, gamma: 0.5 }, 4.0).unwrap(), 2.0);
        assert_eq!(phi_eval(&PhiSpec::Constant { k: 5.0 }, 100.0).unwrap(), 5.0);
        assert_eq!(phi_eval(&PhiSpec::Constant { k: 5.0 }, 0.5), Err(RateError::BelowOne(0.5)));
    }

    #[test]
    fn capital_phi_examples_against_simpson() {
        assert_eq!(kernel(PhiSpec::Linear { k: 1.0 }).capital_phi(1.0).unwrap(), 0.0);
        let oracle = simpson_phi(libm::sqrt, 4.0);
        assert!((oracle - 2.0).abs() < 1e-10);
        let v = kernel(PhiSpec::Power { c: 1.0, gamma: 0.5 }).capital_phi(4.0).unwrap();
        assert!((v - oracle).abs() < 1e-10);
        let oracle = simpson_phi(|_| 2.0, 5.0);
        let v = kernel(PhiSpec::Constant { k: 2.0 }).capital_phi(5.0).unwrap();
        assert!((v - oracle).abs() < 1e-12 && (v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn capital_psi_examples_against_bisection() {
        for phi in [PhiSpec::Linear { k: 1.0 }, PhiSpec::Power { c: 1.0, gamma: 0.5 }, PhiSpec::Constant { k: 3.0 }] {
            assert_eq!(kernel(phi).capital_psi(0.0).unwrap(), 1.0);
        }
        let e = bisect(|s| libm::log(s) - 1.0, 1.0, 10.0);
        let v = kernel(PhiSpec::Linear { k: 1.0 }).capital_psi(1.0).unwrap();
        assert!((v - e).abs() < 1e-12);
        let four = bisect(|s| 2.0 * (libm::sqrt(s) - 1.0) - 2.0, 1.0, 10.0);
        let v = kernel(PhiSpec::Power { c: 1.0, gamma: 0.5 }).capital_psi(2.0).unwrap();
        assert!((v - four).abs() < 1e-12);
        assert!(kernel(PhiSpec::Linear { k: 1.0 }).capital_psi(-1.0).is_err());
    }

    #[test]
    fn g_examples() {
        let k = kernel(PhiSpec::Power { c: 1.0, gamma: 0.5 });
        assert_eq!(k.g(0.0, 7.0).unwrap(), 7.0);
        let v = kernel(PhiSpec::Linear { k: 0.5 }).g(2.0, 3.0).unwrap();
        assert!((v - 3.0 * core::f64::consts::E).abs() < 1e-12);
        assert_eq!(kernel(PhiSpec::Constant { k: 2.0 }).g(3.0, 1.5).unwrap(), 7.5);
    }

    #[test]
    fn custom_kernel_matches_closed_forms() {
        let cases = [
            (PhiSpec::custom("2*s").unwrap(), PhiSpec::Linear { k: 2.0 }),
            (PhiSpec::custom("s^0.5").unwrap(), PhiSpec::Power { c: 1.0, gamma: 0.5 }),
            (PhiSpec::custom("3").unwrap(), PhiSpec::Constant { k: 3.0 }),
        ];
        for (custom, closed) in cases {
            let kc = kernel(custom);
            let kf = kernel(closed);
            for &s in &[1.0, 1.5, 10.0, 1e3, 1e6] {
                let a = kc.capital_phi(s).unwrap();
                let b = kf.capital_phi(s).unwrap();
                assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-3), "Φ({s}): {a} vs {b}");
                let back = kc.capital_psi(a).unwrap();
                assert!((back - s).abs() / s < 1e-10, "Ψ(Φ({s})) = {back}");
            }
            for &(t, u) in &[(0.5, 1.0), (2.0, 3.0), (10.0, 100.0)] {
                let a = kc.g(t, u).unwrap();
                let b = kf.g(t, u).unwrap();
                assert!((a - b).abs() / b < 1e-10, "G({t},{u}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn custom_phi_validation_rejects_convex_and_negative() {
        assert!(RateKernel::new(PhiSpec::custom("s^2").unwrap()).is_err());
        assert!(RateKernel::new(PhiSpec::custom("1 - s").unwrap()).is_err());
        assert!(RateKernel::new(PhiSpec::custom("log(s) + 1").unwrap()).is_ok());
        assert!(RateKernel::new(PhiSpec::Power { c: 1.0, gamma: 1.0 }).is_err());
        assert!(RateKernel::new(PhiSpec::Linear { k: 0.0 }).is_err());
    }

    #[test]
    fn lemma_g_audit_passes_for_named_families() {
        let ts = linear_grid(0.0, 5.0, 20);
        let us = linear_grid(1.0, 50.0, 20);
        for phi in [PhiSpec::Linear { k: 1.0 }, PhiSpec::Power { c: 1.0, gamma: 0.5 }, PhiSpec::Constant { k: 2.0 }] {
            let r = lemma_g_audit(&kernel(phi.clone()), &ts, &us).unwrap();
            assert!(r.pass, "{phi:?}: {r:?}");
        }
        let r = lemma_g_audit(&kernel(PhiSpec::Constant { k: 2.0 }), &ts, &us).unwrap();
        assert!(r.max_duu.abs() < 1e-8);
    }

    #[test]
    fn g_dominates_both_boundaries() {
        let k = kernel(PhiSpec::Power { c: 0.7, gamma: 0.3 });
        for &t in &linear_grid(0.0, 10.0, 15) {
            for &u in &geometric_grid(1.0, 1e4, 15) {
                let g = k.g(t, u).unwrap();
                assert!(g >= u * (1.0 - 1e-14));
                assert!(g >= k.capital_psi(t).unwrap() * (1.0 - 1e-14));
            }
        }
    }

    #[test]
    fn young_examples() {
        let two = YoungPair::new(2.0).unwrap();
        assert!(young_check(&two, 1.0, 1.0));
        assert!(young_check(&two, 4.0, 1.0));
        assert!(young_check(&YoungPair::new(3.0).unwrap(), 0.0, 5.0));
        assert!(YoungPair::new(1.0).is_err());
        let p = YoungPair::new(3.0).unwrap();
        assert!((p.q - 1.5).abs() < 1e-15);
        assert!((p.h(p.h_inv(2.5)) - 2.5).abs() < 1e-12);
        assert!((p.k(p.k_inv(2.5)) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn decompose_examples() {
        let pair = YoungPair::new(2.0).unwrap();
        let lin = kernel(PhiSpec::Linear { k: 1.0 });
        let v = LyapunovSpec::Exp { lambda: 1.0 };
        let d = decompose(&lin, &v, &pair).unwrap();
        assert_eq!(d.family, DecompositionFamily::ExponentialExact);
        for &(t, x) in &[(0.0, 0.0), (1.0, 2.0), (3.0, 0.5)] {
            let exact = lin.g(t, v.value(x)).unwrap();
            assert!((d.h(t) * d.u(x) - exact).abs() <= 1e-14 * exact);
            assert!((d.h(t) - libm::exp(t)).abs() < 1e-12 * d.h(t));
        }

        let pow = kernel(PhiSpec::Power { c: 1.0, gamma: 0.5 });
        let aff = LyapunovSpec::Affine { c: 1.0 };
        let d = decompose(&pow, &aff, &pair).unwrap();
        for &t in &[0.0, 0.5, 3.0] {
            assert!((d.h(t) - t).abs() < 1e-14);
        }
        for &x in &[0.0, 1.0, 8.0] {
            assert!((d.u(x) - 2.0 * libm::sqrt(1.0 + x)).abs() < 1e-13);
        }

        let cst = kernel(PhiSpec::Constant { k: 1.0 });
        let d = decompose(&cst, &aff, &pair).unwrap();
        for &t in &[0.0, 0.5, 3.0] {
            assert!((d.h(t) - libm::sqrt(2.0 * t)).abs() < 1e-14);
        }
        for &x in &[0.0, 1.0, 8.0] {
            assert!((d.u(x) - libm::sqrt(2.0 * (1.0 + x))).abs() < 1e-13);
        }
        assert!(decompose(&kernel(PhiSpec::custom("s").unwrap()), &aff, &pair).is_err());
    }

    #[test]
    fn naive_constant_split_fails_audit() {
        // h(t) = 2k t^{1/2}, U = V^{1/2} overshoots G = V + kt once k > 1
        let k = 4.0;
        let cst = kernel(PhiSpec::Constant { k });
        let aff = LyapunovSpec::Affine { c: 1.0 };
        let d = ProductDecomposition {
            h: TimeRate::Power { coef: 2.0 * k, exponent: 0.5 },
            u: SpaceWeight::PowerOfV { coef: 1.0, exponent: 0.5, v: aff.clone() },
            family: DecompositionFamily::ConstantYoung,
            audit_min_slack: f64::NAN,
        };
        assert!(matches!(audit_decomposition(&d, &cst, &aff), Err(RateError::AuditFailed { .. })));
    }

    proptest::proptest! {
        #[test]
        fn young_inequality_random(p in 1.0001f64..5.0, x in 0.0f64..100.0, y in 0.0f64..100.0) {
            let pair = YoungPair::new(p).unwrap();
            proptest::prop_assert!(young_check(&pair, x, y));
            proptest::prop_assert!(x * y <= pair.h(x) + pair.k(y) + 1e-9 * (pair.h(x) + pair.k(y)).max(1.0));
        }

        #[test]
        fn psi_inverts_phi(s in 1.0f64..1e6, k in 0.1f64..5.0, gamma in 0.05f64..0.95) {
            for phi in [PhiSpec::Linear { k }, PhiSpec::Power { c: k, gamma }, PhiSpec::Constant { k }] {
                let kr = RateKernel::new(phi).unwrap();
                let back = kr.capital_psi(kr.capital_phi(s).unwrap()).unwrap();
                proptest::prop_assert!((back - s).abs() / s < 1e-10);
            }
        }
    }
}
