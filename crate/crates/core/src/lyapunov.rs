//! Lyapunov functions, generators, and drift certificates
//! LV(x) ≤ −φ(V(x)) checked on a grid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::numeric::{self, exp, geometric_grid, ln, powf, NumericError};
use crate::process::{DisplacementLaw, JumpKernel, LevyMeasure, LevyModel, ModelError, ProcessModel};
use crate::rate::{PhiSpec, RateError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("generator requires x > 0, got {0}")]
    NonPositiveState(f64),
    #[error("coefficient evaluation failed at x = {x}: {source}")]
    Eval { x: f64, source: EvalError },
    #[error("jump integral of V is not finite at x = {x}: {reason}")]
    NonIntegrable { x: f64, reason: String },
    #[error("quadrature failed at x = {x}: {source}")]
    Numeric { x: f64, source: NumericError },
    #[error("rate function: {0}")]
    Rate(#[from] RateError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("lambda = {lambda} is outside [0, lambda0 = {lambda0})")]
    LambdaOutOfRange { lambda: f64, lambda0: f64 },
    #[error("no lambda on the search grid gives k(lambda) < 0 (smallest k = {best_k} at {best_lambda})")]
    NoNegativeK { best_lambda: f64, best_k: f64 },
    #[error("no admissible positive coefficient for the {family} family (grid minimum {min} at x = {at})")]
    NoAdmissibleCoefficient { family: &'static str, min: f64, at: f64 },
    #[error("no power exponent in (0, 1) is admissible (tail log-slope {slope})")]
    NoAdmissibleExponent { slope: f64 },
    #[error("invalid Lyapunov function: {0}")]
    Invalid(String),
}

fn quad_err(x: f64, e: NumericError) -> CertifyError {
    match e {
        NumericError::Divergent { .. } | NumericError::NonFinite { .. } | NumericError::NonFiniteIntegrand { .. } => {
            CertifyError::NonIntegrable { x, reason: format!("{e}") }
        }
        source => CertifyError::Numeric { x, source },
    }
}

/// Candidate Lyapunov functions on [0, ∞); all satisfy V ≥ 1 and are
/// nondecreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LyapunovSpec {
    /// 1 + c·x
    Affine { c: f64 },
    /// (1 + λx)^β
    PowerAffine { lambda: f64, beta: f64 },
    /// e^{λx}
    Exp { lambda: f64 },
    /// 1 + x^β
    FracPower { beta: f64 },
}

impl LyapunovSpec {
    pub fn validate(&self) -> Result<(), CertifyError> {
        let ok = match *self {
            LyapunovSpec::Affine { c } => c > 0.0 && c.is_finite(),
            LyapunovSpec::PowerAffine { lambda, beta } => lambda > 0.0 && beta > 1.0 && lambda.is_finite(),
            LyapunovSpec::Exp { lambda } => lambda > 0.0 && lambda.is_finite(),
            LyapunovSpec::FracPower { beta } => beta > 0.0 && beta < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CertifyError::Invalid(format!("{self:?}")))
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            LyapunovSpec::Affine { c } => 1.0 + c * x,
            LyapunovSpec::PowerAffine { lambda, beta } => powf(1.0 + lambda * x, beta),
            LyapunovSpec::Exp { lambda } => exp(lambda * x),
            LyapunovSpec::FracPower { beta } => 1.0 + powf(x, beta),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            LyapunovSpec::Affine { c } => c,
            LyapunovSpec::PowerAffine { lambda, beta } => beta * lambda * powf(1.0 + lambda * x, beta - 1.0),
            LyapunovSpec::Exp { lambda } => lambda * exp(lambda * x),
            LyapunovSpec::FracPower { beta } => beta * powf(x, beta - 1.0),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            LyapunovSpec::Affine { .. } => 0.0,
            LyapunovSpec::PowerAffine { lambda, beta } => {
                beta * (beta - 1.0) * lambda * lambda * powf(1.0 + lambda * x, beta - 2.0)
            }
            LyapunovSpec::Exp { lambda } => lambda * lambda * exp(lambda * x),
            LyapunovSpec::FracPower { beta } => beta * (beta - 1.0) * powf(x, beta - 2.0),
        }
    }

    /// V(x + z) − V(x) without cancellation for small z.
    pub fn delta(&self, x: f64, z: f64) -> f64 {
        match *self {
            LyapunovSpec::Affine { c } => c * z,
            LyapunovSpec::PowerAffine { lambda, beta } => {
                let b = 1.0 + lambda * x;
                powf(b, beta) * libm::expm1(beta * libm::log1p(lambda * z / b))
            }
            LyapunovSpec::Exp { lambda } => exp(lambda * x) * libm::expm1(lambda * z),
            LyapunovSpec::FracPower { beta } => {
                if x > 0.0 {
                    powf(x, beta) * libm::expm1(beta * libm::log1p(z / x))
                } else {
                    powf(z, beta)
                }
            }
        }
    }

    /// Polynomial growth degree, `None` for exponential growth.
    pub fn growth_degree(&self) -> Option<f64> {
        match *self {
            LyapunovSpec::Affine { .. } => Some(1.0),
            LyapunovSpec::PowerAffine { beta, .. } => Some(beta),
            LyapunovSpec::Exp { .. } => None,
            LyapunovSpec::FracPower { beta } => Some(beta),
        }
    }
}

/// E[V(x + Z) − V(x)] for Z drawn from `law`.
fn law_delta(v: &LyapunovSpec, x: f64, law: &DisplacementLaw) -> Result<f64, CertifyError> {
    let non_int = |reason: &str| Err(CertifyError::NonIntegrable { x, reason: reason.into() });
    match (law, v) {
        (DisplacementLaw::PointMass { at }, _) => return Ok(v.delta(x, *at)),
        (_, LyapunovSpec::Affine { c }) => {
            return match law.mean() {
                Some(m) => Ok(c * m),
                None => non_int("displacement law has infinite mean"),
            }
        }
        (DisplacementLaw::Exponential { rate }, LyapunovSpec::Exp { lambda }) => {
            return if lambda < rate {
                Ok(v.value(x) * lambda / (rate - lambda))
            } else {
                non_int("exponential moment of the displacement is infinite")
            }
        }
        (DisplacementLaw::Lomax { shape, .. }, _) => match v.growth_degree() {
            None => return non_int("heavy-tailed displacement against exponential V"),
            Some(d) if d >= *shape => return non_int("displacement tail is heavier than the growth of V"),
            _ => {}
        },
        _ => {}
    }
    law.expect(|z| v.delta(x, z)).map_err(|e| quad_err(x, e))
}

fn eval_err(x: f64) -> impl Fn(EvalError) -> CertifyError {
    move |source| CertifyError::Eval { x, source }
}

/// Jump part of the generator at x.
fn jump_part(model: &ProcessModel, v: &LyapunovSpec, x: f64) -> Result<f64, CertifyError> {
    match model {
        ProcessModel::Diffusion(_) => Ok(0.0),
        ProcessModel::JumpDiffusion(m) => {
            if m.intensity == 0.0 {
                return Ok(0.0);
            }
            let law = match &m.kernel {
                JumpKernel::ExpDisplacement { rate } => {
                    let r = rate.eval(x).map_err(eval_err(x))?;
                    if !(r > 0.0) {
                        return Err(CertifyError::Precondition(format!("jump rate {r} at x = {x} must be positive")));
                    }
                    DisplacementLaw::Exponential { rate: r }
                }
                JumpKernel::Translation { law } => law.clone(),
            };
            Ok(m.intensity * law_delta(v, x, &law)?)
        }
        ProcessModel::Levy(m) => match &m.measure {
            LevyMeasure::FiniteCompound { rate, law } => {
                if *rate == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(rate * law_delta(v, x, law)?)
                }
            }
            LevyMeasure::InfiniteActivity { .. } => {
                if let LyapunovSpec::Exp { lambda } = v {
                    let l0 = m.measure.lambda0();
                    if *lambda >= l0 {
                        return Err(CertifyError::NonIntegrable {
                            x,
                            reason: format!("lambda {lambda} is not below lambda0 = {l0}"),
                        });
                    }
                }
                m.measure.integrate(|z| v.delta(x, z)).map_err(|e| quad_err(x, e))
            }
        },
    }
}

/// LV(x) = g(x)V′(x) + ½σ²(x)V″(x) + ∫[V(y) − V(x)]ν_x(dy).
pub fn generator_apply(model: &ProcessModel, v: &LyapunovSpec, x: f64) -> Result<f64, CertifyError> {
    if !(x > 0.0) {
        return Err(CertifyError::NonPositiveState(x));
    }
    let (g, s) = model.coefficients(x)?;
    let d2 = v.d2(x);
    let diffusion = if s == 0.0 || d2 == 0.0 { 0.0 } else { 0.5 * s * s * d2 };
    Ok(g * v.d1(x) + diffusion + jump_part(model, v, x)?)
}

/// m(x) = g(x) + ∫(y − x)ν_x(dy).
pub fn mean_drift(model: &ProcessModel, x: f64) -> Result<f64, CertifyError> {
    let (g, _) = model.coefficients(x)?;
    let infinite = || CertifyError::NonIntegrable { x, reason: "infinite first moment".into() };
    let jumps = match model {
        ProcessModel::Diffusion(_) => 0.0,
        ProcessModel::JumpDiffusion(m) => {
            if m.intensity == 0.0 {
                0.0
            } else {
                let mean = match &m.kernel {
                    JumpKernel::ExpDisplacement { rate } => 1.0 / rate.eval(x).map_err(eval_err(x))?,
                    JumpKernel::Translation { law } => law.mean().ok_or_else(infinite)?,
                };
                m.intensity * mean
            }
        }
        ProcessModel::Levy(m) => m.measure.first_moment().ok_or_else(infinite)?,
    };
    Ok(g + jumps)
}

/// k(λ) = λg + σ²λ²/2 + ∫(e^{λz} − 1)μ(dz) for λ ∈ [0, λ₀).
pub fn levy_k(m: &LevyModel, lambda: f64) -> Result<f64, CertifyError> {
    let l0 = m.measure.lambda0();
    if !(lambda >= 0.0 && lambda < l0) {
        return Err(CertifyError::LambdaOutOfRange { lambda, lambda0: l0 });
    }
    let base = lambda * m.drift + 0.5 * m.sigma * m.sigma * lambda * lambda;
    let jumps = match &m.measure {
        LevyMeasure::FiniteCompound { rate, law } => {
            if *rate == 0.0 {
                0.0
            } else {
                match law {
                    DisplacementLaw::PointMass { at } => rate * libm::expm1(lambda * at),
                    DisplacementLaw::Exponential { rate: r } => rate * lambda / (r - lambda),
                    DisplacementLaw::Lomax { .. } => {
                        if lambda == 0.0 {
                            0.0
                        } else {
                            return Err(CertifyError::LambdaOutOfRange { lambda, lambda0: 0.0 });
                        }
                    }
                }
            }
        }
        LevyMeasure::InfiniteActivity { .. } => {
            m.measure.integrate(|z| libm::expm1(lambda * z)).map_err(|e| quad_err(lambda, e))?
        }
    };
    Ok(base + jumps)
}

/// Forward-difference slope of k at 0; equals g + m₁.
pub fn levy_k_slope_at_zero(m: &LevyModel) -> Result<f64, CertifyError> {
    let l0 = m.measure.lambda0();
    let h = if l0.is_finite() { (l0 * 1e-4).min(1e-4) } else { 1e-4 };
    numeric::derivative(|l| levy_k(m, l).unwrap_or(f64::NAN), 0.0, 1, h, Some(0.0))
        .map_err(|source| CertifyError::Numeric { x: 0.0, source })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub k: f64,
    pub m1: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
}

/// Upper end of the λ search when λ₀ = ∞.
pub const LAMBDA_SEARCH_CAP: f64 = 1e3;
const LAMBDA_GRID_POINTS: usize = 400;

/// Minimises k over a geometric grid in (0, λ₀); requires g < −m₁.
pub fn levy_find_lambda(m: &LevyModel) -> Result<LambdaSearch, CertifyError> {
    let m1 = m.measure.first_moment().ok_or_else(|| CertifyError::Precondition("m1 is infinite".into()))?;
    if !(m.drift < -m1) {
        return Err(CertifyError::Precondition(format!("need g < -m1, got g = {}, m1 = {m1}", m.drift)));
    }
    let l0 = m.measure.lambda0();
    let hi = if l0.is_finite() { l0 * (1.0 - 1e-6) } else { LAMBDA_SEARCH_CAP };
    let lo = hi * 1e-6;
    let (mut best_l, mut best_k) = (f64::NAN, f64::INFINITY);
    for l in geometric_grid(lo, hi, LAMBDA_GRID_POINTS) {
        if let Ok(k) = levy_k(m, l) {
            if k.is_finite() && k < best_k {
                best_k = k;
                best_l = l;
            }
        }
    }
    if !(best_k < 0.0) {
        return Err(CertifyError::NoNegativeK { best_lambda: best_l, best_k });
    }
    Ok(LambdaSearch { lambda: best_l, k: best_k, m1, grid_lo: lo, grid_hi: hi })
}

/// Feasible λ-range for V = (1 + λx)^β under g(x) ≤ −a(1 + cx)^{α−1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAffineFeasibility {
    pub a: f64,
    pub c: f64,
    pub sigma: f64,
    pub beta: f64,
    /// [lo, hi) when nonempty
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub nonempty: bool,
    /// A(λ) = aβλ − ½σ²β(β−1)λ² at the midpoint of the interval.
    pub a_at_midpoint: Option<f64>,
    /// β < 1 + 2a/(cσ²), which follows from λ < 2a/(σ²(β−1)) and λ ≥ c.
    pub beta_bound: f64,
    /// The alternative reading β < 1 + σ²/(2ac); reported, not used.
    pub beta_bound_alternative: f64,
    pub note: String,
}

pub fn power_affine_feasible(a: f64, c: f64, sigma: f64, beta: f64) -> Result<PowerAffineFeasibility, CertifyError> {
    if !(beta > 1.0) {
        return Err(CertifyError::Precondition(format!("beta = {beta} must exceed 1")));
    }
    if !(a > 0.0 && c > 0.0 && sigma > 0.0) {
        return Err(CertifyError::Precondition("a, c and sigma must be positive".into()));
    }
    let hi = 2.0 * a / (sigma * sigma * (beta - 1.0));
    let nonempty = hi > c;
    let a_mid = nonempty.then(|| {
        let l = 0.5 * (c + hi);
        a * beta * l - 0.5 * sigma * sigma * beta * (beta - 1.0) * l * l
    });
    let beta_bound = 1.0 + 2.0 * a / (c * sigma * sigma);
    let beta_bound_alternative = 1.0 + sigma * sigma / (2.0 * a * c);
    let note = format!(
        "feasible iff beta < 1 + 2a/(c sigma^2) = {beta_bound}; the form 1 + sigma^2/(2ac) = {beta_bound_alternative} would {} this beta",
        if beta < beta_bound_alternative { "also accept" } else { "reject" }
    );
    Ok(PowerAffineFeasibility {
        a,
        c,
        sigma,
        beta,
        lambda_lo: c,
        lambda_hi: hi,
        nonempty,
        a_at_midpoint: a_mid,
        beta_bound,
        beta_bound_alternative,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: 1e-3, hi: 1e3, points: 512 }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        geometric_grid(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub x: f64,
    pub lv: f64,
    pub phi_v: f64,
    /// LV(x) + φ(V(x)); must be ≤ 0 up to tolerance.
    pub margin: f64,
}

pub const DRIFT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub model: String,
    pub v: LyapunovSpec,
    pub phi: PhiSpec,
    pub grid: Vec<f64>,
    pub worst_margin: f64,
    pub worst_at: f64,
    /// max over the grid of margin/|LV|
    pub worst_relative_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Conditions the certificate relies on but does not check.
    pub assumptions: Vec<String>,
    pub notes: Vec<String>,
    pub margins: Vec<MarginPoint>,
}

/// Grid points where V stays well inside the f64 range.
fn usable_grid(v: &LyapunovSpec, x_grid: &[f64]) -> Result<(Vec<f64>, usize), CertifyError> {
    let kept: Vec<f64> = x_grid.iter().copied().filter(|&x| v.value(x) <= 1e250).collect();
    if kept.is_empty() {
        return Err(CertifyError::Precondition("V overflows on the whole grid".into()));
    }
    let dropped = x_grid.len() - kept.len();
    Ok((kept, dropped))
}

/// Checks LV(x) ≤ −φ(V(x)) at every grid point. A point passes when its
/// margin is at most `DRIFT_TOLERANCE·|LV(x)|`.
pub fn drift_check(
    model: &ProcessModel,
    v: &LyapunovSpec,
    phi: &PhiSpec,
    x_grid: &[f64],
) -> Result<RateCertificate, CertifyError> {
    phi.validate()?;
    v.validate()?;
    let (x_grid, dropped) = usable_grid(v, x_grid)?;
    let x_grid = &x_grid[..];
    let mut notes = Vec::new();
    if dropped > 0 {
        notes.push(format!(
            "{dropped} grid points beyond x = {} skipped because V exceeds 1e250 there",
            x_grid[x_grid.len() - 1]
        ));
    }
    let mut margins = Vec::with_capacity(x_grid.len());
    let (mut worst, mut worst_at, mut worst_rel) = (f64::NEG_INFINITY, f64::NAN, f64::NEG_INFINITY);
    let mut pass = true;
    for &x in x_grid {
        let lv = generator_apply(model, v, x)?;
        let phi_v = phi.eval(v.value(x))?;
        let margin = lv + phi_v;
        if margin > worst {
            worst = margin;
            worst_at = x;
        }
        let rel = if lv == 0.0 {
            if margin > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            margin / numeric::abs(lv)
        };
        worst_rel = worst_rel.max(rel);
        if !(rel <= DRIFT_TOLERANCE) {
            pass = false;
        }
        margins.push(MarginPoint { x, lv, phi_v, margin });
    }
    Ok(RateCertificate {
        model: model.describe(),
        v: v.clone(),
        phi: phi.clone(),
        grid: x_grid.to_vec(),
        worst_margin: worst,
        worst_at,
        worst_relative_margin: worst_rel,
        tolerance: DRIFT_TOLERANCE,
        pass,
        assumptions: alloc::vec![String::from(
            "positivity: the process reaches every neighbourhood of 0 with positive probability (not checked)"
        )],
        notes,
        margins,
    })
}

/// Family to fit in [`fit_phi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FitFamily {
    Linear,
    /// Power with a fixed exponent, or the exponent from
    /// [`admissible_power_exponent`] when omitted.
    Power {
        #[serde(default)]
        gamma: Option<f64>,
    },
    Constant,
}

/// Largest coefficient of the given family with LV ≤ −φ(V) on the grid.
pub fn fit_phi(
    model: &ProcessModel,
    v: &LyapunovSpec,
    family: FitFamily,
    x_grid: &[f64],
) -> Result<PhiSpec, CertifyError> {
    let gamma = match family {
        FitFamily::Power { gamma: Some(g) } => Some(g),
        FitFamily::Power { gamma: None } => Some(admissible_power_exponent(model, v, x_grid)?),
        _ => None,
    };
    let (x_grid, _) = usable_grid(v, x_grid)?;
    let x_grid = &x_grid[..];
    let name = match family {
        FitFamily::Linear => "linear",
        FitFamily::Power { .. } => "power",
        FitFamily::Constant => "constant",
    };
    let (mut min, mut at) = (f64::INFINITY, f64::NAN);
    for &x in x_grid {
        let lv = generator_apply(model, v, x)?;
        let vx = v.value(x);
        let part = match family {
            FitFamily::Linear => vx,
            FitFamily::Power { .. } => powf(vx, gamma.unwrap_or(1.0)),
            FitFamily::Constant => 1.0,
        };
        let ratio = -lv / part;
        if !(ratio >= min) {
            min = ratio;
            at = x;
        }
    }
    if !(min > 0.0 && min.is_finite()) {
        return Err(CertifyError::NoAdmissibleCoefficient { family: name, min, at });
    }
    let phi = match family {
        FitFamily::Linear => PhiSpec::Linear { k: min },
        FitFamily::Power { .. } => PhiSpec::Power { c: min, gamma: gamma.unwrap_or(1.0) },
        FitFamily::Constant => PhiSpec::Constant { k: min },
    };
    phi.validate()?;
    Ok(phi)
}

/// Exponent γ for a power-rate fit: the least-squares slope of ln(−LV)
/// against ln V over the top decade of the grid.
pub fn admissible_power_exponent(model: &ProcessModel, v: &LyapunovSpec, x_grid: &[f64]) -> Result<f64, CertifyError> {
    let (x_grid, _) = usable_grid(v, x_grid)?;
    let x_max = x_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut pts = Vec::new();
    for &x in x_grid.iter().filter(|&&x| x >= x_max / 10.0) {
        let lv = generator_apply(model, v, x)?;
        if !(lv < 0.0) {
            return Err(CertifyError::NoAdmissibleExponent { slope: f64::NAN });
        }
        pts.push((ln(v.value(x)), ln(-lv)));
    }
    if pts.len() < 2 {
        return Err(CertifyError::Precondition("grid has fewer than two points in its top decade".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    if !(slope > 0.0 && slope < 1.0) {
        return Err(CertifyError::NoAdmissibleExponent { slope });
    }
    Ok(slope)
}

/// V̂ = V∘ψ with ψ = 0 on [0, x₁], ψ(x) = x on [x₂, ∞) and a C¹ cubic in
/// between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub v: LyapunovSpec,
    pub x1: f64,
    pub x2: f64,
    /// max of V/V̂ over the check grid
    pub c: f64,
    pub psi_monotone: bool,
}

impl Truncation {
    pub fn psi(&self, x: f64) -> f64 {
        if x <= self.x1 {
            0.0
        } else if x >= self.x2 {
            x
        } else {
            // Hermite cubic: ψ(x1) = 0, ψ'(x1) = 0, ψ(x2) = x2, ψ'(x2) = 1
            let w = self.x2 - self.x1;
            let s = (x - self.x1) / w;
            let h01 = s * s * (3.0 - 2.0 * s);
            let h11 = s * s * (s - 1.0);
            self.x2 * h01 + w * h11
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.v.value(self.psi(x))
    }
}

pub fn truncate(v: &LyapunovSpec, x1: f64, x2: f64) -> Result<Truncation, CertifyError> {
    if !(x1 > 0.0 && x1 < x2) {
        return Err(CertifyError::Precondition(format!("need 0 < x1 < x2, got x1 = {x1}, x2 = {x2}")));
    }
    let mut t = Truncation { v: v.clone(), x1, x2, c: 1.0, psi_monotone: true };
    let grid = numeric::linear_grid(0.0, 2.0 * x2, 1000);
    let mut prev = f64::NEG_INFINITY;
    let mut c: f64 = 1.0;
    for &x in &grid {
        let p = t.psi(x);
        if p < prev || p > x + 1e-12 {
            t.psi_monotone = false;
        }
        prev = p;
        c = c.max(v.value(x) / t.value(x));
    }
    t.c = c;
    Ok(t)
}
