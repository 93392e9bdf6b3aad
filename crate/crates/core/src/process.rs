//! Reflected process families on [0, ∞) and their one-step simulation
//! kernels: diffusions, jump-diffusions with rightward jumps, and Lévy
//! processes whose jump part is a subordinator.
//!
//! A step draws its randomness into a [`StepNoise`] first and then applies
//! it to a state. Coupled copies apply the same noise to their own states.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Coef, EvalError, Expr, ExprIn};
use crate::numeric::{self, exp, powf, sqrt, NumericError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("coefficient evaluation failed at x = {x}: {source}")]
    Eval { x: f64, source: EvalError },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("jump measure: {0}")]
    Numeric(#[from] NumericError),
}

pub(crate) fn eval_at(c: &Coef, x: f64) -> Result<f64, ModelError> {
    c.eval(x).map_err(|source| ModelError::Eval { x, source })
}

/// A probability law on (0, ∞) for jump displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DisplacementLaw {
    PointMass {
        at: f64,
    },
    Exponential {
        rate: f64,
    },
    /// P(Z > z) = (1 + z/scale)^{-shape}
    Lomax {
        shape: f64,
        scale: f64,
    },
}

impl DisplacementLaw {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match self {
            DisplacementLaw::PointMass { at } => *at >= 0.0 && at.is_finite(),
            DisplacementLaw::Exponential { rate } => *rate > 0.0 && rate.is_finite(),
            DisplacementLaw::Lomax { shape, scale } => *shape > 0.0 && *scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::Invalid(format!("bad displacement law {self:?}")))
        }
    }

    /// Mean displacement, `None` if infinite.
    pub fn mean(&self) -> Option<f64> {
        match self {
            DisplacementLaw::PointMass { at } => Some(*at),
            DisplacementLaw::Exponential { rate } => Some(1.0 / rate),
            DisplacementLaw::Lomax { shape, scale } => {
                if *shape > 1.0 {
                    Some(scale / (shape - 1.0))
                } else {
                    None
                }
            }
        }
    }

    /// Supremum of λ with E[e^{λZ}] < ∞.
    pub fn exp_moment_sup(&self) -> f64 {
        match self {
            DisplacementLaw::PointMass { .. } => f64::INFINITY,
            DisplacementLaw::Exponential { rate } => *rate,
            DisplacementLaw::Lomax { .. } => 0.0,
        }
    }

    /// Quantile function; `u ∈ [0, 1)`.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        match self {
            DisplacementLaw::PointMass { at } => *at,
            DisplacementLaw::Exponential { rate } => -libm::log1p(-u) / rate,
            DisplacementLaw::Lomax { shape, scale } => scale * (powf(1.0 - u, -1.0 / shape) - 1.0),
        }
    }

    /// E[f(Z)]. `f` must be finite on the support.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> Result<f64, NumericError> {
        match self {
            DisplacementLaw::PointMass { at } => Ok(f(*at)),
            DisplacementLaw::Exponential { rate } => {
                let r = *rate;
                numeric::integrate_half_line(|z| f(z) * r * exp(-r * z), 1.0 / r, 1e-10)
            }
            DisplacementLaw::Lomax { shape, scale } => {
                let (a, s) = (*shape, *scale);
                numeric::integrate_half_line(|z| f(z) * (a / s) * powf(1.0 + z / s, -a - 1.0), s, 1e-10)
            }
        }
    }
}

/// Jump kernel of a jump-diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JumpKernel {
    /// From x the process lands at x + Exp(rate(x)).
    ExpDisplacement { rate: Expr },
    /// From x the process lands at x + Z with Z drawn from `law`.
    Translation { law: DisplacementLaw },
}

/// Spectral measure of the jump part of a Lévy process, on (0, ∞).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LevyMeasure {
    /// μ = rate · law
    FiniteCompound { rate: f64, law: DisplacementLaw },
    /// μ(dz) = density(z) dz, possibly with infinite total mass near 0.
    InfiniteActivity {
        density: ExprIn<'z'>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda0: Option<f64>,
    },
}

impl LevyMeasure {
    pub fn zero() -> Self {
        LevyMeasure::FiniteCompound { rate: 0.0, law: DisplacementLaw::PointMass { at: 0.0 } }
    }

    fn density(&self) -> Option<&Expr> {
        match self {
            LevyMeasure::InfiniteActivity { density, .. } => Some(&density.0),
            _ => None,
        }
    }

    /// ∫ f(z) μ(dz) over (0, ∞).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> Result<f64, NumericError> {
        match self {
            LevyMeasure::FiniteCompound { rate, law } => {
                if *rate == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(rate * law.expect(f)?)
                }
            }
            LevyMeasure::InfiniteActivity { density, .. } => {
                let d = &density.0;
                numeric::integrate_half_line(|z| if z == 0.0 { 0.0 } else { f(z) * d.eval_or_nan(z) }, 1.0, 1e-10)
            }
        }
    }

    /// m₁ = ∫ z μ(dz); `None` if infinite.
    pub fn first_moment(&self) -> Option<f64> {
        match self {
            LevyMeasure::FiniteCompound { rate, law } => {
                if *rate == 0.0 {
                    Some(0.0)
                } else {
                    law.mean().map(|m| rate * m)
                }
            }
            LevyMeasure::InfiniteActivity { .. } => self.integrate(|z| z).ok(),
        }
    }

    /// λ₀ such that ∫₁^∞ e^{λ₀ z} μ(dz) < ∞ is assumed (∞ if unconstrained).
    pub fn lambda0(&self) -> f64 {
        match self {
            LevyMeasure::FiniteCompound { rate, law } => {
                if *rate == 0.0 {
                    f64::INFINITY
                } else {
                    law.exp_moment_sup()
                }
            }
            LevyMeasure::InfiniteActivity { lambda0, .. } => lambda0.unwrap_or(f64::INFINITY),
        }
    }

    /// ∫ (1 ∧ z) μ(dz), finite for every admissible Lévy measure.
    pub fn small_jump_mass(&self) -> Result<f64, NumericError> {
        self.integrate(|z| z.min(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub drift: Expr,
    pub sigma: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpDiffusionModel {
    #[serde(flatten)]
    pub base: DiffusionModel,
    /// Jump intensity M.
    pub intensity: f64,
    pub kernel: JumpKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyModel {
    pub drift: f64,
    pub sigma: f64,
    pub measure: LevyMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProcessModel {
    Diffusion(DiffusionModel),
    JumpDiffusion(JumpDiffusionModel),
    Levy(LevyModel),
}

impl ProcessModel {
    pub fn diffusion(drift: &str, sigma: &str) -> Result<Self, crate::expr::ParseError> {
        Ok(ProcessModel::Diffusion(DiffusionModel { drift: Expr::parse(drift)?, sigma: Expr::parse(sigma)? }))
    }

    pub fn describe(&self) -> String {
        match self {
            ProcessModel::Diffusion(m) => format!("diffusion(g = {}, sigma = {})", m.drift, m.sigma),
            ProcessModel::JumpDiffusion(m) => format!(
                "jump-diffusion(g = {}, sigma = {}, M = {}, kernel = {:?})",
                m.base.drift, m.base.sigma, m.intensity, m.kernel
            ),
            ProcessModel::Levy(m) => {
                format!("levy(g = {}, sigma = {}, mu = {:?})", m.drift, m.sigma, m.measure)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ProcessModel::Diffusion(_) => Ok(()),
            ProcessModel::JumpDiffusion(m) => {
                if !(m.intensity >= 0.0 && m.intensity.is_finite()) {
                    return Err(ModelError::Invalid(format!("intensity {} must be >= 0", m.intensity)));
                }
                if let JumpKernel::Translation { law } = &m.kernel {
                    law.validate()?;
                }
                Ok(())
            }
            ProcessModel::Levy(m) => {
                if !(m.sigma >= 0.0) {
                    return Err(ModelError::Invalid(format!("sigma {} must be >= 0", m.sigma)));
                }
                match &m.measure {
                    LevyMeasure::FiniteCompound { rate, law } => {
                        if !(*rate >= 0.0) {
                            return Err(ModelError::Invalid(format!("rate {rate} must be >= 0")));
                        }
                        law.validate()
                    }
                    LevyMeasure::InfiniteActivity { .. } => {
                        m.measure.small_jump_mass()?;
                        Ok(())
                    }
                }
            }
        }
    }

    /// Drift and diffusion coefficient at x (constant for Lévy models).
    pub fn coefficients(&self, x: f64) -> Result<(f64, f64), ModelError> {
        let ev = |e: &Expr| e.eval(x).map_err(|source| ModelError::Eval { x, source });
        match self {
            ProcessModel::Diffusion(m) => Ok((ev(&m.drift)?, ev(&m.sigma)?)),
            ProcessModel::JumpDiffusion(m) => Ok((ev(&m.base.drift)?, ev(&m.base.sigma)?)),
            ProcessModel::Levy(m) => Ok((m.drift, m.sigma)),
        }
    }

    /// Whether the diffusion coefficient is the same at every state.
    pub fn constant_sigma(&self) -> bool {
        match self {
            ProcessModel::Diffusion(m) => m.sigma.as_constant().is_some(),
            ProcessModel::JumpDiffusion(m) => m.base.sigma.as_constant().is_some(),
            ProcessModel::Levy(_) => true,
        }
    }

    /// Largest |g'(x)| sampled on a geometric grid of [1e-3, 1e3].
    pub fn drift_lipschitz_estimate(&self) -> Result<f64, ModelError> {
        let drift = match self {
            ProcessModel::Diffusion(m) => &m.drift,
            ProcessModel::JumpDiffusion(m) => &m.base.drift,
            ProcessModel::Levy(_) => return Ok(0.0),
        };
        if drift.as_constant().is_some() {
            return Ok(0.0);
        }
        let mut lip: f64 = 0.0;
        for x in numeric::geometric_grid(1e-3, 1e3, 256) {
            let d = drift.deriv_default(x, 1).map_err(|e| ModelError::Invalid(format!("g'({x}): {e}")))?;
            lip = lip.max(numeric::abs(d));
        }
        Ok(lip)
    }
}

/// How a step is mapped back onto [0, ∞).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionScheme {
    /// Skorokhod map of the step's path, using a sampled Brownian-bridge
    /// minimum of the continuous part.
    #[default]
    Bridge,
    /// max(0, x + increment)
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: u64,
    pub master_seed: u64,
    /// Jumps below this size are replaced by their mean drift (Lévy
    /// infinite-activity measures only).
    #[serde(default = "default_cutoff")]
    pub small_jump_cutoff: f64,
    #[serde(default)]
    pub reflection: ReflectionScheme,
}

fn default_cutoff() -> f64 {
    1e-2
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: u64, master_seed: u64) -> Self {
        Self {
            dt,
            horizon,
            n_paths,
            master_seed,
            small_jump_cutoff: default_cutoff(),
            reflection: ReflectionScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ModelError::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(ModelError::Config(format!("horizon {} must be >= dt {}", self.horizon, self.dt)));
        }
        if self.n_paths == 0 {
            return Err(ModelError::Config("n_paths must be positive".into()));
        }
        if !(self.small_jump_cutoff > 0.0) {
            return Err(ModelError::Config("small_jump_cutoff must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        numeric::ceil(self.horizon / self.dt - 1e-9) as u64
    }

    /// Step index of time t (nearest grid point).
    pub fn step_of(&self, t: f64) -> u64 {
        numeric::round(t / self.dt) as u64
    }
}

/// max(0, x + inc) and the pushed amount Δℓ = max(0, −(x + inc)).
pub fn reflect_step(x: f64, increment: f64) -> (f64, f64) {
    let y = x + increment;
    if y >= 0.0 {
        (y, 0.0)
    } else {
        (0.0, -y)
    }
}

/// Skorokhod map over one step whose increment path ends at `increment` and
/// has running minimum `path_min` (≤ min(0, increment)):
/// X' = max(x + inc, inc − path_min), Δℓ = max(0, −x − path_min).
pub fn reflect_with_min(x: f64, increment: f64, path_min: f64) -> (f64, f64) {
    let pushed = -x - path_min;
    if pushed > 0.0 {
        (increment - path_min, pushed)
    } else {
        (x + increment, 0.0)
    }
}

/// Euler–Maruyama increment g(x)·dt + σ(x)·√dt·gauss.
pub fn diffusion_increment(m: &DiffusionModel, x: f64, dt: f64, gauss: f64) -> Result<f64, ModelError> {
    let g = m.drift.eval(x).map_err(|source| ModelError::Eval { x, source })?;
    let s = m.sigma.eval(x).map_err(|source| ModelError::Eval { x, source })?;
    Ok(g * dt + s * sqrt(dt) * gauss)
}

/// Minimum over the step of a Brownian path with endpoint `increment` and
/// variance `var` (= σ²·dt), given a uniform `u ∈ [0, 1)`.
#[inline]
pub fn bridge_minimum(increment: f64, var: f64, u: f64) -> f64 {
    if var <= 0.0 {
        return increment.min(0.0);
    }
    let m = 0.5 * (increment - sqrt(increment * increment - 2.0 * var * libm::log1p(-u)));
    m.min(0.0).min(increment)
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => {
            let v: f64 = p.sample(rng);
            v as u64
        }
        Err(_) => 0,
    }
}

/// Sampled jump displacements over a step of length `dt` from state `x`;
/// each is drawn at the state left by the previous jump.
pub fn jump_events<R: Rng + ?Sized>(
    m: &JumpDiffusionModel,
    x: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>, ModelError> {
    let n = poisson_count(m.intensity * dt, rng);
    let mut out = Vec::with_capacity(n as usize);
    let mut y = x;
    for _ in 0..n {
        let u: f64 = rng.random();
        let d = match &m.kernel {
            JumpKernel::ExpDisplacement { rate } => {
                let r = rate.eval(y).map_err(|source| ModelError::Eval { x: y, source })?;
                -libm::log1p(-u) / r
            }
            JumpKernel::Translation { law } => law.inverse_cdf(u),
        };
        y += d;
        out.push(d);
    }
    Ok(out)
}

/// Tabulated sampler for the jumps of size ≥ ε of an infinite-activity
/// measure, plus the mean drift of the jumps below ε.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyJumpTable {
    pub cutoff: f64,
    /// ∫₀^ε z μ(dz)
    pub compensator: f64,
    /// μ([ε, ∞))
    pub big_jump_rate: f64,
    nodes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl LevyJumpTable {
    pub fn build(density: &Expr, cutoff: f64) -> Result<Self, ModelError> {
        let f = |z: f64| density.eval_or_nan(z);
        let compensator = numeric::integrate(|z| if z == 0.0 { 0.0 } else { z * f(z) }, 0.0, cutoff, 1e-11, 1e-300)?;
        let big_jump_rate = numeric::integrate_half_line(|w| f(cutoff + w), cutoff.max(1e-3), 1e-11)?;
        if !(big_jump_rate > 0.0) {
            return Err(ModelError::Invalid("jump density has no mass above the cutoff".into()));
        }
        // geometric nodes, 64 per doubling, until the remaining mass is negligible
        let ratio = powf(2.0, 1.0 / 64.0);
        let mut nodes = alloc::vec![cutoff];
        let mut cumulative = alloc::vec![0.0];
        let mut acc = 0.0;
        let mut z = cutoff;
        while big_jump_rate - acc > 1e-12 * big_jump_rate && nodes.len() < 200_000 {
            let next = z * ratio;
            acc += numeric::integrate(f, z, next, 1e-12, 1e-300)?;
            nodes.push(next);
            cumulative.push(acc);
            z = next;
        }
        Ok(Self { cutoff, compensator, big_jump_rate, nodes, cumulative })
    }

    /// Jump size for a uniform `u ∈ [0, 1)` (linear interpolation of the
    /// tabulated distribution function).
    pub fn sample(&self, u: f64) -> f64 {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let target = u * total;
        let j = self.cumulative.partition_point(|&c| c <= target);
        if j == 0 {
            return self.nodes[0];
        }
        if j >= self.nodes.len() {
            return *self.nodes.last().unwrap();
        }
        let (c0, c1) = (self.cumulative[j - 1], self.cumulative[j]);
        let (z0, z1) = (self.nodes[j - 1], self.nodes[j]);
        if c1 > c0 {
            z0 + (z1 - z0) * (target - c0) / (c1 - c0)
        } else {
            z0
        }
    }
}

/// Randomness of one step, shared between coupled copies.
#[derive(Debug, Clone, Default)]
pub struct StepNoise {
    pub gauss: f64,
    pub bridge_u: f64,
    /// Uniforms fed to the jump quantile functions.
    pub jump_uniforms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub x: f64,
    pub increment: f64,
    /// Local-time push Δℓ applied by the reflection.
    pub pushed: f64,
}

impl StepOutcome {
    /// The step's path touched zero.
    pub fn touched_zero(&self) -> bool {
        self.pushed > 0.0 || self.x == 0.0
    }
}

#[derive(Debug, Clone)]
enum Jumps {
    None,
    Exp { intensity: f64, rate: Coef },
    Law { intensity: f64, law: DisplacementLaw },
    Table { table: LevyJumpTable },
}

/// A model prepared for repeated stepping.
#[derive(Debug, Clone)]
pub struct Simulator {
    drift: Coef,
    sigma: Coef,
    jumps: Jumps,
    /// constant drift correction from compensated small jumps
    drift_shift: f64,
    jump_rate: f64,
    pub dt: f64,
    sqrt_dt: f64,
    pub reflection: ReflectionScheme,
}

impl Simulator {
    pub fn new(model: &ProcessModel, config: &SimConfig) -> Result<Self, ModelError> {
        model.validate()?;
        config.validate()?;
        let (drift, sigma, jumps, drift_shift) = match model {
            ProcessModel::Diffusion(m) => (Coef::new(&m.drift), Coef::new(&m.sigma), Jumps::None, 0.0),
            ProcessModel::JumpDiffusion(m) => {
                let jumps = if m.intensity == 0.0 {
                    Jumps::None
                } else {
                    match &m.kernel {
                        JumpKernel::ExpDisplacement { rate } => {
                            Jumps::Exp { intensity: m.intensity, rate: Coef::new(rate) }
                        }
                        JumpKernel::Translation { law } => Jumps::Law { intensity: m.intensity, law: law.clone() },
                    }
                };
                (Coef::new(&m.base.drift), Coef::new(&m.base.sigma), jumps, 0.0)
            }
            ProcessModel::Levy(m) => {
                let (jumps, shift) = match &m.measure {
                    LevyMeasure::FiniteCompound { rate, law } => {
                        if *rate == 0.0 {
                            (Jumps::None, 0.0)
                        } else {
                            (Jumps::Law { intensity: *rate, law: law.clone() }, 0.0)
                        }
                    }
                    LevyMeasure::InfiniteActivity { .. } => {
                        let density = m.measure.density().expect("infinite activity has a density");
                        let table = LevyJumpTable::build(density, config.small_jump_cutoff)?;
                        let shift = table.compensator;
                        (Jumps::Table { table }, shift)
                    }
                };
                (Coef::Const(m.drift), Coef::Const(m.sigma), jumps, shift)
            }
        };
        let jump_rate = match &jumps {
            Jumps::None => 0.0,
            Jumps::Exp { intensity, .. } | Jumps::Law { intensity, .. } => *intensity,
            Jumps::Table { table } => table.big_jump_rate,
        };
        Ok(Self {
            drift,
            sigma,
            jumps,
            drift_shift,
            jump_rate,
            dt: config.dt,
            sqrt_dt: sqrt(config.dt),
            reflection: config.reflection,
        })
    }

    pub fn has_state_dependent_sigma(&self) -> bool {
        !self.sigma.is_const()
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, noise: &mut StepNoise) {
        noise.gauss = StandardNormal.sample(rng);
        noise.bridge_u = if self.reflection == ReflectionScheme::Bridge { rng.random() } else { 0.0 };
        noise.jump_uniforms.clear();
        let n = poisson_count(self.jump_rate * self.dt, rng);
        for _ in 0..n {
            noise.jump_uniforms.push(rng.random());
        }
    }

    /// Total jump displacement over the step, sampled sequentially from `x`.
    fn jump_total(&self, x: f64, noise: &StepNoise) -> Result<f64, ModelError> {
        let mut total = 0.0;
        match &self.jumps {
            Jumps::None => {}
            Jumps::Exp { rate, .. } => {
                let mut y = x;
                for &u in &noise.jump_uniforms {
                    let r = eval_at(rate, y)?;
                    let d = -libm::log1p(-u) / r;
                    y += d;
                    total += d;
                }
            }
            Jumps::Law { law, .. } => {
                for &u in &noise.jump_uniforms {
                    total += law.inverse_cdf(u);
                }
            }
            Jumps::Table { table } => {
                for &u in &noise.jump_uniforms {
                    total += table.sample(u);
                }
            }
        }
        Ok(total)
    }

    /// Applies one step's noise to state `x`.
    #[inline]
    pub fn apply(&self, x: f64, noise: &StepNoise) -> Result<StepOutcome, ModelError> {
        let g = eval_at(&self.drift, x)? + self.drift_shift;
        let s = eval_at(&self.sigma, x)?;
        let cont = g * self.dt + s * self.sqrt_dt * noise.gauss;
        let jumps = if noise.jump_uniforms.is_empty() { 0.0 } else { self.jump_total(x, noise)? };
        let increment = cont + jumps;
        let (y, pushed) = match self.reflection {
            ReflectionScheme::Plain => reflect_step(x, increment),
            ReflectionScheme::Bridge => {
                let m = bridge_minimum(cont, s * s * self.dt, noise.bridge_u);
                // jumps are placed at the start of the step
                reflect_with_min(x, increment, jumps + m)
            }
        };
        Ok(StepOutcome { x: y, increment, pushed })
    }

    pub fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R, noise: &mut StepNoise) -> Result<StepOutcome, ModelError> {
        self.draw_noise(rng, noise);
        self.apply(x, noise)
    }
}

/// One reflected step of `model` from `x`.
pub fn step<R: Rng + ?Sized>(model: &ProcessModel, x: f64, config: &SimConfig, rng: &mut R) -> Result<f64, ModelError> {
    let sim = Simulator::new(model, config)?;
    let mut noise = StepNoise::default();
    Ok(sim.step(x, rng, &mut noise)?.x)
}

/// Increment of the (unreflected) Lévy process over `dt`: drift, Brownian
/// part, jumps of size ≥ ε, and the mean of the jumps below ε.
pub fn levy_increment<R: Rng + ?Sized>(
    m: &LevyModel,
    dt: f64,
    small_jump_cutoff: f64,
    rng: &mut R,
) -> Result<f64, ModelError> {
    let model = ProcessModel::Levy(m.clone());
    let mut cfg = SimConfig::new(dt, dt, 1, 0);
    cfg.small_jump_cutoff = small_jump_cutoff;
    let sim = Simulator::new(&model, &cfg)?;
    let mut noise = StepNoise::default();
    sim.draw_noise(rng, &mut noise);
    Ok(sim.apply(f64::MAX / 4.0, &noise)?.increment)
}

/// Lower incomplete gamma γ(s, x) by its power series.
#[cfg(test)]
pub(crate) fn lower_incomplete_gamma(s: f64, x: f64) -> f64 {
    let mut term = 1.0 / s;
    let mut acc = term;
    for n in 1..500 {
        term *= x / (s + n as f64);
        acc += term;
        if term < 1e-18 * acc {
            break;
        }
    }
    powf(x, s) * exp(-x) * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn reflect_step_examples() {
        let (y, l) = reflect_step(1.0, -0.3);
        assert!((y - 0.7).abs() < 1e-15 && l == 0.0);
        let (y, l) = reflect_step(0.2, -0.5);
        assert!(y == 0.0 && (l - 0.3).abs() < 1e-15);
        assert_eq!(reflect_step(0.0, 1.0), (1.0, 0.0));
    }

    #[test]
    fn bridge_reflection_reduces_to_plain_without_noise() {
        for &(x, inc) in &[(1.0, -0.3), (0.2, -0.5), (0.0, 1.0), (0.05, -0.1)] {
            let m = bridge_minimum(inc, 0.0, 0.7);
            assert_eq!(reflect_with_min(x, inc, m), reflect_step(x, inc));
        }
    }

    #[test]
    fn diffusion_increment_examples() {
        let m = DiffusionModel { drift: Expr::parse("-1").unwrap(), sigma: Expr::parse("0").unwrap() };
        assert!((diffusion_increment(&m, 2.0, 0.1, 0.37).unwrap() + 0.1).abs() < 1e-15);
        let m = DiffusionModel { drift: Expr::parse("0").unwrap(), sigma: Expr::parse("2").unwrap() };
        assert_eq!(diffusion_increment(&m, 0.0, 0.25, 1.0).unwrap(), 1.0);
        let m = DiffusionModel { drift: Expr::parse("-(1+x)^-0.5").unwrap(), sigma: Expr::parse("1").unwrap() };
        assert!((diffusion_increment(&m, 3.0, 0.01, 0.0).unwrap() + 0.005).abs() < 1e-15);
    }

    #[test]
    fn zero_intensity_has_no_jumps() {
        let m = JumpDiffusionModel {
            base: DiffusionModel { drift: Expr::parse("-1").unwrap(), sigma: Expr::parse("1").unwrap() },
            intensity: 0.0,
            kernel: JumpKernel::Translation { law: DisplacementLaw::PointMass { at: 1.0 } },
        };
        let mut r = rng(1);
        for _ in 0..1000 {
            assert!(jump_events(&m, 1.0, 0.5, &mut r).unwrap().is_empty());
        }
    }

    #[test]
    fn exp_displacement_mean_matches_rate() {
        let m = JumpDiffusionModel {
            base: DiffusionModel { drift: Expr::parse("0").unwrap(), sigma: Expr::parse("0").unwrap() },
            intensity: 2.0,
            kernel: JumpKernel::ExpDisplacement { rate: Expr::parse("(x+1)^0.5").unwrap() },
        };
        // single draws from x = 3: use the quantile directly with uniforms
        let mut r = rng(2);
        let n = 1_000_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let u: f64 = r.random();
            let d = -libm::log1p(-u) / 2.0;
            s += d;
            s2 += d * d;
        }
        let mean = s / n as f64;
        let se = libm::sqrt((s2 / n as f64 - mean * mean) / n as f64);
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean} ± {se}");
        // and through jump_events: the first displacement of each step
        let mut s = 0.0;
        let mut cnt = 0usize;
        while cnt < 200_000 {
            let ev = jump_events(&m, 3.0, 1.0, &mut r).unwrap();
            if let Some(d) = ev.first() {
                s += d;
                cnt += 1;
            }
        }
        assert!((s / cnt as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn translation_jump_count_is_poisson_mean() {
        let m = JumpDiffusionModel {
            base: DiffusionModel { drift: Expr::parse("0").unwrap(), sigma: Expr::parse("0").unwrap() },
            intensity: 2.0,
            kernel: JumpKernel::Translation { law: DisplacementLaw::PointMass { at: 1.0 } },
        };
        let mut r = rng(3);
        let n = 1_000_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let c = jump_events(&m, 0.0, 0.5, &mut r).unwrap().len() as f64;
            s += c;
            s2 += c * c;
        }
        let mean = s / n as f64;
        let se = libm::sqrt((s2 / n as f64 - mean * mean) / n as f64);
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn levy_increment_without_jumps_is_drift() {
        let m = LevyModel { drift: -1.0, sigma: 0.0, measure: LevyMeasure::zero() };
        let v = levy_increment(&m, 0.1, 0.01, &mut rng(4)).unwrap();
        assert!((v + 0.1).abs() < 1e-15);
    }

    #[test]
    fn small_jump_compensator_matches_incomplete_gamma() {
        let density = Expr::parse_in("z^-1.5*exp(-z)", 'z').unwrap();
        let table = LevyJumpTable::build(&density, 0.01).unwrap();
        // ∫₀^ε z^{-1/2} e^{-z} dz = γ(1/2, ε)
        let oracle = lower_incomplete_gamma(0.5, 0.01);
        assert!((table.compensator - oracle).abs() <= 1e-8 * oracle, "{} vs {oracle}", table.compensator);
        // μ([ε, ∞)) = Γ(-1/2, ε) = 2(ε^{-1/2}e^{-ε} - Γ(1/2, ε))
        let upper_half = libm::sqrt(core::f64::consts::PI) - lower_incomplete_gamma(0.5, 0.01);
        let rate_oracle = 2.0 * (libm::exp(-0.01) / libm::sqrt(0.01) - upper_half);
        assert!((table.big_jump_rate - rate_oracle).abs() <= 1e-8 * rate_oracle);
        // sampled jumps stay above the cutoff and have the right mean
        let mean_oracle = libm::sqrt(core::f64::consts::PI) - lower_incomplete_gamma(0.5, 0.01);
        let mut r = rng(5);
        let n = 200_000;
        let mut s = 0.0;
        for _ in 0..n {
            let z = table.sample(r.random());
            assert!(z >= 0.01);
            s += z;
        }
        let mean = s / n as f64 * table.big_jump_rate;
        assert!((mean - mean_oracle).abs() < 0.02 * mean_oracle, "{mean} vs {mean_oracle}");
    }

    #[test]
    fn compound_levy_increment_mean() {
        let m = LevyModel {
            drift: 0.0,
            sigma: 0.0,
            measure: LevyMeasure::FiniteCompound { rate: 1.0, law: DisplacementLaw::Exponential { rate: 1.0 } },
        };
        let model = ProcessModel::Levy(m);
        let sim = Simulator::new(&model, &SimConfig::new(0.1, 0.1, 1, 0)).unwrap();
        let mut r = rng(6);
        let mut noise = StepNoise::default();
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            sim.draw_noise(&mut r, &mut noise);
            let inc = sim.apply(1e9, &noise).unwrap().increment;
            s += inc;
            s2 += inc * inc;
        }
        let mean = s / n as f64;
        let se = libm::sqrt((s2 / n as f64 - mean * mean) / n as f64);
        assert!((mean - 0.1).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn zero_noise_step_reflects() {
        let model = ProcessModel::diffusion("-1", "0").unwrap();
        for scheme in [ReflectionScheme::Bridge, ReflectionScheme::Plain] {
            let mut cfg = SimConfig::new(0.1, 1.0, 1, 0);
            cfg.reflection = scheme;
            assert_eq!(step(&model, 0.05, &cfg, &mut rng(7)).unwrap(), 0.0);
        }
    }

    // two-sample Kolmogorov–Smirnov statistic
    fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn zero_intensity_jump_diffusion_matches_diffusion() {
        let diff = ProcessModel::diffusion("-0.5", "1").unwrap();
        let jd = ProcessModel::JumpDiffusion(JumpDiffusionModel {
            base: DiffusionModel { drift: Expr::parse("-0.5").unwrap(), sigma: Expr::parse("1").unwrap() },
            intensity: 0.0,
            kernel: JumpKernel::Translation { law: DisplacementLaw::PointMass { at: 1.0 } },
        });
        let cfg = SimConfig::new(0.1, 1.0, 1, 0);
        let (s1, s2) = (Simulator::new(&diff, &cfg).unwrap(), Simulator::new(&jd, &cfg).unwrap());
        let mut noise = StepNoise::default();
        let (mut r1, mut r2) = (rng(8), rng(9));
        let n = 100_000;
        let a: Vec<f64> = (0..n).map(|_| s1.step(0.3, &mut r1, &mut noise).unwrap().x).collect();
        let b: Vec<f64> = (0..n).map(|_| s2.step(0.3, &mut r2, &mut noise).unwrap().x).collect();
        // 1% critical value for two samples of size n
        let crit = 1.628 * libm::sqrt(2.0 / n as f64);
        assert!(ks(a, b) < crit);
    }

    #[test]
    fn levy_without_jumps_is_reflected_brownian_step() {
        let levy = ProcessModel::Levy(LevyModel { drift: -1.0, sigma: 1.0, measure: LevyMeasure::zero() });
        let diff = ProcessModel::diffusion("-1", "1").unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 1, 0);
        let (s1, s2) = (Simulator::new(&levy, &cfg).unwrap(), Simulator::new(&diff, &cfg).unwrap());
        let mut noise = StepNoise::default();
        let mut r = rng(10);
        for _ in 0..10_000 {
            s1.draw_noise(&mut r, &mut noise);
            for &x in &[0.0, 0.05, 1.0] {
                assert_eq!(s1.apply(x, &noise).unwrap(), s2.apply(x, &noise).unwrap());
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn state_stays_nonnegative_and_local_time_balances(seed in 0u64..1000, x0 in 0.0f64..3.0, plain in proptest::bool::ANY) {
            let model = ProcessModel::JumpDiffusion(JumpDiffusionModel {
                base: DiffusionModel { drift: Expr::parse("-3*(x+1)^-0.5").unwrap(), sigma: Expr::parse("1").unwrap() },
                intensity: 2.0,
                kernel: JumpKernel::ExpDisplacement { rate: Expr::parse("(x+1)^0.5").unwrap() },
            });
            let mut cfg = SimConfig::new(0.01, 1.0, 1, 0);
            if plain { cfg.reflection = ReflectionScheme::Plain; }
            let sim = Simulator::new(&model, &cfg).unwrap();
            let mut r = rng(seed);
            let mut noise = StepNoise::default();
            let (mut x, mut incs, mut pushes) = (x0, 0.0, 0.0);
            for _ in 0..500 {
                let o = sim.step(x, &mut r, &mut noise).unwrap();
                proptest::prop_assert!(o.x >= 0.0);
                incs += o.increment;
                pushes += o.pushed;
                x = o.x;
            }
            proptest::prop_assert!((x - incs - pushes - x0).abs() < 1e-9);
        }

        #[test]
        fn pure_subordinator_paths_are_nondecreasing(seed in 0u64..1000) {
            let model = ProcessModel::Levy(LevyModel {
                drift: 0.0,
                sigma: 0.0,
                measure: LevyMeasure::FiniteCompound { rate: 3.0, law: DisplacementLaw::Lomax { shape: 1.5, scale: 1.0 } },
            });
            let sim = Simulator::new(&model, &SimConfig::new(0.05, 1.0, 1, 0)).unwrap();
            let mut r = rng(seed);
            let mut noise = StepNoise::default();
            let mut x = 0.0;
            for _ in 0..200 {
                let y = sim.step(x, &mut r, &mut noise).unwrap().x;
                proptest::prop_assert!(y >= x);
                x = y;
            }
        }
    }

    #[test]
    fn local_time_identity_is_exact_for_dyadic_increments() {
        let incs = [0.5, -0.75, -0.25, 1.0, -2.0, 0.125];
        let (mut x, mut sum_inc, mut sum_push) = (0.25f64, 0.0, 0.0);
        for &i in &incs {
            let (y, l) = reflect_step(x, i);
            sum_inc += i;
            sum_push += l;
            x = y;
        }
        assert_eq!(x - sum_inc - sum_push, 0.25);
    }

    #[test]
    fn reflected_bm_long_run_mean() {
        // stationary law of reflected BM with drift -1/2, sigma 1 is Exp(1)
        let model = ProcessModel::diffusion("-0.5", "1").unwrap();
        let cfg = SimConfig::new(0.01, 2000.0, 1, 0);
        let sim = Simulator::new(&model, &cfg).unwrap();
        let mut r = rng(11);
        let mut noise = StepNoise::default();
        let n = cfg.n_steps();
        let (mut x, mut s, mut c) = (0.0, 0.0, 0u64);
        for i in 0..n {
            x = sim.step(x, &mut r, &mut noise).unwrap().x;
            if i >= n / 2 {
                s += x;
                c += 1;
            }
        }
        let mean = s / c as f64;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }
}
