//! Synchronous coupling of two reflected copies, survival of the meeting
//! time, and the Monte Carlo supermartingale audit of
//! K(t) = G(t∧τ, V(X(t∧τ))).
//!
//! Every path draws from its own ChaCha8 stream keyed by (master seed, path
//! index, purpose), so results do not depend on how paths are scheduled.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lyapunov::LyapunovSpec;
use crate::numeric::{self, wilson_interval, MeanEstimate};
use crate::process::{DisplacementLaw, ModelError, ProcessModel, SimConfig, Simulator, StepNoise};
use crate::rate::{RateError, RateKernel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error("start points must satisfy 0 <= x1 <= x2, got x1 = {x1}, x2 = {x2}")]
    Unordered { x1: f64, x2: f64 },
    #[error("time {t} is not a stored checkpoint")]
    NotACheckpoint { t: f64 },
    #[error("time {t} is beyond the horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("dt = {dt} is too large: dt * Lip(g) = {product} must be < 1")]
    StepTooLarge { dt: f64, product: f64 },
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("rate function: {0}")]
    Rate(#[from] RateError),
    #[error("invalid initial law: {0}")]
    InitialLaw(String),
}

/// Runs `n` independent path jobs and returns their results in path order.
pub trait PathExecutor: Sync {
    fn map_paths<T, F>(&self, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send;
}

/// Runs paths one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl PathExecutor for Sequential {
    fn map_paths<T, F>(&self, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Purpose tags for per-path RNG streams.
pub const STREAM_DYNAMICS: u64 = 0;
pub const STREAM_INITIAL: u64 = 1;
pub const STREAM_SINGLE: u64 = 2;

pub fn path_rng(master_seed: u64, path: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((path << 2) | purpose);
    rng
}

/// Law of a starting point, sampled by its quantile function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass { at: f64 },
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<(), CouplingError> {
        let ok = match *self {
            InitialLaw::PointMass { at } => at >= 0.0,
            InitialLaw::Exponential { rate } => rate > 0.0,
            InitialLaw::Uniform { lo, hi } => lo >= 0.0 && hi >= lo,
        };
        if ok {
            Ok(())
        } else {
            Err(CouplingError::InitialLaw(format!("{self:?}")))
        }
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        match *self {
            InitialLaw::PointMass { at } => at,
            InitialLaw::Exponential { rate } => DisplacementLaw::Exponential { rate }.inverse_cdf(u),
            InitialLaw::Uniform { lo, hi } => lo + (hi - lo) * u,
        }
    }

    /// (ρ, V) by quadrature.
    pub fn expect_v(&self, v: &LyapunovSpec) -> Result<f64, numeric::NumericError> {
        match *self {
            InitialLaw::PointMass { at } => Ok(v.value(at)),
            InitialLaw::Exponential { rate } => DisplacementLaw::Exponential { rate }.expect(|z| v.value(z)),
            InitialLaw::Uniform { lo, hi } => {
                if hi == lo {
                    Ok(v.value(lo))
                } else {
                    Ok(numeric::integrate(|z| v.value(z), lo, hi, 1e-12, 0.0)? / (hi - lo))
                }
            }
        }
    }
}

/// Where the two copies start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Points { x1: f64, x2: f64 },
    Laws { law1: InitialLaw, law2: InitialLaw },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingOptions {
    /// Stop a path pair once it has met; later states are then not stored.
    pub stop_after_meet: bool,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self { stop_after_meet: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PairRecord {
    meet: Option<u64>,
    hit: Option<u64>,
    states: Vec<Option<(f64, f64)>>,
    violations: u64,
    hit_before_meet: bool,
    swapped: bool,
}

/// Outcome of [`coupled_paths`], stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledSample {
    pub dt: f64,
    pub horizon_steps: u64,
    pub n_paths: u64,
    pub checkpoints: Vec<f64>,
    pub checkpoint_steps: Vec<u64>,
    /// First step index with X₁ = X₂.
    pub meet_step: Vec<Option<u64>>,
    /// First step index at which X₂ touches 0, if seen before the path
    /// was stopped.
    pub hit_step: Vec<Option<u64>>,
    /// (X₁, X₂) at each checkpoint, path-major; `None` once met.
    pub states: Vec<Option<(f64, f64)>>,
    pub order_violations: u64,
    /// Paths with τ < τ₀; must be 0.
    pub hit_before_meet: u64,
    /// Initial draws with X₁(0) > X₂(0), swapped before simulation.
    pub unordered_starts: u64,
    pub tainted: bool,
}

impl CoupledSample {
    pub fn checkpoint_index(&self, t: f64) -> Result<usize, CouplingError> {
        self.checkpoints
            .iter()
            .position(|&c| numeric::abs(c - t) <= 1e-9 * t.max(1.0))
            .ok_or(CouplingError::NotACheckpoint { t })
    }

    pub fn state(&self, path: usize, checkpoint: usize) -> Option<(f64, f64)> {
        self.states[path * self.checkpoints.len() + checkpoint]
    }

    /// Whether the pair has not met by step `s`.
    pub fn alive_at_step(&self, path: usize, s: u64) -> bool {
        match self.meet_step[path] {
            None => true,
            Some(m) => m > s,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    sim: &Simulator,
    mut x1: f64,
    mut x2: f64,
    steps: u64,
    checkpoint_steps: &[u64],
    rng: &mut ChaCha8Rng,
    opts: CouplingOptions,
    swapped: bool,
) -> Result<PairRecord, ModelError> {
    let mut rec = PairRecord {
        meet: None,
        hit: None,
        states: alloc::vec![None; checkpoint_steps.len()],
        violations: 0,
        hit_before_meet: false,
        swapped,
    };
    let mut noise = StepNoise::default();
    let mut next_cp = 0usize;
    let mut record = |rec: &mut PairRecord, s: u64, x1: f64, x2: f64, met: bool| {
        while next_cp < checkpoint_steps.len() && checkpoint_steps[next_cp] == s {
            rec.states[next_cp] = if met { None } else { Some((x1, x2)) };
            next_cp += 1;
        }
    };
    if x1 == x2 {
        rec.meet = Some(0);
        if x2 == 0.0 {
            rec.hit = Some(0);
        }
    } else if x2 == 0.0 {
        rec.hit = Some(0);
    }
    let met = rec.meet.is_some();
    record(&mut rec, 0, x1, x2, met);
    for s in 1..=steps {
        if rec.meet.is_some() && opts.stop_after_meet {
            break;
        }
        sim.draw_noise(rng, &mut noise);
        let o2 = sim.apply(x2, &noise)?;
        if rec.meet.is_some() {
            x2 = o2.x;
            x1 = x2;
        } else {
            let o1 = sim.apply(x1, &noise)?;
            x2 = o2.x;
            if o2.touched_zero() {
                // X₁ ≤ X₂ forces X₁ to be at 0 when X₂ touches it
                if rec.hit.is_none() {
                    rec.hit = Some(s);
                }
                x1 = x2;
            } else {
                x1 = o1.x;
                if x1 > x2 {
                    rec.violations += 1;
                }
            }
            if x1 == x2 {
                rec.meet = Some(s);
                if let Some(h) = rec.hit {
                    rec.hit_before_meet |= h < s;
                }
            }
        }
        if rec.hit.is_none() && o2.touched_zero() {
            rec.hit = Some(s);
        }
        let met = rec.meet.is_some();
        record(&mut rec, s, x1, x2, met);
    }
    Ok(rec)
}

fn check_lipschitz(model: &ProcessModel, config: &SimConfig) -> Result<(), CouplingError> {
    if model.constant_sigma() {
        let lip = model.drift_lipschitz_estimate()?;
        let product = config.dt * lip;
        if !(product < 1.0) {
            return Err(CouplingError::StepTooLarge { dt: config.dt, product });
        }
    }
    Ok(())
}

fn checkpoint_steps(config: &SimConfig, checkpoints: &[f64]) -> Result<Vec<u64>, CouplingError> {
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        if !(t >= 0.0 && t <= config.horizon * (1.0 + 1e-12)) {
            return Err(CouplingError::BeyondHorizon { t, horizon: config.horizon });
        }
        out.push(config.step_of(t));
    }
    Ok(out)
}

/// Simulates `config.n_paths` coupled pairs from `start`, driven by the
/// same Gaussian, bridge and jump draws.
pub fn coupled_paths<E: PathExecutor>(
    model: &ProcessModel,
    start: &StartSpec,
    config: &SimConfig,
    checkpoints: &[f64],
    opts: CouplingOptions,
    exec: &E,
) -> Result<CoupledSample, CouplingError> {
    match start {
        StartSpec::Points { x1, x2 } => {
            if !(*x1 >= 0.0 && x1 <= x2) {
                return Err(CouplingError::Unordered { x1: *x1, x2: *x2 });
            }
        }
        StartSpec::Laws { law1, law2 } => {
            law1.validate()?;
            law2.validate()?;
        }
    }
    let sim = Simulator::new(model, config)?;
    check_lipschitz(model, config)?;
    // sort checkpoints so the per-path recorder can walk them in order
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    let cp_steps_orig = checkpoint_steps(config, checkpoints)?;
    order.sort_by_key(|&i| cp_steps_orig[i]);
    let cps: Vec<f64> = order.iter().map(|&i| checkpoints[i]).collect();
    let cp_steps: Vec<u64> = order.iter().map(|&i| cp_steps_orig[i]).collect();
    let steps = config.n_steps();
    let seed = config.master_seed;
    let records = exec.map_paths(config.n_paths, |p| {
        let (mut a, mut b) = match start {
            StartSpec::Points { x1, x2 } => (*x1, *x2),
            StartSpec::Laws { law1, law2 } => {
                let mut r = path_rng(seed, p, STREAM_INITIAL);
                let u: f64 = rand::Rng::random(&mut r);
                (law1.inverse_cdf(u), law2.inverse_cdf(u))
            }
        };
        let swapped = a > b;
        if swapped {
            core::mem::swap(&mut a, &mut b);
        }
        let mut rng = path_rng(seed, p, STREAM_DYNAMICS);
        run_pair(&sim, a, b, steps, &cp_steps, &mut rng, opts, swapped)
    });
    let n_cp = cps.len();
    let mut sample = CoupledSample {
        dt: config.dt,
        horizon_steps: steps,
        n_paths: config.n_paths,
        checkpoints: cps,
        checkpoint_steps: cp_steps,
        meet_step: Vec::with_capacity(records.len()),
        hit_step: Vec::with_capacity(records.len()),
        states: Vec::with_capacity(records.len() * n_cp),
        order_violations: 0,
        hit_before_meet: 0,
        unordered_starts: 0,
        tainted: false,
    };
    for r in records {
        let r = r?;
        sample.meet_step.push(r.meet);
        sample.hit_step.push(r.hit);
        sample.states.extend_from_slice(&r.states);
        sample.order_violations += r.violations;
        sample.hit_before_meet += r.hit_before_meet as u64;
        sample.unordered_starts += r.swapped as u64;
    }
    sample.tainted = sample.order_violations > 0 || sample.hit_before_meet > 0;
    Ok(sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub t: f64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub alive: u64,
    pub n: u64,
}

/// P̂(τ₀ > t) with a Wilson 95% interval.
pub fn survival(sample: &CoupledSample, t: f64) -> Result<SurvivalEstimate, CouplingError> {
    let horizon = sample.horizon_steps as f64 * sample.dt;
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(CouplingError::BeyondHorizon { t, horizon });
    }
    let s = numeric::round(t / sample.dt) as u64;
    let alive = (0..sample.meet_step.len()).filter(|&p| sample.alive_at_step(p, s)).count() as u64;
    let n = sample.n_paths;
    let (ci_lo, ci_hi) = wilson_interval(alive, n);
    Ok(SurvivalEstimate { t, estimate: alive as f64 / n as f64, ci_lo, ci_hi, alive, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub t: f64,
    pub estimate: MeanEstimate,
    /// Mean and standard error of K(t) − K(previous t), paired by path.
    pub increment: Option<MeanEstimate>,
    pub nonincreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleAudit {
    pub x0: f64,
    pub k0: f64,
    pub points: Vec<KPoint>,
    /// Ê[K] nonincreasing within 2 standard errors between grid neighbours.
    pub nonincreasing: bool,
}

/// Estimates E[K(t)] for one copy started at `x0`, K(t) = G(t∧τ, V(X(t∧τ)))
/// with τ the first time X touches 0.
pub fn supermartingale_audit<E: PathExecutor>(
    model: &ProcessModel,
    v: &LyapunovSpec,
    kernel: &RateKernel,
    x0: f64,
    config: &SimConfig,
    t_grid: &[f64],
    exec: &E,
) -> Result<SupermartingaleAudit, CouplingError> {
    let sim = Simulator::new(model, config)?;
    let mut grid: Vec<f64> = t_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let steps = checkpoint_steps(config, &grid)?;
    let last = steps.last().copied().unwrap_or(0);
    let n_grid = grid.len();
    let seed = config.master_seed;
    let dt = config.dt;
    let v0 = v.value(0.0);
    let rows = exec.map_paths(config.n_paths, |p| -> Result<Vec<f64>, CouplingError> {
        let mut rng = path_rng(seed, p, STREAM_SINGLE);
        let mut noise = StepNoise::default();
        let mut out = Vec::with_capacity(n_grid);
        let mut x = x0;
        let mut tau: Option<u64> = if x0 == 0.0 { Some(0) } else { None };
        let mut j = 0usize;
        let mut s = 0u64;
        loop {
            while j < n_grid && steps[j] == s {
                let k = match tau {
                    Some(ts) => kernel.g(ts as f64 * dt, v0)?,
                    None => kernel.g(s as f64 * dt, v.value(x))?,
                };
                out.push(k);
                j += 1;
            }
            if s >= last {
                break;
            }
            s += 1;
            if tau.is_none() {
                let o = sim.step(x, &mut rng, &mut noise)?;
                x = o.x;
                if o.touched_zero() {
                    tau = Some(s);
                }
            }
        }
        Ok(out)
    });
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        table.push(r?);
    }
    let mut points = Vec::with_capacity(n_grid);
    let mut all_ok = true;
    let mut column = Vec::with_capacity(table.len());
    let mut diffs = Vec::with_capacity(table.len());
    for j in 0..n_grid {
        column.clear();
        column.extend(table.iter().map(|r| r[j]));
        let estimate = MeanEstimate::from_slice(&column);
        let (increment, ok) = if j == 0 {
            (None, true)
        } else {
            diffs.clear();
            diffs.extend(table.iter().map(|r| r[j] - r[j - 1]));
            let d = MeanEstimate::from_slice(&diffs);
            let ok = d.mean <= 2.0 * d.std_error + 1e-12 * numeric::abs(estimate.mean).max(1.0);
            (Some(d), ok)
        };
        all_ok &= ok;
        points.push(KPoint { t: grid[j], estimate, increment, nonincreasing: ok });
    }
    Ok(SupermartingaleAudit { x0, k0: v.value(x0), points, nonincreasing: all_ok })
}
