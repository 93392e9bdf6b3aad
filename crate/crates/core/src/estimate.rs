//! Empirical distances from coupled samples, the theoretical bound
//! 2·V(x₂)/h(t), bound verification, and stationary-law estimates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{
    coupled_paths, path_rng, CoupledSample, CouplingError, CouplingOptions, InitialLaw, PathExecutor, StartSpec,
    STREAM_SINGLE,
};
use crate::lyapunov::{LyapunovSpec, RateCertificate};
use crate::numeric::{self, wilson_interval, MeanEstimate, Z95};
use crate::process::{ModelError, ProcessModel, SimConfig, Simulator, StepNoise};
use crate::rate::{ProductDecomposition, SpaceWeight};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("coupling: {0}")]
    Coupling(#[from] CouplingError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("the drift certificate did not pass")]
    CertificateFailed,
    #[error("invalid estimator input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: u64,
}

/// Coupling upper estimate of ‖P^t(x₁,·) − P^t(x₂,·)‖_U: the mean of
/// [U(X₁(t)) + U(X₂(t))]·1{τ₀ > t}. With U ≡ 1 this is 2·P̂(τ₀ > t) with a
/// doubled Wilson interval.
pub fn empirical_u_distance(
    sample: &CoupledSample,
    u: &SpaceWeight,
    t: f64,
) -> Result<DistanceEstimate, EstimateError> {
    let j = sample.checkpoint_index(t)?;
    let n = sample.n_paths;
    let cp = sample.checkpoint_steps[j];
    if u.is_one() {
        let alive = (0..n as usize).filter(|&p| sample.alive_at_step(p, cp)).count() as u64;
        let p = alive as f64 / n as f64;
        let (lo, hi) = wilson_interval(alive, n);
        let se = numeric::sqrt(p * (1.0 - p) / n as f64);
        return Ok(DistanceEstimate { t, estimate: 2.0 * p, std_error: 2.0 * se, ci_lo: 2.0 * lo, ci_hi: 2.0 * hi, n });
    }
    let values: Vec<f64> = (0..n as usize)
        .map(|p| match sample.state(p, j) {
            Some((a, b)) => u.eval(a) + u.eval(b),
            None => 0.0,
        })
        .collect();
    let m = MeanEstimate::from_slice(&values);
    let (lo, hi) = m.ci95();
    Ok(DistanceEstimate { t, estimate: m.mean, std_error: m.std_error, ci_lo: lo.max(0.0), ci_hi: hi, n })
}

/// 2·V(x₂)/h(t); +∞ where h(t) = 0.
pub fn theoretical_bound(decomp: &ProductDecomposition, v: &LyapunovSpec, x2: f64, t: f64) -> f64 {
    bound_from_weight(decomp, v.value(x2), t)
}

/// 2·w/h(t) for a weight w = V(x₂) or (ρ₁∨ρ₂, V).
pub fn bound_from_weight(decomp: &ProductDecomposition, w: f64, t: f64) -> f64 {
    let h = decomp.h(t);
    if h > 0.0 {
        2.0 * w / h
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: f64,
    pub empirical: DistanceEstimate,
    pub bound: f64,
    /// bound − empirical CI lower end
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub status: BoundStatus,
    pub rows: Vec<BoundRow>,
    /// V(x₂), or (ρ₁∨ρ₂, V) for random starts.
    pub start_weight: f64,
    pub decomposition: ProductDecomposition,
    pub certificate_pass: bool,
    pub certificate_phi: crate::rate::PhiSpec,
    pub order_violations: u64,
    pub hit_before_meet: u64,
    pub unordered_starts: u64,
    pub tainted: bool,
    pub n_paths: u64,
    pub dt: f64,
    pub warnings: Vec<String>,
}

/// (ρ₁∨ρ₂, V) for the starting configuration.
pub fn start_weight(start: &StartSpec, v: &LyapunovSpec) -> f64 {
    match start {
        StartSpec::Points { x2, .. } => v.value(*x2),
        StartSpec::Laws { law1, law2 } => {
            let n = 20_000;
            let q = |law: &InitialLaw| -> Vec<f64> {
                (0..n).map(|i| law.inverse_cdf((i as f64 + 0.5) / n as f64)).collect()
            };
            stochastic_max_expectation(&q(law1), &q(law2), |x| v.value(x))
        }
    }
}

/// Simulates coupled pairs and compares the empirical U-distance with the
/// theoretical bound at every t. PASS needs every CI lower end ≤ bound and
/// no order violations.
#[allow(clippy::too_many_arguments)]
pub fn verify_bound<E: PathExecutor>(
    model: &ProcessModel,
    cert: &RateCertificate,
    decomp: &ProductDecomposition,
    start: &StartSpec,
    config: &SimConfig,
    t_grid: &[f64],
    require_certificate: bool,
    exec: &E,
) -> Result<BoundReport, EstimateError> {
    if require_certificate && !cert.pass {
        return Err(EstimateError::CertificateFailed);
    }
    let mut warnings = Vec::new();
    if !cert.pass {
        warnings.push(String::from("drift certificate did not pass; bound is not guaranteed"));
    }
    let sample = coupled_paths(model, start, config, t_grid, CouplingOptions { stop_after_meet: true }, exec)?;
    let w = start_weight(start, &cert.v);
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let empirical = empirical_u_distance(&sample, &decomp.u, t)?;
        let bound = bound_from_weight(decomp, w, t);
        let pass = empirical.ci_lo <= bound;
        rows.push(BoundRow { t, empirical, bound, margin: bound - empirical.ci_lo, pass });
    }
    if sample.order_violations > 0 {
        warnings.push(format!(
            "{} order violations between the coupled copies (discretization artifact)",
            sample.order_violations
        ));
    }
    if sample.unordered_starts > 0 {
        warnings.push(format!("{} initial pairs were not ordered and were swapped", sample.unordered_starts));
    }
    let status = if sample.tainted {
        BoundStatus::Inconclusive
    } else if rows.iter().all(|r| r.pass) {
        BoundStatus::Pass
    } else {
        BoundStatus::Fail
    };
    Ok(BoundReport {
        status,
        rows,
        start_weight: w,
        decomposition: decomp.clone(),
        certificate_pass: cert.pass,
        certificate_phi: cert.phi.clone(),
        order_violations: sample.order_violations,
        hit_before_meet: sample.hit_before_meet,
        unordered_starts: sample.unordered_starts,
        tainted: sample.tainted,
        n_paths: sample.n_paths,
        dt: sample.dt,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryOptions {
    pub x0: f64,
    /// Defaults to half the horizon.
    pub burn_in: Option<f64>,
    /// Defaults to the integrated autocorrelation time, in steps.
    pub thin: Option<u64>,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self { x0: 0.0, burn_in: None, thin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStationary {
    #[serde(skip)]
    pub samples: Vec<f64>,
    pub mean_x: MeanEstimate,
    /// (π, V)
    pub mean_v: MeanEstimate,
    pub second_moment: f64,
    pub burn_in: f64,
    pub thin: u64,
    /// Integrated autocorrelation time of X in steps (batch means).
    pub iat_steps: f64,
    pub effective_sample_size: f64,
    pub n_raw: u64,
    pub n_kept: u64,
    /// Running mean of V agrees between the two halves of the harvest.
    pub converged: bool,
    pub min_state: f64,
}

const BATCHES_PER_PATH: usize = 32;

struct Batches {
    means_x: Vec<f64>,
    means_v: Vec<f64>,
}

fn batch_means(series: &[f64], b: usize, v: &LyapunovSpec) -> Batches {
    let nb = series.len() / b;
    let mut out = Batches { means_x: Vec::with_capacity(nb), means_v: Vec::with_capacity(nb) };
    for k in 0..nb {
        let chunk = &series[k * b..(k + 1) * b];
        out.means_x.push(numeric::sum(chunk.iter().copied()) / b as f64);
        out.means_v.push(numeric::sum(chunk.iter().map(|&x| v.value(x))) / b as f64);
    }
    out
}

fn variance(xs: &[f64]) -> f64 {
    let m = MeanEstimate::from_slice(xs);
    m.std_error * m.std_error * m.n as f64
}

/// Long-run sample of the reflected process: each path runs from `x0` to
/// the horizon and states after burn-in are harvested.
pub fn stationary_estimate<E: PathExecutor>(
    model: &ProcessModel,
    v: &LyapunovSpec,
    config: &SimConfig,
    opts: StationaryOptions,
    exec: &E,
) -> Result<EmpiricalStationary, EstimateError> {
    let sim = Simulator::new(model, config)?;
    let steps = config.n_steps();
    let burn_in = opts.burn_in.unwrap_or(config.horizon / 2.0);
    if !(burn_in >= 0.0 && burn_in < config.horizon) {
        return Err(EstimateError::Invalid(format!("burn-in {burn_in} must lie in [0, horizon)")));
    }
    let first = config.step_of(burn_in).max(1);
    let seed = config.master_seed;
    let series = exec.map_paths(config.n_paths, |p| -> Result<Vec<f64>, ModelError> {
        let mut rng = path_rng(seed, p, STREAM_SINGLE);
        let mut noise = StepNoise::default();
        let mut x = opts.x0;
        let mut out = Vec::with_capacity((steps + 1 - first) as usize);
        for s in 1..=steps {
            x = sim.step(x, &mut rng, &mut noise)?.x;
            if s >= first {
                out.push(x);
            }
        }
        Ok(out)
    });
    let mut paths = Vec::with_capacity(series.len());
    for s in series {
        paths.push(s?);
    }
    let n_raw: usize = paths.iter().map(|p| p.len()).sum();
    if n_raw < 4 {
        return Err(EstimateError::Invalid("too few harvested states".into()));
    }
    // 32 batches per path
    let len = paths[0].len();
    let b = (len / BATCHES_PER_PATH).max(1);
    let mut all_bx = Vec::new();
    let mut all_bv = Vec::new();
    let mut var_x = 0.0;
    for p in &paths {
        let bt = batch_means(p, b, v);
        all_bx.extend(bt.means_x);
        all_bv.extend(bt.means_v);
        var_x += variance(p);
    }
    var_x /= paths.len() as f64;
    let iat = if var_x > 0.0 && all_bx.len() > 1 { (b as f64 * variance(&all_bx) / var_x).max(1.0) } else { 1.0 };
    let thin = opts.thin.unwrap_or(numeric::ceil(iat) as u64).max(1);
    let samples: Vec<f64> = paths.iter().flat_map(|p| p.iter().step_by(thin as usize).copied()).collect();
    let mean_of = |bs: &[f64]| {
        if bs.len() > 1 {
            MeanEstimate::from_slice(bs)
        } else {
            MeanEstimate::from_slice(&samples)
        }
    };
    let mean_x = mean_of(&all_bx);
    let mean_v = mean_of(&all_bv);
    let second_moment = numeric::sum(samples.iter().map(|x| x * x)) / samples.len() as f64;
    // compare the two halves of the batch sequence
    let half = all_bv.len() / 2;
    let converged = if half >= 2 {
        let a = MeanEstimate::from_slice(&all_bv[..half]);
        let c = MeanEstimate::from_slice(&all_bv[half..]);
        let se = numeric::sqrt(a.std_error * a.std_error + c.std_error * c.std_error);
        numeric::abs(a.mean - c.mean) <= 4.0 * se + 1e-12 * numeric::abs(a.mean).max(1.0)
    } else {
        true
    };
    let min_state = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EmpiricalStationary {
        n_kept: samples.len() as u64,
        samples,
        mean_x,
        mean_v,
        second_moment,
        burn_in,
        thin,
        iat_steps: iat,
        effective_sample_size: n_raw as f64 / iat,
        n_raw: n_raw as u64,
        converged,
        min_state,
    })
}

/// (ρ₁∨ρ₂, V) for empirical laws: V(0) plus the Stieltjes sum of V against
/// the pointwise maximum of the two empirical survival functions.
pub fn stochastic_max_expectation<F: Fn(f64) -> f64>(samples1: &[f64], samples2: &[f64], v: F) -> f64 {
    let sorted = |s: &[f64]| {
        let mut s = s.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        s
    };
    let (a, b) = (sorted(samples1), sorted(samples2));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    // skip mass at or below 0
    while i < a.len() && a[i] <= 0.0 {
        i += 1;
    }
    while j < b.len() && b[j] <= 0.0 {
        j += 1;
    }
    let mut z = 0.0;
    let mut terms = Vec::with_capacity(a.len() + b.len());
    while i < a.len() || j < b.len() {
        let surv = ((a.len() - i) as f64 / na).max((b.len() - j) as f64 / nb);
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        terms.push(surv * (v(next) - v(z)));
        z = next;
        while i < a.len() && a[i] <= z {
            i += 1;
        }
        while j < b.len() && b[j] <= z {
            j += 1;
        }
    }
    v(0.0) + numeric::sum(terms)
}

/// Two-sided 95% normal interval for a plain mean.
pub fn normal_ci(m: &MeanEstimate) -> (f64, f64) {
    (m.mean - Z95 * m.std_error, m.mean + Z95 * m.std_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::Sequential;
    use crate::lyapunov::{drift_check, GridSpec};
    use crate::rate::{decompose, PhiSpec, RateKernel, YoungPair};

    fn bm() -> ProcessModel {
        ProcessModel::diffusion("-1", "1").unwrap()
    }

    fn exp_decomposition() -> (RateKernel, ProductDecomposition) {
        let kernel = RateKernel::new(PhiSpec::Linear { k: 0.5 }).unwrap();
        let d = decompose(&kernel, &LyapunovSpec::Exp { lambda: 1.0 }, &YoungPair::new(2.0).unwrap()).unwrap();
        (kernel, d)
    }

    #[test]
    fn equal_starts_give_zero_distance() {
        let cfg = SimConfig::new(0.01, 2.0, 200, 1);
        let s = coupled_paths(
            &bm(),
            &StartSpec::Points { x1: 1.0, x2: 1.0 },
            &cfg,
            &[0.5, 2.0],
            Default::default(),
            &Sequential,
        )
        .unwrap();
        let (_, d) = exp_decomposition();
        for &t in &[0.5, 2.0] {
            assert_eq!(empirical_u_distance(&s, &d.u, t).unwrap().estimate, 0.0);
            assert_eq!(empirical_u_distance(&s, &SpaceWeight::One, t).unwrap().estimate, 0.0);
        }
        assert!(empirical_u_distance(&s, &SpaceWeight::One, 1.0).is_err());
    }

    #[test]
    fn unit_weight_is_twice_survival() {
        let cfg = SimConfig::new(0.01, 3.0, 1000, 2);
        let s = coupled_paths(
            &bm(),
            &StartSpec::Points { x1: 0.0, x2: 2.0 },
            &cfg,
            &[1.0, 3.0],
            Default::default(),
            &Sequential,
        )
        .unwrap();
        for &t in &[1.0, 3.0] {
            let d = empirical_u_distance(&s, &SpaceWeight::One, t).unwrap();
            let sv = crate::coupling::survival(&s, t).unwrap();
            assert_eq!(d.estimate, 2.0 * sv.estimate);
            assert_eq!(d.ci_lo, 2.0 * sv.ci_lo);
        }
    }

    #[test]
    fn bound_examples() {
        let (_, d) = exp_decomposition();
        let b = theoretical_bound(&d, &LyapunovSpec::Exp { lambda: 1.0 }, 2.0, 2.0);
        assert!((b - 2.0 * core::f64::consts::E).abs() < 1e-12);
        let kernel = RateKernel::new(PhiSpec::Power { c: 1.0, gamma: 0.5 }).unwrap();
        let aff = LyapunovSpec::Affine { c: 1.0 };
        let tv = ProductDecomposition::total_variation(&kernel, &aff).unwrap();
        assert!((theoretical_bound(&tv, &aff, 2.0, 4.0) - 6.0 / 9.0).abs() < 1e-12);
        let pw = decompose(&kernel, &aff, &YoungPair::new(2.0).unwrap()).unwrap();
        assert_eq!(theoretical_bound(&pw, &aff, 2.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn bound_is_monotone() {
        let aff = LyapunovSpec::Affine { c: 1.0 };
        for phi in [PhiSpec::Linear { k: 0.5 }, PhiSpec::Power { c: 2.0, gamma: 0.3 }, PhiSpec::Constant { k: 1.0 }] {
            let kernel = RateKernel::new(phi).unwrap();
            let ds = [
                decompose(&kernel, &aff, &YoungPair::new(3.0).unwrap()).unwrap(),
                ProductDecomposition::total_variation(&kernel, &aff).unwrap(),
            ];
            for d in &ds {
                let ts = numeric::linear_grid(0.0, 20.0, 41);
                for w in ts.windows(2) {
                    assert!(theoretical_bound(d, &aff, 2.0, w[1]) <= theoretical_bound(d, &aff, 2.0, w[0]));
                }
                assert!(theoretical_bound(d, &aff, 1.0, 3.0) <= theoretical_bound(d, &aff, 2.0, 3.0));
            }
        }
    }

    #[test]
    fn verify_identical_starts_passes() {
        let (_, d) = exp_decomposition();
        let v = LyapunovSpec::Exp { lambda: 1.0 };
        let cert = drift_check(&bm(), &v, &PhiSpec::Linear { k: 0.5 }, &GridSpec::default().points()).unwrap();
        assert!(cert.pass);
        let cfg = SimConfig::new(0.01, 4.0, 100, 3);
        let r = verify_bound(
            &bm(),
            &cert,
            &d,
            &StartSpec::Points { x1: 2.0, x2: 2.0 },
            &cfg,
            &[1.0, 2.0, 4.0],
            true,
            &Sequential,
        )
        .unwrap();
        assert_eq!(r.status, BoundStatus::Pass);
        assert!(r.rows.iter().all(|row| row.empirical.estimate == 0.0));
    }

    #[test]
    fn stochastic_max_examples() {
        let aff = |x: f64| 1.0 + x;
        assert!((stochastic_max_expectation(&[1.0], &[3.0], aff) - 4.0).abs() < 1e-12);
        let s = [0.5, 1.5, 2.0, 0.0, 4.0];
        let plug = s.iter().map(|&x| aff(x)).sum::<f64>() / s.len() as f64;
        assert!((stochastic_max_expectation(&s, &s, aff) - plug).abs() < 1e-12);
        let lo = [0.1, 0.2, 0.7, 1.0];
        let hi = [0.3, 0.9, 1.4, 2.5];
        let plug_hi = hi.iter().map(|&x| libm::exp(x)).sum::<f64>() / 4.0;
        assert!((stochastic_max_expectation(&lo, &hi, libm::exp) - plug_hi).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn stochastic_max_dominates_both(a in proptest::collection::vec(0.0f64..10.0, 1..40), b in proptest::collection::vec(0.0f64..10.0, 1..40)) {
            let v = |x: f64| 1.0 + x * x;
            let m = stochastic_max_expectation(&a, &b, v);
            let pa = a.iter().map(|&x| v(x)).sum::<f64>() / a.len() as f64;
            let pb = b.iter().map(|&x| v(x)).sum::<f64>() / b.len() as f64;
            proptest::prop_assert!(m >= pa.max(pb) - 1e-9 * m);
        }
    }

    #[test]
    fn deterministic_stationary_is_point_mass() {
        let model = ProcessModel::diffusion("-1", "0").unwrap();
        let cfg = SimConfig::new(0.01, 10.0, 2, 0);
        let e = stationary_estimate(
            &model,
            &LyapunovSpec::Affine { c: 1.0 },
            &cfg,
            StationaryOptions { x0: 2.0, ..Default::default() },
            &Sequential,
        )
        .unwrap();
        assert_eq!(e.mean_x.mean, 0.0);
        assert_eq!(e.mean_v.mean, 1.0);
        assert!(e.converged);
    }

    #[test]
    fn stationary_reflected_bm() {
        let model = ProcessModel::diffusion("-0.5", "1").unwrap();
        let cfg = SimConfig::new(0.01, 2000.0, 8, 4);
        let e = stationary_estimate(&model, &LyapunovSpec::Affine { c: 1.0 }, &cfg, Default::default(), &Sequential)
            .unwrap();
        assert!((e.mean_x.mean - 1.0).abs() < 0.1, "{:?}", e.mean_x);
        assert!((e.mean_v.mean - 2.0).abs() < 0.1);
        assert!(e.min_state >= 0.0);
        assert!(e.thin >= 1 && e.effective_sample_size > 100.0);
    }
}
