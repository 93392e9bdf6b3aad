//! Command pipelines: each takes a validated config and returns a report
//! that `output` serialises.

use ergoline_core::coupling::{supermartingale_audit, PathExecutor, SupermartingaleAudit};
use ergoline_core::estimate::{
    self, bound_from_weight, start_weight, stationary_estimate, BoundReport, EmpiricalStationary, StationaryOptions,
};
use ergoline_core::lyapunov::{
    self, drift_check, fit_phi, levy_find_lambda, levy_k_slope_at_zero, mean_drift, power_affine_feasible,
    LambdaSearch, LyapunovSpec, PowerAffineFeasibility, RateCertificate,
};
use ergoline_core::process::ProcessModel;
use ergoline_core::rate::{decompose, PhiSpec, ProductDecomposition, RateKernel, YoungPair};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, PhiChoice, WeightChoice};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("drift certification: {0}")]
    Certify(#[from] lyapunov::CertifyError),
    #[error("rate calculus: {0}")]
    Rate(#[from] ergoline_core::rate::RateError),
    #[error("estimation: {0}")]
    Estimate(#[from] estimate::EstimateError),
    #[error("coupling: {0}")]
    Coupling(#[from] ergoline_core::coupling::CouplingError),
    #[error("the drift certificate did not pass (worst margin {worst_margin} at x = {worst_at})")]
    CertificateFailed { worst_margin: f64, worst_at: f64 },
}

impl RunError {
    /// Exit code for the command-line contract: 1 for a failed certificate,
    /// 2 for configuration and model errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::CertificateFailed { .. } => 1,
            RunError::Estimate(estimate::EstimateError::CertificateFailed) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRow {
    pub x: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyReport {
    pub certificate: RateCertificate,
    pub phi_fitted: bool,
    /// m(x) on a few reference points for jump models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_drift: Option<Vec<DriftRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levy_lambda: Option<LambdaSearch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levy_k_slope_at_zero: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<PowerAffineFeasibility>,
}

pub const DRIFT_TABLE_POINTS: [f64; 6] = [0.0, 0.5, 1.0, 3.0, 10.0, 100.0];

/// Resolves φ (fitting it if asked) and checks the drift condition.
pub fn certify(cfg: &ExperimentConfig) -> Result<CertifyReport, RunError> {
    let grid = cfg.grid.points();
    let (phi, fitted) = match &cfg.phi {
        PhiChoice::Spec(phi) => (phi.clone(), false),
        PhiChoice::Fit { fit } => (fit_phi(&cfg.model, &cfg.lyapunov, *fit, &grid)?, true),
    };
    let mut certificate = drift_check(&cfg.model, &cfg.lyapunov, &phi, &grid)?;
    let mean_drift = match &cfg.model {
        ProcessModel::Diffusion(_) => None,
        _ => {
            let mut rows = Vec::new();
            for &x in &DRIFT_TABLE_POINTS {
                rows.push(DriftRow { x, m: mean_drift(&cfg.model, x)? });
            }
            Some(rows)
        }
    };
    let (levy_lambda, slope) = match &cfg.model {
        ProcessModel::Levy(m) => {
            let search = match levy_find_lambda(m) {
                Ok(s) => Some(s),
                Err(e) => {
                    certificate.notes.push(format!("lambda search: {e}"));
                    None
                }
            };
            (search, levy_k_slope_at_zero(m).ok())
        }
        _ => (None, None),
    };
    let feasibility = match (&cfg.feasibility, &cfg.lyapunov) {
        (Some(f), LyapunovSpec::PowerAffine { lambda, beta }) => {
            let r = power_affine_feasible(f.a, f.c, f.sigma, *beta)?;
            certificate.notes.push(r.note.clone());
            if !(r.nonempty && *lambda >= r.lambda_lo && *lambda < r.lambda_hi) {
                certificate.notes.push(format!(
                    "lambda = {lambda} is outside the feasible interval [{}, {})",
                    r.lambda_lo, r.lambda_hi
                ));
            }
            Some(r)
        }
        (Some(_), _) => {
            return Err(
                ConfigError::Invalid("`feasibility` applies to power_affine Lyapunov functions only".into()).into()
            )
        }
        _ => None,
    };
    Ok(CertifyReport {
        certificate,
        phi_fitted: fitted,
        mean_drift,
        levy_lambda,
        levy_k_slope_at_zero: slope,
        feasibility,
    })
}

pub fn require_pass(cfg: &ExperimentConfig, cert: &RateCertificate) -> Result<(), RunError> {
    if cfg.require_certificate && !cert.pass {
        return Err(RunError::CertificateFailed { worst_margin: cert.worst_margin, worst_at: cert.worst_at });
    }
    Ok(())
}

pub fn decomposition(cfg: &ExperimentConfig, phi: &PhiSpec) -> Result<ProductDecomposition, RunError> {
    let kernel = RateKernel::new(phi.clone())?;
    Ok(match cfg.weight {
        WeightChoice::Tv => ProductDecomposition::total_variation(&kernel, &cfg.lyapunov)?,
        WeightChoice::Young => decompose(&kernel, &cfg.lyapunov, &YoungPair::new(cfg.young_p)?)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCurve {
    pub certificate_pass: bool,
    pub decomposition: ProductDecomposition,
    pub start_weight: f64,
    pub rows: Vec<(f64, f64)>,
}

pub fn bound(cfg: &ExperimentConfig) -> Result<BoundCurve, RunError> {
    let cert = certify(cfg)?.certificate;
    require_pass(cfg, &cert)?;
    let d = decomposition(cfg, &cert.phi)?;
    let w = start_weight(cfg.start()?, &cfg.lyapunov);
    let rows = cfg.checkpoints.iter().map(|&t| (t, bound_from_weight(&d, w, t))).collect();
    Ok(BoundCurve { certificate_pass: cert.pass, decomposition: d, start_weight: w, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOutcome {
    pub report: BoundReport,
    pub certificate: RateCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supermartingale: Option<SupermartingaleAudit>,
}

pub fn verify<E: PathExecutor>(cfg: &ExperimentConfig, exec: &E) -> Result<VerifyOutcome, RunError> {
    let cert = certify(cfg)?.certificate;
    require_pass(cfg, &cert)?;
    let d = decomposition(cfg, &cert.phi)?;
    let sim = cfg.sim()?;
    let report = estimate::verify_bound(
        &cfg.model,
        &cert,
        &d,
        cfg.start()?,
        sim,
        &cfg.checkpoints,
        cfg.require_certificate,
        exec,
    )?;
    let supermartingale = match &cfg.audit {
        Some(a) => {
            let kernel = RateKernel::new(cert.phi.clone())?;
            Some(supermartingale_audit(&cfg.model, &cfg.lyapunov, &kernel, a.x0, sim, &a.t_grid, exec)?)
        }
        None => None,
    };
    Ok(VerifyOutcome { report, certificate: cert, supermartingale })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    /// Equal-width bins on [0, max sample].
    pub fn build(samples: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let hi = samples.iter().copied().fold(0.0f64, f64::max);
        let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
        let mut counts = vec![0u64; bins];
        for &x in samples {
            let i = ((x / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { lo: 0.0, width, counts, total: samples.len() as u64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryOutcome {
    pub estimate: EmpiricalStationary,
    pub histogram: Histogram,
    pub certificate_pass: bool,
}

pub fn stationary<E: PathExecutor>(cfg: &ExperimentConfig, exec: &E) -> Result<StationaryOutcome, RunError> {
    let cert = certify(cfg)?.certificate;
    require_pass(cfg, &cert)?;
    let st = cfg.stationary.unwrap_or_default();
    let opts = StationaryOptions { x0: st.x0, burn_in: st.burn_in, thin: st.thin };
    let estimate = stationary_estimate(&cfg.model, &cfg.lyapunov, cfg.sim()?, opts, exec)?;
    let histogram = Histogram::build(&estimate.samples, st.bins);
    Ok(StationaryOutcome { estimate, histogram, certificate_pass: cert.pass })
}
