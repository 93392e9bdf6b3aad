//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ergoline::config::{ExperimentConfig, LoadedConfig};
use ergoline::exec::RayonExecutor;
use ergoline::output::{self, Stamp};
use ergoline::run;
use ergoline_core::coupling::path_rng;
use ergoline_core::estimate::BoundStatus;
use ergoline_core::lyapunov::{
    drift_check, levy_find_lambda, levy_k, levy_k_slope_at_zero, mean_drift, GridSpec, LyapunovSpec,
};
use ergoline_core::numeric::{geometric_grid, linear_grid};
use ergoline_core::process::{DisplacementLaw, LevyMeasure, LevyModel, ProcessModel};
use ergoline_core::rate::{
    audit_decomposition, decompose, lemma_g_audit, PhiSpec, ProductDecomposition, RateKernel, YoungPair,
};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(name: &str) -> LoadedConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn families() -> Vec<PhiSpec> {
    let mut v = Vec::new();
    for k in [0.5, 1.0, 2.0] {
        v.push(PhiSpec::Linear { k });
    }
    for gamma in [0.25, 0.5, 0.75] {
        v.push(PhiSpec::Power { c: 1.0, gamma });
    }
    for k in [1.0, 2.0] {
        v.push(PhiSpec::Constant { k });
    }
    v
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for phi in families() {
        let kernel = RateKernel::new(phi).map_err(|e| e.to_string())?;
        for s in geometric_grid(1.0, 1e6, 200) {
            let back =
                kernel.capital_psi(kernel.capital_phi(s).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            worst = worst.max((back - s).abs() / s);
        }
    }
    let el = start.elapsed();
    check(worst < 1e-10 && el < Duration::from_secs(1), format!("max relative error {worst:.2e} in {el:.2?}"))
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let ts = linear_grid(0.0, 10.0, 50);
    let us = linear_grid(1.0, 100.0, 50);
    let mut lines = Vec::new();
    let mut ok = true;
    for phi in [PhiSpec::Linear { k: 1.0 }, PhiSpec::Power { c: 1.0, gamma: 0.5 }, PhiSpec::Constant { k: 1.0 }] {
        let name = phi.family_name();
        let kernel = RateKernel::new(phi).map_err(|e| e.to_string())?;
        let r = lemma_g_audit(&kernel, &ts, &us).map_err(|e| e.to_string())?;
        ok &= r.pass;
        lines.push(format!("{name}: pde {:.1e}, boundary {:.1e}", r.max_pde_residual, r.max_boundary_error));
    }
    let el = start.elapsed();
    check(ok && el < Duration::from_secs(5), format!("{} in {el:.2?}", lines.join("; ")))
}

fn ac3() -> Outcome {
    let ts = linear_grid(0.0, 10.0, 50);
    let us = linear_grid(1.0, 100.0, 50);
    let mut worst: f64 = 0.0;
    for phi in families() {
        let kernel = RateKernel::new(phi.clone()).map_err(|e| e.to_string())?;
        let closed = |t: f64, u: f64| match phi {
            PhiSpec::Linear { k } => u * (k * t).exp(),
            PhiSpec::Power { c, gamma } => {
                let a = 1.0 - gamma;
                (c * a * t + u.powf(a)).powf(1.0 / a)
            }
            PhiSpec::Constant { k } => u + k * t,
            PhiSpec::Custom { .. } => unreachable!(),
        };
        for &t in &ts {
            for &u in &us {
                let g = kernel.g_generic(t, u).map_err(|e| e.to_string())?;
                let c = closed(t, u);
                worst = worst.max((g - c).abs() / c);
            }
        }
    }
    check(worst < 1e-10, format!("max relative gap between closed forms and Psi(Phi(u)+t): {worst:.2e}"))
}

fn ac4() -> Outcome {
    let mut rng = path_rng(2024, 0, 0);
    let mut min_slack = f64::INFINITY;
    for _ in 0..10_000 {
        let p = rng.random_range(1.0f64..5.0).max(1.0 + 1e-9);
        let x = rng.random_range(0.0..=100.0);
        let y = rng.random_range(0.0..=100.0);
        let pair = YoungPair::new(p).map_err(|e| e.to_string())?;
        min_slack = min_slack.min(x + y - pair.h_inv(x) * pair.k_inv(y));
    }
    let mut audited = 0;
    let vs = [
        LyapunovSpec::Affine { c: 1.0 },
        LyapunovSpec::PowerAffine { lambda: 1.0, beta: 2.0 },
        LyapunovSpec::Exp { lambda: 0.05 },
    ];
    for phi in families() {
        let kernel = RateKernel::new(phi).map_err(|e| e.to_string())?;
        for v in &vs {
            for p in [1.5, 2.0, 4.0] {
                let pair = YoungPair::new(p).map_err(|e| e.to_string())?;
                let d = decompose(&kernel, v, &pair).map_err(|e| e.to_string())?;
                audit_decomposition(&d, &kernel, v).map_err(|e| e.to_string())?;
                audited += 1;
            }
            let tv = ProductDecomposition::total_variation(&kernel, v).map_err(|e| e.to_string())?;
            audit_decomposition(&tv, &kernel, v).map_err(|e| e.to_string())?;
            audited += 1;
        }
    }
    check(
        min_slack >= -1e-12,
        format!("min Young slack {min_slack:.2e} over 10^4 triples; {audited} decompositions audited"),
    )
}

fn ac5() -> Outcome {
    let grid = GridSpec::default().points();
    // (i)
    let m = ProcessModel::diffusion("-2", "1").map_err(|e| e.to_string())?;
    let cert = drift_check(&m, &LyapunovSpec::Affine { c: 1.0 }, &PhiSpec::Constant { k: 2.0 }, &grid)
        .map_err(|e| e.to_string())?;
    let i_ok = cert.pass && cert.worst_margin.abs() <= 1e-12;
    // (ii)
    let jump = config("jump_sqrt.json").config.model;
    let mut ii_err: f64 = 0.0;
    for x in [0.0, 1.0, 3.0, 10.0] {
        let m = mean_drift(&jump, x).map_err(|e| e.to_string())?;
        ii_err = ii_err.max((m + (x + 1.0f64).powf(-0.5)).abs());
    }
    // (iii)
    let levy = LevyModel {
        drift: -2.0,
        sigma: 1.0,
        measure: LevyMeasure::FiniteCompound { rate: 1.0, law: DisplacementLaw::Exponential { rate: 1.0 } },
    };
    let k02 = levy_k(&levy, 0.2).map_err(|e| e.to_string())?;
    let search = levy_find_lambda(&levy).map_err(|e| e.to_string())?;
    let slope = levy_k_slope_at_zero(&levy).map_err(|e| e.to_string())?;
    let iii_ok = (k02 + 0.13).abs() <= 1e-8 && search.k < 0.0 && (slope + 1.0).abs() <= 1e-6;
    check(
        i_ok && ii_err <= 1e-8 && iii_ok,
        format!(
            "(i) margin {:.1e}; (ii) m(x) error {ii_err:.1e}; (iii) k(0.2) = {k02}, k(lambda* = {:.4}) = {:.4}, k'(0) = {slope:.8}",
            cert.worst_margin, search.lambda, search.k
        ),
    )
}

fn ac6(exec: &RayonExecutor) -> Outcome {
    let start = Instant::now();
    let cfg = config("exp_bm.json").config;
    let out = run::verify(&cfg, exec).map_err(|e| e.to_string())?;
    let r = &out.report;
    let audit_ok = out.supermartingale.as_ref().is_some_and(|a| a.nonincreasing);
    let el = start.elapsed();
    let rows: Vec<String> =
        r.rows.iter().map(|row| format!("t={} {:.3}<={:.3}", row.t, row.empirical.ci_lo, row.bound)).collect();
    check(
        r.status == BoundStatus::Pass && r.order_violations == 0 && audit_ok && el < Duration::from_secs(300),
        format!("{}; violations {}; audit nonincreasing {audit_ok}; {el:.1?}", rows.join(", "), r.order_violations),
    )
}

fn ac7(exec: &RayonExecutor) -> Outcome {
    let start = Instant::now();
    let cfg = config("sqrt_drift.json").config;
    let cert = run::certify(&cfg).map_err(|e| e.to_string())?;
    let feas = cert.feasibility.as_ref().ok_or("no feasibility report")?;
    let LyapunovSpec::PowerAffine { lambda, .. } = cfg.lyapunov else {
        return Err("fixture must use a power_affine V".into());
    };
    let feasible = feas.nonempty && lambda >= feas.lambda_lo && lambda < feas.lambda_hi;
    let fitted = cert.phi_fitted && matches!(cert.certificate.phi, PhiSpec::Power { .. }) && cert.certificate.pass;
    let out = run::verify(&cfg, exec).map_err(|e| e.to_string())?;
    let r = &out.report;
    let el = start.elapsed();
    let rows: Vec<String> =
        r.rows.iter().map(|row| format!("t={} {:.2e}<={:.3}", row.t, row.empirical.ci_lo, row.bound)).collect();
    check(
        feasible && fitted && r.status == BoundStatus::Pass && el < Duration::from_secs(600),
        format!(
            "lambda {lambda} in [{}, {}); phi {:?}; {}; {el:.1?}",
            feas.lambda_lo,
            feas.lambda_hi,
            cert.certificate.phi,
            rows.join(", ")
        ),
    )
}

fn ac8(exec: &RayonExecutor) -> Outcome {
    let mut cfg = config("exp_bm.json").config;
    cfg.phi = ergoline::config::PhiChoice::Spec(PhiSpec::Linear { k: 1.0 });
    cfg.require_certificate = false;
    cfg.audit = None;
    cfg.checkpoints = vec![1.0];
    let sim = cfg.sim.as_mut().ok_or("fixture has no sim section")?;
    sim.horizon = 1.0;
    let mut failed = 0;
    for seed in 0..10u64 {
        cfg.sim.as_mut().unwrap().master_seed = 1000 + seed;
        let out = run::verify(&cfg, exec).map_err(|e| e.to_string())?;
        if out.report.status == BoundStatus::Fail {
            failed += 1;
        }
    }
    check(failed >= 10, format!("{failed}/10 seeds FAIL at t = 1 with the doubled rate"))
}

fn ac9(exec: &RayonExecutor) -> Outcome {
    let cfg = config("stationary_bm.json").config;
    let out = run::stationary(&cfg, exec).map_err(|e| e.to_string())?;
    let e = &out.estimate;
    check(
        (e.mean_x.mean - 1.0).abs() <= 0.05 && (e.mean_v.mean - 2.0).abs() <= 0.1,
        format!("E[X] = {:.4}, (pi, 1+x) = {:.4}, ESS {:.0}", e.mean_x.mean, e.mean_v.mean, e.effective_sample_size),
    )
}

fn ac10() -> Outcome {
    let loaded = config("exp_bm.json");
    let mut cfg = loaded.config.clone();
    cfg.audit = None;
    let stamp = Stamp::new(&loaded.sha256, cfg.sim.as_ref().map(|s| s.master_seed));
    let mut csvs = Vec::new();
    for threads in [1, 4, 8] {
        let exec = RayonExecutor::new(threads).map_err(|e| e.to_string())?;
        let out = run::verify(&cfg, &exec).map_err(|e| e.to_string())?;
        csvs.push(output::verify_csv(&stamp, &out.report));
    }
    check(
        csvs.windows(2).all(|w| w[0] == w[1]),
        format!("verify.csv identical across 1, 4, 8 threads ({} bytes)", csvs[0].len()),
    )
}

fn main() -> ExitCode {
    let exec =
        RayonExecutor::new(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).expect("thread pool");
    let criteria: Vec<Criterion> = vec![
        ("AC-1 rate-calculus inversion", Box::new(ac1)),
        ("AC-2 G audit", Box::new(ac2)),
        ("AC-3 closed forms", Box::new(ac3)),
        ("AC-4 Young machinery", Box::new(ac4)),
        ("AC-5 certification fixtures", Box::new(ac5)),
        ("AC-6 exponential bound", Box::new(|| ac6(&exec))),
        ("AC-7 subexponential bound", Box::new(|| ac7(&exec))),
        ("AC-8 falsification", Box::new(|| ac8(&exec))),
        ("AC-9 stationary oracle", Box::new(|| ac9(&exec))),
        ("AC-10 reproducibility", Box::new(ac10)),
    ];
    let mut failures = 0;
    for (name, f) in &criteria {
        let outcome =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(d) => println!("{name}: PASS ({d})"),
            Err(d) => {
                failures += 1;
                println!("{name}: FAIL ({d})");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
