use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergoline::config::{ExperimentConfig, LoadedConfig};
use ergoline::exec::RayonExecutor;
use ergoline::output::{self, Stamp};
use ergoline::run::{self, RunError};
use ergoline_core::estimate::BoundStatus;

/// Convergence-rate certificates and coupling checks for reflected
/// processes on [0, ∞).
#[derive(Parser)]
#[command(name = "ergoline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the drift condition LV ≤ −φ(V) on the state grid.
    Certify(Common),
    /// Print the theoretical bound at the configured checkpoints.
    Bound(Common),
    /// Compare the bound against a coupling Monte Carlo estimate.
    Verify(Common),
    /// Long-run moments and histogram of the stationary law.
    Stationary(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sim.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "ERGOLINE_THREADS")]
    threads: Option<usize>,
    /// Output directory; defaults to `output_dir` from the config, then `ergoline-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_PASS: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialise output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot start thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(e) if e.exit_code() == 1 => EXIT_FAIL,
            _ => EXIT_CONFIG,
        }
    }
}

struct Ctx {
    loaded: LoadedConfig,
    out: PathBuf,
    stamp: Stamp,
    threads: usize,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self, CliError> {
        let mut loaded = ExperimentConfig::load(&c.config).map_err(RunError::from)?;
        if let (Some(seed), Some(sim)) = (c.seed, loaded.config.sim.as_mut()) {
            sim.master_seed = seed;
        }
        let seed = loaded.config.sim.as_ref().map(|s| s.master_seed);
        let out =
            c.out.clone().or_else(|| loaded.config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("ergoline-out"));
        let threads = c.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        let stamp = Stamp::new(&loaded.sha256, seed);
        Ok(Self { loaded, out, stamp, threads })
    }

    fn cfg(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        output::write(&self.out, name, contents)?;
        Ok(())
    }

    fn exec(&self) -> Result<RayonExecutor, CliError> {
        Ok(RayonExecutor::new(self.threads)?)
    }
}

fn certify(ctx: &Ctx) -> Result<u8, CliError> {
    let report = run::certify(ctx.cfg())?;
    ctx.write("certify.json", &output::json(&ctx.stamp, &report)?)?;
    let c = &report.certificate;
    println!("phi: {:?}", c.phi);
    println!("worst margin {} at x = {} ({} grid points)", c.worst_margin, c.worst_at, c.margins.len());
    for n in &c.notes {
        println!("note: {n}");
    }
    if c.pass {
        println!("certificate: PASS");
        Ok(EXIT_PASS)
    } else {
        println!("certificate: FAIL");
        Ok(EXIT_FAIL)
    }
}

fn bound(ctx: &Ctx) -> Result<u8, CliError> {
    let curve = run::bound(ctx.cfg())?;
    ctx.write("bound.csv", &output::bound_csv(&ctx.stamp, &curve))?;
    ctx.write("bound.json", &output::json(&ctx.stamp, &curve)?)?;
    println!("t,bound");
    for &(t, b) in &curve.rows {
        println!("{},{}", output::fmt_f64(t), output::fmt_f64(b));
    }
    Ok(if curve.certificate_pass { EXIT_PASS } else { EXIT_FAIL })
}

fn verify(ctx: &Ctx) -> Result<u8, CliError> {
    let outcome = run::verify(ctx.cfg(), &ctx.exec()?)?;
    let r = &outcome.report;
    ctx.write("verify.csv", &output::verify_csv(&ctx.stamp, r))?;
    ctx.write("verify.json", &output::json(&ctx.stamp, &outcome)?)?;
    ctx.write("verify.svg", &output::verify_svg(r))?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    for row in &r.rows {
        println!(
            "t = {:<8} empirical {:.6} [{:.6}, {:.6}]  bound {}  {}",
            output::fmt_f64(row.t),
            row.empirical.estimate,
            row.empirical.ci_lo,
            row.empirical.ci_hi,
            output::fmt_f64(row.bound),
            if row.pass { "ok" } else { "VIOLATED" }
        );
    }
    if let Some(a) = &outcome.supermartingale {
        println!("supermartingale audit: {}", if a.nonincreasing { "nonincreasing" } else { "NOT nonincreasing" });
    }
    let code = match r.status {
        BoundStatus::Pass => EXIT_PASS,
        BoundStatus::Fail => EXIT_FAIL,
        BoundStatus::Inconclusive => EXIT_INCONCLUSIVE,
    };
    println!("verify: {:?}", r.status);
    Ok(code)
}

fn stationary(ctx: &Ctx) -> Result<u8, CliError> {
    let outcome = run::stationary(ctx.cfg(), &ctx.exec()?)?;
    ctx.write("stationary.csv", &output::histogram_csv(&ctx.stamp, &outcome.histogram))?;
    ctx.write("stationary.json", &output::json(&ctx.stamp, &outcome)?)?;
    let e = &outcome.estimate;
    println!("E[X]    = {} ± {}", e.mean_x.mean, 1.96 * e.mean_x.std_error);
    println!("E[V(X)] = {} ± {}", e.mean_v.mean, 1.96 * e.mean_v.std_error);
    println!("kept {} of {} samples, ESS ≈ {:.0}", e.n_kept, e.n_raw, e.effective_sample_size);
    if !e.converged {
        eprintln!("warning: burn-in diagnostics did not settle");
    }
    Ok(EXIT_PASS)
}

type Handler = fn(&Ctx) -> Result<u8, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, f): (&Common, Handler) = match &cli.command {
        Command::Certify(c) => (c, certify),
        Command::Bound(c) => (c, bound),
        Command::Verify(c) => (c, verify),
        Command::Stationary(c) => (c, stationary),
    };
    let result = Ctx::new(common).and_then(|ctx| f(&ctx).map(|code| (code, ctx.out)));
    match result {
        Ok((code, out)) => {
            eprintln!("outputs in {}", display(&out));
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
