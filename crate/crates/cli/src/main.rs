//! `softarm`: run tracking and catching scenarios, system identification and
//! the acceptance suite. Output is CSV plus gnuplot scripts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use softarm::acceptance;
use softarm::mpc::ControllerMode;
use softarm::simharness::{
    gnuplot_script, run_catch_batch, run_throw, run_tracking, throw_spec, write_catch_records, write_catch_summary,
    write_fit_report, write_metrics, write_prediction_trace, write_step_log, write_timing, Scenario, SolverStats,
};
use softarm::sysid::identify;

/// Fraction of control steps allowed to fall back to the previous input.
const FALLBACK_LIMIT: f64 = 0.05;

#[derive(Parser)]
#[command(name = "softarm", version, about = "Offset-free MPC and ball catching for a soft robotic arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track the scenario's reference and write the step log and metrics.
    Track(Common),
    /// Run a batch of seeded throws.
    Catch(Common),
    /// Identify the model coefficients from simulated experiments.
    Sysid(Common),
    /// Offset-free against standard MPC on the same reference and seed.
    Compare(Common),
    /// Run every acceptance criterion and print a pass/fail table.
    Suite(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (key = value lines); defaults apply to missing keys.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// offset_free or standard
    #[arg(long)]
    mode: Option<ControllerMode>,
    /// Number of intercepting throws for `catch` and `suite`.
    #[arg(long)]
    throws: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut scn = match &self.scenario {
            Some(path) => Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))?,
            None => Scenario::default(),
        };
        if let Some(seed) = self.seed {
            scn.seed = seed;
        }
        if let Some(mode) = self.mode {
            scn.mode = mode;
        }
        if let Some(n) = self.throws {
            scn.catch.throws = n;
        }
        Ok(scn)
    }

    /// Output directory, created if needed; refuses to mix with old results.
    fn out_dir(&self) -> Result<Option<&Path>> {
        let Some(dir) = self.out.as_deref() else { return Ok(None) };
        if dir.exists() {
            if !dir.is_dir() {
                bail!("{} exists and is not a directory", dir.display());
            }
            if fs::read_dir(dir)?.next().is_some() && !self.force {
                bail!("output directory {} is not empty; pass --force to overwrite", dir.display());
            }
        } else {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Some(dir))
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn check_fallbacks(stats: &SolverStats) -> Result<()> {
    if stats.steps > 0 && stats.fallbacks as f64 > FALLBACK_LIMIT * stats.steps as f64 {
        bail!("solver fell back on {} of {} control steps", stats.fallbacks, stats.steps);
    }
    Ok(())
}

fn track(args: &Common) -> Result<()> {
    let scn = args.scenario()?;
    let dir = args.out_dir()?;
    let run = run_tracking(&scn)?;
    let m = &run.metrics;
    println!(
        "{} {}: RMSE alpha {:.4} deg, beta {:.4} deg, mean {:.4} deg",
        scn.mode,
        scn.reference,
        m.rmse_alpha.to_degrees(),
        m.rmse_beta.to_degrees(),
        m.rmse().to_degrees()
    );
    if let Some(off) = m.max_offset() {
        println!("max steady-state offset {:.4} deg", off.to_degrees());
    }
    println!("mean solve {:.3} ms, {} fallbacks", run.timing.mean().as_secs_f64() * 1e3, m.solver.fallbacks);
    if let Some(dir) = dir {
        fs::write(dir.join("scenario.cfg"), scn.to_kv())?;
        write_step_log(create(dir, "log.csv")?, &run.log)?;
        write_metrics(create(dir, "metrics.csv")?, m)?;
        write_timing(create(dir, "timing.csv")?, &run.timing)?;
        fs::write(dir.join("plot.gp"), gnuplot_script("log.csv", &format!("{} tracking", scn.mode)))?;
        println!("wrote {}", dir.display());
    }
    check_fallbacks(&m.solver)
}

fn catch(args: &Common) -> Result<()> {
    let scn = args.scenario()?;
    let dir = args.out_dir()?;
    let batch = run_catch_batch(&scn, scn.mode, scn.catch.throws)?;
    println!(
        "{}: {}/{} intercepting throws caught ({:.1}%), {} excluded, mean miss of catches {}",
        scn.mode,
        batch.successes(),
        batch.intercepting(),
        100.0 * batch.success_rate(),
        batch.excluded(),
        batch.mean_miss_successful().map(|m| format!("{:.2} mm", m * 1e3)).unwrap_or_else(|| "n/a".into())
    );
    if let Some(dir) = dir {
        fs::write(dir.join("scenario.cfg"), scn.to_kv())?;
        write_catch_records(create(dir, "throws.csv")?, &batch.records)?;
        write_catch_summary(create(dir, "metrics.csv")?, &batch)?;
        write_timing(create(dir, "timing.csv")?, &batch.timing())?;
        // full trace of the first intercepting throw
        if let Some(first) = batch.records.iter().find(|r| r.outcome.miss_distance.is_some()) {
            let rec = run_throw(&scn, scn.mode, first.index, &throw_spec(&scn, first.index), true)?;
            write_step_log(create(dir, "throw_log.csv")?, &rec.log)?;
            write_prediction_trace(create(dir, "throw_prediction.csv")?, &rec.trace)?;
            let title = format!("throw {} ({})", first.index, rec.outcome.status);
            fs::write(dir.join("plot.gp"), gnuplot_script("throw_log.csv", &title))?;
        }
        println!("wrote {}", dir.display());
    }
    check_fallbacks(&batch.solver())
}

fn sysid(args: &Common) -> Result<()> {
    let scn = args.scenario()?;
    let dir = args.out_dir()?;
    let run = identify(&scn.plant, &scn.sysid, &scn.polytope()?, scn.seed)?;
    let (p, truth) = (&run.report.params, &scn.plant.base);
    let rows = [
        ("k_alpha", p.k_alpha, truth.k_alpha),
        ("d_alpha", p.d_alpha, truth.d_alpha),
        ("h_alpha", p.h_alpha, truth.h_alpha),
        ("tau_alpha", p.tau_alpha, truth.tau_alpha),
        ("c_alpha", p.c_alpha, truth.c_alpha),
        ("k_beta", p.k_beta, truth.k_beta),
        ("d_beta", p.d_beta, truth.d_beta),
        ("h_beta", p.h_beta, truth.h_beta),
        ("tau_beta", p.tau_beta, truth.tau_beta),
        ("c_beta", p.c_beta, truth.c_beta),
    ];
    println!("{:<10} {:>12} {:>12}", "parameter", "identified", "plant model");
    for (name, id, t) in rows {
        println!("{name:<10} {id:>12.5} {t:>12.5}");
    }
    for w in &run.report.warnings {
        println!("warning: {w}");
    }
    if let Some(dir) = dir {
        fs::write(dir.join("scenario.cfg"), scn.to_kv())?;
        run.sweep_log.write_csv(create(dir, "sweep.csv")?)?;
        run.step_log.write_csv(create(dir, "steps.csv")?)?;
        write_fit_report(create(dir, "fit.csv")?, &run.report)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn compare(args: &Common) -> Result<()> {
    let scn = args.scenario()?;
    let dir = args.out_dir()?;
    let of = run_tracking(&scn.with_mode(ControllerMode::OffsetFree))?;
    let st = run_tracking(&scn.with_mode(ControllerMode::Standard))?;
    let (a, b) = (of.metrics.rmse().to_degrees(), st.metrics.rmse().to_degrees());
    println!("offset_free RMSE {a:.4} deg, standard RMSE {b:.4} deg, ratio {:.4}", a / b);
    if let (Some(x), Some(y)) = (of.metrics.max_offset(), st.metrics.max_offset()) {
        println!("max steady offset: offset_free {:.4} deg, standard {:.4} deg", x.to_degrees(), y.to_degrees());
    }
    if let Some(dir) = dir {
        fs::write(dir.join("scenario.cfg"), scn.to_kv())?;
        for (name, run) in [("offset_free", &of), ("standard", &st)] {
            write_step_log(create(dir, &format!("log_{name}.csv"))?, &run.log)?;
            write_metrics(create(dir, &format!("metrics_{name}.csv"))?, &run.metrics)?;
            fs::write(dir.join(format!("plot_{name}.gp")), gnuplot_script(&format!("log_{name}.csv"), name))?;
        }
        println!("wrote {}", dir.display());
    }
    check_fallbacks(&of.metrics.solver)?;
    check_fallbacks(&st.metrics.solver)
}

/// Returns whether every criterion passed.
fn suite(args: &Common) -> Result<bool> {
    let scn = args.scenario()?;
    let dir = args.out_dir()?;
    let results = acceptance::run_all(&scn, scn.catch.throws)?;
    println!("{:<3} {:<22} {:<6} detail", "id", "criterion", "result");
    for r in &results {
        println!("{:<3} {:<22} {:<6} {} ({:.1} s)", r.id, r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail, r.elapsed.as_secs_f64());
    }
    if let Some(dir) = dir {
        let mut out = String::from("id,criterion,passed,detail\n");
        for r in &results {
            out.push_str(&format!("{},{},{},\"{}\"\n", r.id, r.name, r.passed, r.detail.replace('"', "'")));
        }
        fs::write(dir.join("suite.csv"), out)?;
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOFTARM_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Track(a) => track(a).map(|_| true),
        Command::Catch(a) => catch(a).map(|_| true),
        Command::Sysid(a) => sysid(a).map(|_| true),
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Suite(a) => suite(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("acceptance suite failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
