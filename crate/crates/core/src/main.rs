use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use auv_nsb::analysis::{check_conditions, compute_metrics, conditions_from_bounds, RatioEnvelope, StabilityReport};
use auv_nsb::{verify, Error, Scenario, SimLog};

const OUT_DIR_ENV: &str = "AUV_NSB_OUT_DIR";

#[derive(Parser)]
#[command(name = "auv-nsb", version, about = "Formation path following for underactuated AUVs")]
struct Cli {
    /// More output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario TOML; the built-in default scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// `key=value` override, e.g. `guidance.delta0=6` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(v) = self.dt {
            o.push(format!("dt={v:e}"));
        }
        if let Some(v) = self.t_end {
            o.push(format!("t_end={v:e}"));
        }
        if let Some(v) = self.seed {
            o.push(format!("seed={v}"));
        }
        o
    }

    fn load(&self, file: Option<&Path>) -> auv_nsb::Result<Scenario> {
        match file.or(self.scenario.as_deref()) {
            Some(p) => Scenario::from_file(p, &self.overrides()),
            None => Scenario::with_overrides(&self.overrides()),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write the CSV log plus a metrics summary.
    Run {
        #[command(flatten)]
        sc: ScenarioArgs,
        /// Output CSV. Defaults to `<name>.csv` in $AUV_NSB_OUT_DIR or the
        /// working directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run several scenario files concurrently; `--out` is then a directory.
        #[arg(long, num_args = 1.., conflicts_with = "scenario")]
        batch: Vec<PathBuf>,
    },
    /// Evaluate the stability conditions.
    Check {
        #[command(flatten)]
        sc: ScenarioArgs,
        /// Fleet size; defaults to the scenario's.
        #[arg(long)]
        n: Option<usize>,
        /// Use this `|Y/X|` ratio for both sway and heave instead of scanning
        /// the vehicle model.
        #[arg(long)]
        ratio: Option<f64>,
        /// Path curvature bounds overriding the sampled ones.
        #[arg(long)]
        iota: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Upper end of the surge envelope [m/s].
        #[arg(long, default_value_t = 2.5)]
        u_max: f64,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite.
    Verify {
        #[command(flatten)]
        sc: ScenarioArgs,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a CSV log.
    Metrics {
        csv: PathBuf,
        /// Scenario the log came from, for the safety-distance check.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::PitchDomain { .. } | Error::NonFinite { .. } | Error::IrregularPath(_) => 3,
        _ => 2,
    }
}

fn default_out(name: &str) -> PathBuf {
    let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_default();
    dir.join(format!("{name}.csv"))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> auv_nsb::Result<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run_one(sc: &Scenario, out: &Path, verbose: u8) -> auv_nsb::Result<()> {
    let t0 = std::time::Instant::now();
    let log = auv_nsb::run(sc)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    log.write_csv_file(out)?;
    let m = compute_metrics(&log, Some(sc));
    write_json(&out.with_extension("metrics.json"), &m)?;
    println!("{}: {} rows -> {} ({:.2?})", sc.name, log.records.len(), out.display(), t0.elapsed());
    println!("  final |p_b^p|     {:.4} m", m.final_pbp_norm);
    if m.n > 1 {
        println!("  min distance      {:.3} m at t = {:.2} s", m.min_distance, m.min_distance_t);
        println!("  COLAV intervals   {}", m.colav_intervals.len());
    }
    if let Some(f) = m.sigma2_fit {
        println!("  sigma2 decay rate {:.4} 1/s (R^2 {:.4})", f.rate, f.r2);
    }
    if verbose > 0 {
        println!("{}", serde_json::to_string_pretty(&m).expect("serializable"));
    }
    Ok(())
}

fn print_report(r: &StabilityReport) {
    let flag = |b: bool| if b { "ok" } else { "VIOLATED" };
    println!("n = {}", r.n);
    println!("max |kappa| = {:.5}, max |iota| = {:.5}, max |theta_p| = {:.4} rad", r.kappa_max, r.iota_max, r.theta_p_max);
    println!("min |Y_v/X_v| = {:.4}, min |Y_w/X_w| = {:.4}", r.ratio_v_min, r.ratio_w_min);
    println!("damping (Y_v, Y_w < 0)      {}", flag(r.damping_ok));
    println!("curvature kappa             {}", flag(r.kappa_ok));
    println!("curvature iota              {}", flag(r.iota_ok));
    println!("pitch of path < pi/4        {}", flag(r.theta_p_ok));
    println!("lookahead lower bound       {:.4} m", r.delta0_lower_bound);
    println!("delta0 = {:.4} m             {}", r.delta0, flag(r.delta0_ok));
    println!("overall                     {}", flag(r.overall_ok));
}

fn check(
    sc: &Scenario,
    n: Option<usize>,
    ratio: Option<f64>,
    iota: Option<f64>,
    kappa: Option<f64>,
    u_max: f64,
) -> auv_nsb::Result<StabilityReport> {
    let n = n.unwrap_or(sc.n_vehicles());
    let vc = sc.current_vec().norm();
    let base = check_conditions(&sc.vehicle, &sc.path, n, vc, sc.guidance.delta0, u_max)?;
    if ratio.is_none() && iota.is_none() && kappa.is_none() {
        return Ok(base);
    }
    let env = match ratio {
        Some(r) => RatioEnvelope {
            ratio_v_min: r,
            ratio_w_min: r,
            y_v_max: base.y_v_max,
            y_w_max: base.y_w_max,
        },
        None => RatioEnvelope {
            ratio_v_min: base.ratio_v_min,
            ratio_w_min: base.ratio_w_min,
            y_v_max: base.y_v_max,
            y_w_max: base.y_w_max,
        },
    };
    Ok(conditions_from_bounds(
        n,
        &env,
        kappa.unwrap_or(base.kappa_max),
        iota.unwrap_or(base.iota_max),
        base.theta_p_max,
        sc.guidance.delta0,
    ))
}

fn main_inner(cli: Cli) -> auv_nsb::Result<u8> {
    match cli.cmd {
        Cmd::Run { sc, out, batch } => {
            if batch.is_empty() {
                let s = sc.load(None)?;
                let out = out.unwrap_or_else(|| default_out(&s.name));
                run_one(&s, &out, cli.verbose)?;
                return Ok(0);
            }
            use rayon::prelude::*;
            let dir = out
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_default();
            let scenarios = batch
                .iter()
                .map(|f| sc.load(Some(f)).map(|s| (f.clone(), s)))
                .collect::<auv_nsb::Result<Vec<_>>>()?;
            let results: Vec<(PathBuf, auv_nsb::Result<()>)> = scenarios
                .par_iter()
                .map(|(f, s)| {
                    let stem = f.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_else(|| s.name.clone());
                    (f.clone(), run_one(s, &dir.join(format!("{stem}.csv")), cli.verbose))
                })
                .collect();
            let mut code = 0;
            for (f, r) in results {
                if let Err(e) = r {
                    eprintln!("{}: {e}", f.display());
                    code = code.max(exit_code(&e));
                }
            }
            Ok(code)
        }
        Cmd::Check {
            sc,
            n,
            ratio,
            iota,
            kappa,
            u_max,
            out,
        } => {
            let s = sc.load(None)?;
            let r = check(&s, n, ratio, iota, kappa, u_max)?;
            print_report(&r);
            if let Some(p) = out {
                write_json(&p, &r)?;
            }
            Ok(if r.overall_ok { 0 } else { 1 })
        }
        Cmd::Verify { sc, samples, out } => {
            let s = sc.load(None)?;
            let log = auv_nsb::run(&s)?;
            let results = verify::suite(&s, &log, samples, s.seed)?;
            println!("{:<26} {:>12}    {:>9}  result", "oracle", "value", "threshold");
            for r in &results {
                println!(
                    "{:<26} {:>12.3e} {:>2} {:>9.1e}  {}",
                    r.name,
                    r.value,
                    r.op,
                    r.threshold,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            if let Some(p) = out {
                write_json(&p, &results)?;
            }
            Ok(if results.iter().all(|r| r.pass) { 0 } else { 1 })
        }
        Cmd::Metrics { csv, scenario, out } => {
            let log = SimLog::read_csv_file(&csv)?;
            let s = scenario.map(|p| Scenario::from_file(&p, &[])).transpose()?;
            let m = compute_metrics(&log, s.as_ref());
            let text = serde_json::to_string_pretty(&m).expect("serializable");
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
