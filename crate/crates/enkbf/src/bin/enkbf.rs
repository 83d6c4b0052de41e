//! Batch front end: truth export, convergence experiments, bound monitors,
//! and report re-rendering.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use enkbf::config::RunConfig;
use enkbf::diagnostics;
use enkbf::error::{Error, Result};
use enkbf::harness::{self, Variant};
use enkbf::noise::NoiseLattice;
use enkbf::report::{fmt_f64, CsvTable};
use enkbf::truth;

#[derive(Parser)]
#[command(name = "enkbf", about = "Ensemble Kalman-Bucy filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Flat JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (0 = automatic).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Filter variant.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Export the reference signal path and observation increments.
    Truth(CommonOpts),
    /// Run the coupled stepsize-refinement experiment.
    Converge(CommonOpts),
    /// Run the configured bound monitors.
    Diagnose(CommonOpts),
    /// Re-render a convergence JSON summary as text.
    Report {
        /// Path to a converge.json file.
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension(_) | Error::Range(_) | Error::Unsupported(_) => 2,
        _ => 1,
    }
}

fn resolve_config(opts: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(w) = opts.workers {
        cfg.workers = w;
    }
    if let Some(o) = &opts.out {
        cfg.out_dir = o.display().to_string();
    }
    if let Some(v) = &opts.variant {
        cfg.variant = v.clone();
    }
    Ok(cfg)
}

fn with_header(mut table: CsvTable, cfg: &RunConfig) -> CsvTable {
    for (k, v) in cfg.header_entries() {
        table.comment(&k, v);
    }
    table
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(f)
}

fn cmd_truth(opts: &CommonOpts) -> Result<()> {
    let cfg = resolve_config(opts)?;
    let model = cfg.model_spec()?;
    let grid = cfg.grid()?;
    let lattice = NoiseLattice::generate(
        cfg.seed,
        model.dim_state,
        model.dim_obs,
        grid,
        cfg.ensemble_size,
        cfg.memory_cap,
    )?;
    let x0 = nalgebra::DVector::from_vec(cfg.initial_center.clone());
    let path = truth::simulate_signal(&model, &lattice, &x0)?;
    let obs = truth::observation_increments(&model, &path, &lattice)?;

    let dir = PathBuf::from(&cfg.out_dir);
    let h = grid.h_fine();

    let mut t = CsvTable::new(
        &std::iter::once("step".to_string())
            .chain(std::iter::once("t".to_string()))
            .chain((0..model.dim_state).map(|i| format!("x_{}", i + 1)))
            .collect::<Vec<_>>()
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>(),
    );
    t = with_header(t, &cfg);
    for k in 0..path.states.ncols() {
        let mut row = vec![k.to_string(), fmt_f64(k as f64 * h)];
        for i in 0..model.dim_state {
            row.push(fmt_f64(path.states[(i, k)]));
        }
        t.push_row(row);
    }
    let p = write_file(&dir, "truth.csv", &t.render())?;
    println!("wrote {}", p.display());

    let dy = obs.at_level(0)?;
    let mut t = CsvTable::new(
        &std::iter::once("step".to_string())
            .chain(std::iter::once("t".to_string()))
            .chain((0..model.dim_obs).map(|i| format!("dy_{}", i + 1)))
            .collect::<Vec<_>>()
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>(),
    );
    t = with_header(t, &cfg);
    for k in 0..dy.ncols() {
        let mut row = vec![(k + 1).to_string(), fmt_f64((k + 1) as f64 * h)];
        for i in 0..model.dim_obs {
            row.push(fmt_f64(dy[(i, k)]));
        }
        t.push_row(row);
    }
    let p = write_file(&dir, "observations.csv", &t.render())?;
    println!("wrote {}", p.display());

    if cfg.dump_lattice {
        std::fs::create_dir_all(&dir)?;
        let p = dir.join("lattice.bin");
        lattice.dump(&p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_converge(opts: &CommonOpts) -> Result<()> {
    let cfg = resolve_config(opts)?;
    let plan = cfg.to_plan()?;
    let out = in_pool(cfg.workers, || harness::run_experiment(&plan))?;
    let dir = PathBuf::from(&cfg.out_dir);
    let csv = with_header(out.report.to_csv(), &cfg);
    let p = write_file(&dir, "converge.csv", &csv.render())?;
    println!("wrote {}", p.display());
    let json = serde_json::json!({
        "config": &cfg,
        "report": &out.report,
    });
    let p = write_file(&dir, "converge.json", &serde_json::to_string_pretty(&json)?)?;
    println!("wrote {}", p.display());
    println!(
        "slope = {:.4}, r2 = {:.4}, theory rate = {:.2}, failed replications = {}",
        out.report.slope, out.report.r2, out.report.theory_rate, out.report.failed_replications
    );
    Ok(())
}

fn cmd_diagnose(opts: &CommonOpts) -> Result<()> {
    let cfg = resolve_config(opts)?;
    if cfg.monitors.is_empty() {
        return Err(Error::Config("monitor list is empty".into()));
    }
    for m in &cfg.monitors {
        if !matches!(m.as_str(), "gain" | "spread" | "eigen-floor" | "exp-moment") {
            return Err(Error::Config(format!(
                "unknown monitor {m:?}; available: gain, spread, eigen-floor, exp-moment"
            )));
        }
    }
    let plan = cfg.to_plan()?;
    let raw = in_pool(cfg.workers, || harness::run_coupled(&plan))?;
    if raw.reps.is_empty() {
        return Err(Error::Divergence {
            step: 0,
            detail: "all replications failed".into(),
        });
    }
    let dir = PathBuf::from(&cfg.out_dir);
    let model = &plan.model;
    let mut all_pass = true;
    let tol = 1e-9;

    for m in &cfg.monitors {
        match m.as_str() {
            "gain" => {
                let records: Vec<_> = raw
                    .reps
                    .iter()
                    .flat_map(|r| r.levels.iter().flat_map(|l| l.gain_records.iter().copied()))
                    .collect();
                let h = plan.grid.h();
                let gb = diagnostics::gain_bounds(&records, model, plan.ensemble_size, h, tol)?;
                all_pass &= gb.norm.all_pass() && gb.bare.all_pass();
                let p = write_file(&dir, "monitor_gain.csv", &with_header(gb.norm.to_csv(), &cfg).render())?;
                println!("wrote {}", p.display());
                let p = write_file(
                    &dir,
                    "monitor_gain_bare.csv",
                    &with_header(gb.bare.to_csv(), &cfg).render(),
                )?;
                println!("wrote {}", p.display());
            }
            "spread" => match plan.variant {
                Variant::Modified => {
                    let mut worst: Option<diagnostics::BoundReport> = None;
                    for rep in &raw.reps {
                        for l in &rep.levels {
                            let rp = diagnostics::spread_bound_modified(
                                &l.spread_a,
                                l.spread_a[0],
                                model,
                                plan.grid.horizon,
                                l.h,
                                tol,
                            );
                            all_pass &= rp.all_pass();
                            let replace = match &worst {
                                None => true,
                                Some(w) => rp.min_margin() < w.min_margin(),
                            };
                            if replace {
                                worst = Some(rp);
                            }
                        }
                    }
                    if let Some(w) = worst {
                        let p = write_file(
                            &dir,
                            "monitor_spread.csv",
                            &with_header(w.to_csv(), &cfg).render(),
                        )?;
                        println!("wrote {}", p.display());
                    }
                }
                Variant::Classical => {
                    let paths: Vec<Vec<f64>> = raw
                        .reps
                        .iter()
                        .map(|r| r.levels[0].spread_a.clone())
                        .collect();
                    let h = raw.reps[0].levels[0].h;
                    let rp = diagnostics::spread_expectation_classical(&paths, model, h, tol)?;
                    all_pass &= rp.all_pass();
                    let p = write_file(
                        &dir,
                        "monitor_spread.csv",
                        &with_header(rp.to_csv(), &cfg).render(),
                    )?;
                    println!("wrote {}", p.display());
                }
            },
            "eigen-floor" => {
                if plan.variant == Variant::Modified {
                    let mut worst: Option<diagnostics::BoundReport> = None;
                    for rep in &raw.reps {
                        for l in &rep.levels {
                            let rp = diagnostics::eigen_floor(&l.lambda_min, cfg.eig_floor, l.h);
                            all_pass &= rp.all_pass();
                            let replace = match &worst {
                                None => true,
                                Some(w) => rp.min_margin() < w.min_margin(),
                            };
                            if replace {
                                worst = Some(rp);
                            }
                        }
                    }
                    if let Some(w) = worst {
                        let p = write_file(
                            &dir,
                            "monitor_eigen_floor.csv",
                            &with_header(w.to_csv(), &cfg).render(),
                        )?;
                        println!("wrote {}", p.display());
                    }
                }
            }
            "exp-moment" => {
                let l_paths: Vec<Vec<f64>> = raw
                    .reps
                    .iter()
                    .filter_map(|r| r.ref_l.clone())
                    .collect();
                if !l_paths.is_empty() {
                    let est = diagnostics::exp_moment_estimate(
                        &l_paths,
                        plan.grid.h_fine(),
                        plan.delta.unwrap_or(1.0),
                    )?;
                    let mut t = CsvTable::new(&["estimate", "se", "overflowed"]);
                    t = with_header(t, &cfg);
                    t.push_row(vec![
                        fmt_f64(est.estimate),
                        fmt_f64(est.standard_error),
                        est.overflowed.to_string(),
                    ]);
                    let p = write_file(&dir, "monitor_exp_moment.csv", &t.render())?;
                    println!("wrote {}", p.display());
                }
            }
            _ => unreachable!(),
        }
    }
    if !all_pass {
        return Err(Error::Divergence {
            step: 0,
            detail: "one or more hard bound monitors failed".into(),
        });
    }
    println!("all monitors passed");
    Ok(())
}

fn cmd_report(input: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let report = value
        .get("report")
        .ok_or_else(|| Error::Config("no \"report\" object in input".into()))?;
    let slope = report.get("slope").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
    let r2 = report.get("r2").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
    let theory = report
        .get("theory_rate")
        .and_then(|v| v.as_f64())
        .unwrap_or(f64::NAN);
    println!("fitted slope {slope:.4} (theory {theory:.2}), R^2 {r2:.4}");
    if let Some(levels) = report.get("levels").and_then(|v| v.as_array()) {
        println!("{:>6} {:>14} {:>14} {:>14}", "level", "h", "metric", "se");
        for l in levels {
            println!(
                "{:>6} {:>14.6e} {:>14.6e} {:>14.6e}",
                l.get("level").and_then(|v| v.as_u64()).unwrap_or(0),
                l.get("h").and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
                l.get("metric").and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
                l.get("se").and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Truth(o) => cmd_truth(o),
        Command::Converge(o) => cmd_converge(o),
        Command::Diagnose(o) => cmd_diagnose(o),
        Command::Report { input } => cmd_report(input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
