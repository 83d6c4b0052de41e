//! Strong coupling rate of the deterministic filter: runs the stock plan at
//! six stepsizes against a fine-grid reference on the same noise and fits the
//! log-log slope of the mean pathwise-sup error (expected near 1).

use enkbf::harness::{run_experiment, ExperimentPlan, Variant};

fn main() -> enkbf::Result<()> {
    let mut plan = ExperimentPlan::default_plan(Variant::Modified, 7);
    if let Some(r) = std::env::args().nth(1) {
        plan.replications = r.parse().expect("replication count");
    }
    let out = run_experiment(&plan)?;
    println!("{:>6} {:>12} {:>14} {:>12}", "level", "h", "metric", "se");
    for l in &out.report.levels {
        println!("{:>6} {:>12.6e} {:>14.6e} {:>12.2e}", l.level, l.h, l.metric, l.se);
    }
    println!(
        "slope {:.4} (theory {:.1}), R^2 {:.4}, failed {}",
        out.report.slope, out.report.theory_rate, out.report.r2, out.report.failed_replications
    );
    Ok(())
}
