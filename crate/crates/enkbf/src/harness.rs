//! Coupled multi-resolution experiments: one noise lattice per replication,
//! one reference run at the finest grid, coarse-stepsize runs on exact partial
//! sums of the same increments, and log-log rate fits of the error metrics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::classical;
use crate::diagnostics::{self, GainStepRecord};
use crate::ensemble::{compute_stats, Ensemble};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg;
use crate::model::ModelSpec;
use crate::modified::{self, GainMode};
use crate::noise::{CoarseNoise, NoiseLattice, DEFAULT_MEMORY_CAP};
use crate::report::{fmt_f64, CsvTable};
use crate::truth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classical,
    Modified,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Variant::Classical),
            "modified" => Ok(Variant::Modified),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected \"classical\" or \"modified\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Sup over nodes of the replication-mean of `e^{-int 2L} D` (classical).
    WeightedSup,
    /// Replication-mean of the pathwise sup of `D` (modified).
    SupExpectation,
    /// Sup over nodes of the replication-mean of `D`.
    PlainSupMse,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-sup" => Ok(MetricKind::WeightedSup),
            "sup-expectation" => Ok(MetricKind::SupExpectation),
            "plain-sup-mse" => Ok(MetricKind::PlainSupMse),
            other => Err(Error::Config(format!(
                "unknown metric {other:?}; expected \"weighted-sup\", \"sup-expectation\" or \"plain-sup-mse\""
            ))),
        }
    }
}

/// A coupled convergence experiment.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub variant: Variant,
    pub model: ModelSpec,
    /// Coarsest grid; its refinement exponent defines the reference grid.
    pub grid: GridSpec,
    /// Tested refinement exponents relative to the coarsest grid:
    /// level `j` runs at stepsize `h_j = (T/L) / 2^j`.
    pub levels: Vec<u32>,
    pub ensemble_size: usize,
    pub replications: usize,
    pub seed: u64,
    pub metric: MetricKind,
    /// Hölder exponent for the theory annotation, in (0, 1/2).
    pub gamma: f64,
    pub delta: Option<f64>,
    pub initial_center: DVector<f64>,
    pub initial_sigma: f64,
    pub gain_mode: GainMode,
    pub eig_floor: f64,
    pub memory_cap: usize,
}

/// The stock two-dimensional bounded test model.
pub fn default_model() -> ModelSpec {
    ModelSpec::new(
        crate::model::ModelKind::SinTanh { a: 1.0, b: 0.1 },
        2,
        2,
        DMatrix::identity(2, 2) * 0.09,
        DMatrix::identity(2, 2),
    )
    .expect("stock model is valid")
}

impl ExperimentPlan {
    /// The desk-scale default: T=1, h in {2^-4 .. 2^-9}, reference 2^-12, R=64.
    pub fn default_plan(variant: Variant, seed: u64) -> Self {
        let metric = match variant {
            Variant::Classical => MetricKind::WeightedSup,
            Variant::Modified => MetricKind::SupExpectation,
        };
        ExperimentPlan {
            variant,
            model: default_model(),
            grid: GridSpec::new(1.0, 16, 8).expect("dyadic grid"),
            levels: (0..=5).collect(),
            ensemble_size: 10,
            replications: 64,
            seed,
            metric,
            gamma: 0.45,
            delta: Some(1.0),
            initial_center: DVector::from_vec(vec![0.5, -0.3]),
            initial_sigma: 0.5,
            gain_mode: GainMode::Regularized,
            eig_floor: 1e-12,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("plan has no levels".into()));
        }
        let max_level = *self.levels.iter().max().unwrap();
        if max_level >= self.grid.refinement {
            return Err(Error::Config(format!(
                "max level {max_level} must be strictly below the refinement {} so the reference is finer",
                self.grid.refinement
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1/2), got {}",
                self.gamma
            )));
        }
        if let Some(d) = self.delta {
            if d <= 0.0 {
                return Err(Error::Range(format!("delta must be positive, got {d}")));
            }
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble size must be >= 2".into()));
        }
        if self.variant == Variant::Modified && self.ensemble_size <= self.model.dim_state {
            return Err(Error::Config(format!(
                "modified variant needs M > d; M = {}, d = {}",
                self.ensemble_size, self.model.dim_state
            )));
        }
        if self.metric == MetricKind::WeightedSup && !self.model.bounded() {
            return Err(Error::Config(
                "weighted metric needs a bounded observation map (missing weights otherwise)".into(),
            ));
        }
        if self.initial_center.len() != self.model.dim_state {
            return Err(Error::Dimension("initial center has wrong dimension".into()));
        }
        if !(self.initial_sigma >= 0.0) || !self.initial_sigma.is_finite() {
            return Err(Error::Config("initial sigma must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// One stepsize's record within one replication.
#[derive(Debug, Clone)]
pub struct LevelCurve {
    pub level: u32,
    pub h: f64,
    /// `D(t) = sum_i ||X^(i),a_{eta(t)} - X^(i),a_ref(t)||^2` sampled at every
    /// fine-grid node `t`; the coarse run is held at the last node `eta(t)`.
    pub d_curve: Vec<f64>,
    pub spread_a: Vec<f64>,
    pub gain_records: Vec<GainStepRecord>,
    /// Smallest analysis-covariance eigenvalue per consumed step (modified).
    pub lambda_min: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub rep: usize,
    pub levels: Vec<LevelCurve>,
    /// Reference-run analysis spread along the fine grid.
    pub ref_spread: Vec<f64>,
    /// Weight-process L along the reference run (bounded models only).
    pub ref_l: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct CoupledOutput {
    pub reps: Vec<ReplicationResult>,
    /// (replication index, reason) for excluded replications.
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
struct FilterRunRecord {
    /// Analyses kept every `keep_stride` nodes (node 0 included).
    analyses: Vec<Ensemble>,
    spread_a: Vec<f64>,
    gain_records: Vec<GainStepRecord>,
    lambda_min: Vec<f64>,
}

fn member_noise_block(blocks: &[DMatrix<f64>], col: usize) -> DMatrix<f64> {
    DMatrix::from_fn(blocks[0].nrows(), blocks.len(), |r, i| blocks[i][(r, col)])
}

fn run_filter(
    variant: Variant,
    model: &ModelSpec,
    initial: &Ensemble,
    noise: &CoarseNoise,
    dy: &DMatrix<f64>,
    gain_mode: GainMode,
    eig_floor: f64,
    keep_stride: usize,
) -> Result<FilterRunRecord> {
    let n = dy.ncols();
    let h = noise.h;
    let mut analyses = Vec::with_capacity(n / keep_stride + 1);
    let mut spread_a = Vec::with_capacity(n + 1);
    let mut gain_records = Vec::with_capacity(n);
    let mut lambda_min = Vec::new();
    let mut current = initial.clone();
    let mut stats = compute_stats(&current, model)?;
    spread_a.push(stats.spread);
    analyses.push(current.clone());
    for k in 0..n {
        let dyk = dy.column(k).into_owned();
        let (analysis, gain_sq, bare_gain_sq, spread_f) = match variant {
            Variant::Classical => {
                let dw = member_noise_block(&noise.dw_ens, k);
                let dv = member_noise_block(&noise.dv_ens, k);
                let step = classical::step_classical(&current, model, h, &dw, &dv, &dyk, k + 1)?;
                let bare = classical::bare_gain(&step.forecast_stats, model)?;
                (
                    step.analysis,
                    linalg::operator_norm(&step.gain).powi(2),
                    linalg::operator_norm(&bare).powi(2),
                    step.forecast_stats.spread,
                )
            }
            Variant::Modified => {
                let step = modified::step_modified(
                    &current, &stats, model, h, &dyk, gain_mode, eig_floor, k + 1,
                )?;
                lambda_min.push(step.lambda_min_analysis);
                let bare = classical::bare_gain(&step.forecast_stats, model)?;
                (
                    step.analysis,
                    linalg::operator_norm(&step.gain).powi(2),
                    linalg::operator_norm(&bare).powi(2),
                    step.forecast_stats.spread,
                )
            }
        };
        gain_records.push(GainStepRecord {
            step: k + 1,
            t: (k + 1) as f64 * h,
            gain_sq,
            bare_gain_sq,
            spread_f,
            coupled: None,
        });
        current = analysis;
        stats = compute_stats(&current, model)?;
        spread_a.push(stats.spread);
        if (k + 1) % keep_stride == 0 {
            analyses.push(current.clone());
        }
    }
    if variant == Variant::Modified {
        lambda_min.push(linalg::min_eigenvalue(&stats.covariance));
    }
    Ok(FilterRunRecord {
        analyses,
        spread_a,
        gain_records,
        lambda_min,
    })
}

fn sum_discrepancy(a: &Ensemble, b: &Ensemble) -> f64 {
    (&a.members - &b.members).norm_squared()
}

fn run_replication(plan: &ExperimentPlan, rep: usize) -> Result<ReplicationResult> {
    let model = &plan.model;
    let seed = plan.seed.wrapping_add(rep as u64);
    let lattice = NoiseLattice::generate(
        seed,
        model.dim_state,
        model.dim_obs,
        plan.grid,
        plan.ensemble_size,
        plan.memory_cap,
    )?;
    let path = truth::simulate_signal(model, &lattice, &plan.initial_center)?;
    let obs = truth::observation_increments(model, &path, &lattice)?;
    let initial =
        Ensemble::new(lattice.initial_ensemble(&plan.initial_center, plan.initial_sigma))?;

    let r = plan.grid.refinement;

    let fine_noise = lattice.coarsen(0)?;
    let reference = run_filter(
        plan.variant,
        model,
        &initial,
        &fine_noise,
        obs.at_level(0)?,
        plan.gain_mode,
        plan.eig_floor,
        1,
    )?;
    let ref_l = if model.bounded() {
        Some(
            reference
                .spread_a
                .iter()
                .map(|&v| diagnostics::weight_L(v, model, plan.ensemble_size))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let mut levels = Vec::with_capacity(plan.levels.len());
    for &level in &plan.levels {
        let sum_exp = r - level;
        let noise = lattice.coarsen(sum_exp)?;
        let dy = obs.at_level(sum_exp)?;
        let run = run_filter(
            plan.variant,
            model,
            &initial,
            &noise,
            dy,
            plan.gain_mode,
            plan.eig_floor,
            1,
        )?;
        // fine node f lies in the coarse cell starting at node f / stride;
        // integer division realizes eta (exact nodes map to themselves)
        let stride = 1usize << sum_exp;
        let d_curve: Vec<f64> = reference
            .analyses
            .iter()
            .enumerate()
            .map(|(f, e_ref)| sum_discrepancy(&run.analyses[f / stride], e_ref))
            .collect();
        levels.push(LevelCurve {
            level,
            h: noise.h,
            d_curve,
            spread_a: run.spread_a,
            gain_records: run.gain_records,
            lambda_min: run.lambda_min,
        });
    }
    Ok(ReplicationResult {
        rep,
        levels,
        ref_spread: reference.spread_a,
        ref_l,
    })
}

/// Run all replications; collapse/divergence failures are excluded and
/// reported, any other error aborts.
pub fn run_coupled(plan: &ExperimentPlan) -> Result<CoupledOutput> {
    plan.validate()?;
    let outcomes: Vec<(usize, Result<ReplicationResult>)> = (0..plan.replications)
        .into_par_iter()
        .map(|rep| (rep, run_replication(plan, rep)))
        .collect();
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(res) => reps.push(res),
            Err(e @ (Error::Collapse { .. } | Error::Divergence { .. })) => {
                failures.push((rep, e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CoupledOutput { reps, failures })
}

/// Replication-mean (and standard error) of the pathwise sup of `D`.
pub fn metric_modified_sup(d_curves: &[Vec<f64>]) -> (f64, f64) {
    let sups: Vec<f64> = d_curves
        .iter()
        .map(|c| c.iter().cloned().fold(0.0f64, f64::max))
        .collect();
    mean_se(&sups)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) as f64 * n as f64))
            .sqrt()
    } else {
        0.0
    };
    (mean, se)
}

/// Sup over nodes of the replication-mean of per-rep node values; SE taken at
/// the attaining node.
fn sup_of_mean(values: &[Vec<f64>]) -> (f64, f64) {
    let n = values[0].len();
    let mut best = f64::NEG_INFINITY;
    let mut best_se = 0.0;
    for k in 0..n {
        let node: Vec<f64> = values.iter().map(|c| c[k]).collect();
        let (mean, se) = mean_se(&node);
        if mean > best {
            best = mean;
            best_se = se;
        }
    }
    (best, best_se)
}

/// Sup over nodes of the replication-mean of `D`.
pub fn metric_plain_sup_mse(d_curves: &[Vec<f64>]) -> (f64, f64) {
    sup_of_mean(d_curves)
}

/// Sup over nodes of the replication-mean of `e^{-int 2L} D`, weights supplied
/// per replication at the same nodes.
pub fn metric_classical_weighted(
    d_curves: &[Vec<f64>],
    weights: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if weights.len() != d_curves.len() {
        return Err(Error::Config("one weight path per replication required".into()));
    }
    let weighted: Vec<Vec<f64>> = d_curves
        .iter()
        .zip(weights)
        .map(|(c, w)| {
            if w.len() != c.len() {
                return Err(Error::Dimension(
                    "weight path length does not match the error curve".into(),
                ));
            }
            Ok(c.iter().zip(w).map(|(d, wt)| d * wt).collect())
        })
        .collect::<Result<_>>()?;
    Ok(sup_of_mean(&weighted))
}

/// Sup over nodes of the replication-mean of `D^{delta/(1+delta)}`.
pub fn corollary_metric(d_curves: &[Vec<f64>], delta: f64) -> Result<(f64, f64)> {
    if delta <= 0.0 {
        return Err(Error::Range(format!("delta must be positive, got {delta}")));
    }
    let e = delta / (1.0 + delta);
    let powered: Vec<Vec<f64>> = d_curves
        .iter()
        .map(|c| c.iter().map(|d| d.powf(e)).collect())
        .collect();
    Ok(sup_of_mean(&powered))
}

/// Weights `e^{-int_0^{t} 2L}` along the fine grid, sampled every `stride`
/// nodes (trapezoid rule on the fine grid).
pub fn weights_at_stride(l_fine: &[f64], h_fine: f64, stride: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(l_fine.len() / stride + 1);
    let mut acc = 0.0;
    for k in 0..l_fine.len() {
        if k > 0 {
            acc += h_fine * (l_fine[k - 1] + l_fine[k]);
        }
        if k % stride == 0 {
            out.push((-acc).exp());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares on `(log h, log m)`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::Config(format!(
            "rate fit needs at least 3 levels, got {}",
            pairs.len()
        )));
    }
    for &(h, m) in pairs {
        if !(m > 0.0) {
            return Err(Error::Range(format!(
                "degenerate metric {m} at h = {h}; was a self-comparison level included?"
            )));
        }
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(h, m)| (h.ln(), m.ln())).collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let mx = sx / n;
    let my = sy / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r2,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: u32,
    pub h: f64,
    pub metric: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub variant: Variant,
    pub metric: MetricKind,
    pub seed: u64,
    pub levels: Vec<LevelSummary>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub theory_rate: f64,
    pub replications: usize,
    pub failed_replications: usize,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["level", "h", "metric", "se", "n"]);
        t.comment("variant", format!("{:?}", self.variant).to_lowercase());
        t.comment("seed", self.seed);
        t.comment("slope", fmt_f64(self.slope));
        t.comment("r2", fmt_f64(self.r2));
        t.comment("theory_rate", fmt_f64(self.theory_rate));
        t.comment("failed_replications", self.failed_replications);
        for l in &self.levels {
            t.push_row(vec![
                l.level.to_string(),
                fmt_f64(l.h),
                fmt_f64(l.metric),
                fmt_f64(l.se),
                l.n.to_string(),
            ]);
        }
        t
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub raw: CoupledOutput,
    pub report: ConvergenceReport,
}

/// Execute the plan end to end: coupled runs, metric per level, rate fit.
/// A replication failure rate above 5% fails the experiment.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    let raw = run_coupled(plan)?;
    let failed = raw.failures.len();
    if failed * 20 > plan.replications {
        return Err(Error::Divergence {
            step: 0,
            detail: format!(
                "{failed} of {} replications failed ({}); above the 5% gate",
                plan.replications,
                raw.failures
                    .first()
                    .map(|(_, m)| m.as_str())
                    .unwrap_or("unknown")
            ),
        });
    }
    if raw.reps.is_empty() {
        return Err(Error::Config("no successful replications".into()));
    }
    let report = summarize(plan, &raw)?;
    Ok(ExperimentOutput { raw, report })
}

fn summarize(plan: &ExperimentPlan, raw: &CoupledOutput) -> Result<ConvergenceReport> {
    let mut levels = Vec::with_capacity(plan.levels.len());
    for (li, &level) in plan.levels.iter().enumerate() {
        let d_curves: Vec<Vec<f64>> = raw
            .reps
            .iter()
            .map(|rep| rep.levels[li].d_curve.clone())
            .collect();
        let h = raw.reps[0].levels[li].h;
        let (metric, se) = match plan.metric {
            MetricKind::SupExpectation => metric_modified_sup(&d_curves),
            MetricKind::PlainSupMse => metric_plain_sup_mse(&d_curves),
            MetricKind::WeightedSup => {
                // D is sampled on the fine grid for every level
                let stride = 1usize;
                let weights: Vec<Vec<f64>> = raw
                    .reps
                    .iter()
                    .map(|rep| {
                        let l = rep.ref_l.as_ref().ok_or_else(|| {
                            Error::Config("weighted metric requires L paths".into())
                        })?;
                        Ok(weights_at_stride(l, plan.grid.h_fine(), stride))
                    })
                    .collect::<Result<_>>()?;
                metric_classical_weighted(&d_curves, &weights)?
            }
        };
        levels.push(LevelSummary {
            level,
            h,
            metric,
            se,
            n: raw.reps.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = levels.iter().map(|l| (l.h, l.metric)).collect();
    let fit = fit_rate(&pairs)?;
    let theory_rate = match plan.variant {
        Variant::Modified => 1.0,
        Variant::Classical => 2.0 * plan.gamma,
    };
    Ok(ConvergenceReport {
        variant: plan.variant,
        metric: plan.metric,
        seed: plan.seed,
        levels,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        theory_rate,
        replications: plan.replications,
        failed_replications: raw.failures.len(),
    })
}
