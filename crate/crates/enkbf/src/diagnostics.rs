//! Runtime bound monitors: gain norm bounds, spread growth bounds, covariance
//! eigenvalue floors, and the spread-dependent weight process behind the
//! exponentially weighted error metric.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::report::{fmt_f64, CsvTable};

/// Whether the monitored quantity must stay below or above its bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSense {
    Upper,
    Lower,
}

/// One monitored step.
#[derive(Debug, Clone, Copy)]
pub struct BoundRecord {
    pub step: usize,
    pub t: f64,
    pub value: f64,
    pub bound: f64,
}

/// A per-step bound check with pass flags recomputable from the stored
/// (value, bound) pairs.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub name: String,
    pub sense: BoundSense,
    pub tolerance: f64,
    pub records: Vec<BoundRecord>,
    pub warning: Option<String>,
}

impl BoundReport {
    pub fn new(name: &str, sense: BoundSense, tolerance: f64) -> Self {
        BoundReport {
            name: name.to_string(),
            sense,
            tolerance,
            records: Vec::new(),
            warning: None,
        }
    }

    pub fn push(&mut self, step: usize, t: f64, value: f64, bound: f64) {
        self.records.push(BoundRecord { step, t, value, bound });
    }

    pub fn margin(&self, r: &BoundRecord) -> f64 {
        match self.sense {
            BoundSense::Upper => r.bound - r.value,
            BoundSense::Lower => r.value - r.bound,
        }
    }

    pub fn passes(&self, r: &BoundRecord) -> bool {
        self.margin(r) >= -self.tolerance
    }

    pub fn min_margin(&self) -> f64 {
        self.records
            .iter()
            .map(|r| self.margin(r))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn first_violation(&self) -> Option<usize> {
        self.records.iter().find(|r| !self.passes(r)).map(|r| r.step)
    }

    pub fn all_pass(&self) -> bool {
        self.first_violation().is_none()
    }

    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| !self.passes(r)).count()
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["k", "t", "value", "bound", "margin", "pass"]);
        t.comment("monitor", &self.name);
        t.comment("tolerance", fmt_f64(self.tolerance));
        if let Some(w) = &self.warning {
            t.comment("warning", w);
        }
        for r in &self.records {
            t.push_row(vec![
                r.step.to_string(),
                fmt_f64(r.t),
                fmt_f64(r.value),
                fmt_f64(r.bound),
                fmt_f64(self.margin(r)),
                self.passes(r).to_string(),
            ]);
        }
        t
    }
}

/// `kappa = 64 ||C^{-1}||^2 (4 sup_g^2 + ||C||) M / (M-1)`.
pub fn kappa(model: &ModelSpec, m: usize) -> f64 {
    let ratio = m as f64 / (m - 1) as f64;
    64.0 * model.c_inv_norm().powi(2) * (4.0 * model.sup_g.powi(2) + model.c_norm()) * ratio
}

/// The spread-dependent rate process
/// `L = 1/2 + lip_f + lip_g^2 ||C^{-1}|| V + kappa (4 sup_g^2 M/(M-1) + lip_g^2 V)`.
#[allow(non_snake_case)]
pub fn weight_L(spread: f64, model: &ModelSpec, m: usize) -> Result<f64> {
    if !model.bounded() {
        return Err(Error::Unsupported(
            "weight process requires a finite sup_g (bounded observation map)".into(),
        ));
    }
    let ratio = m as f64 / (m - 1) as f64;
    let k = kappa(model, m);
    Ok(0.5
        + model.lip_f
        + model.lip_g.powi(2) * model.c_inv_norm() * spread
        + k * (4.0 * model.sup_g.powi(2) * ratio + model.lip_g.powi(2) * spread))
}

/// L along a grid with the trapezoid cumulative integral of `2L` and the
/// weights `e^{-int 2L}`.
#[derive(Debug, Clone)]
pub struct WeightProcess {
    pub l_values: Vec<f64>,
    /// `int_0^{t_k} 2 L(s) ds`, trapezoid rule.
    pub integral: Vec<f64>,
    /// `e^{-integral}`.
    pub weights: Vec<f64>,
}

pub fn weight_process(l_values: Vec<f64>, h: f64) -> WeightProcess {
    let n = l_values.len();
    let mut integral = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut acc = 0.0;
    for k in 0..n {
        if k > 0 {
            acc += h * (l_values[k - 1] + l_values[k]);
        }
        integral.push(acc);
        weights.push((-acc).exp());
    }
    WeightProcess {
        l_values,
        integral,
        weights,
    }
}

/// `e^{2 (Lf)_+ t} v0 + tr(Q) (e^{2 (Lf)_+ t} - 1) / (2 (Lf)_+)`, with the
/// analytic limit `v0 + tr(Q) t` at `(Lf)_+ = 0`.
pub fn spread_growth_bound(one_sided_f: f64, t: f64, v0: f64, trace_q: f64) -> f64 {
    if one_sided_f == 0.0 {
        v0 + trace_q * t
    } else {
        let e = (2.0 * one_sided_f * t).exp();
        e * v0 + trace_q * (e - 1.0) / (2.0 * one_sided_f)
    }
}

/// Pathwise spread bound for a modified run: every `V(t_k)` must stay below
/// the horizon bound `v*` plus the one-Euler-step allowance
/// `slack(h) = (tr(Q) + 2 (Lf)_+ v*) h`.
pub fn spread_bound_modified(
    spreads: &[f64],
    v0: f64,
    model: &ModelSpec,
    horizon: f64,
    h: f64,
    tolerance: f64,
) -> BoundReport {
    let mut report = BoundReport::new("spread_modified", BoundSense::Upper, tolerance);
    if spreads.is_empty() {
        return report;
    }
    let lf = model.one_sided_f;
    let v_star = spread_growth_bound(lf, horizon, v0, model.trace_q());
    let slack = (model.trace_q() + 2.0 * lf * v_star) * h;
    for (k, &v) in spreads.iter().enumerate() {
        report.push(k, k as f64 * h, v, v_star + slack);
    }
    report
}

/// Expected-spread bound for classical runs: the replication mean of `V(t_k)`
/// against the Lemma growth bound plus `5 SE` statistical slack.
pub fn spread_expectation_classical(
    spread_paths: &[Vec<f64>],
    model: &ModelSpec,
    h: f64,
    tolerance: f64,
) -> Result<BoundReport> {
    let r = spread_paths.len();
    if r == 0 {
        return Err(Error::Config("no spread paths supplied".into()));
    }
    let n = spread_paths[0].len();
    if spread_paths.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension("spread paths have unequal lengths".into()));
    }
    let mut report = BoundReport::new("spread_classical_mean", BoundSense::Upper, tolerance);
    if r < 30 {
        report.warning = Some(format!(
            "only {r} replications; the 5-SE slack is unreliable below 30"
        ));
    }
    let v0_mean = spread_paths.iter().map(|p| p[0]).sum::<f64>() / r as f64;
    let lf = model.one_sided_f;
    for k in 0..n {
        let mean = spread_paths.iter().map(|p| p[k]).sum::<f64>() / r as f64;
        let var = if r > 1 {
            spread_paths
                .iter()
                .map(|p| (p[k] - mean).powi(2))
                .sum::<f64>()
                / (r - 1) as f64
        } else {
            0.0
        };
        let se = (var / r as f64).sqrt();
        let t = k as f64 * h;
        let bound = spread_growth_bound(lf, t, v0_mean, model.trace_q()) + 5.0 * se;
        report.push(k, t, mean, bound);
    }
    Ok(report)
}

/// Per-step gain data for `gain_bounds`.
#[derive(Debug, Clone, Copy)]
pub struct GainStepRecord {
    pub step: usize,
    pub t: f64,
    /// `||K||^2` (operator norm squared).
    pub gain_sq: f64,
    /// `||E G^T C^{-1} / (M-1)||^2`.
    pub bare_gain_sq: f64,
    /// Forecast spread of the run under test.
    pub spread_f: f64,
    /// Present when a coupled reference run shares the noise path.
    pub coupled: Option<GainCoupledRecord>,
}

/// Coupled quantities for the gain-difference bound.
#[derive(Debug, Clone, Copy)]
pub struct GainCoupledRecord {
    /// `||K - E G^T C^{-1}/(M-1)||^2` where the bare term comes from the reference run.
    pub diff_sq: f64,
    /// `(1/(M-1)) sum_i ||X^(i),f - X^(i)_ref||^2`.
    pub forecast_discrepancy: f64,
    /// Reference-run spread at the same time.
    pub ref_spread: f64,
}

#[derive(Debug, Clone)]
pub struct GainBounds {
    /// `||K||^2 <= 4 sup_g^2 ||C^{-1}||^2 M/(M-1) V^f`.
    pub norm: BoundReport,
    /// Same right side for the bare continuous-form gain.
    pub bare: BoundReport,
    /// Coupled difference bound; only for steps carrying coupled data.
    pub difference: Option<BoundReport>,
}

pub fn gain_bounds(
    records: &[GainStepRecord],
    model: &ModelSpec,
    m: usize,
    h: f64,
    tolerance: f64,
) -> Result<GainBounds> {
    if !model.bounded() {
        return Err(Error::Unsupported(
            "gain bounds require a finite sup_g (bounded observation map)".into(),
        ));
    }
    let ratio = m as f64 / (m - 1) as f64;
    let c1 = 4.0 * model.sup_g.powi(2) * model.c_inv_norm().powi(2) * ratio;
    let mut norm = BoundReport::new("gain_norm", BoundSense::Upper, tolerance);
    let mut bare = BoundReport::new("gain_bare_norm", BoundSense::Upper, tolerance);
    let mut difference = BoundReport::new("gain_difference", BoundSense::Upper, tolerance);
    let mut have_coupled = false;
    for r in records {
        norm.push(r.step, r.t, r.gain_sq, c1 * r.spread_f);
        bare.push(r.step, r.t, r.bare_gain_sq, c1 * r.spread_f);
        if let Some(c) = r.coupled {
            have_coupled = true;
            let sup2 = model.sup_g.powi(2);
            let lip2 = model.lip_g.powi(2);
            let cinv2 = model.c_inv_norm().powi(2);
            let rhs = 16.0
                * cinv2
                * (h * h * 8.0 * sup2 * sup2 * lip2 * cinv2 * ratio * ratio
                    * r.spread_f
                    * r.spread_f
                    + (4.0 * sup2 * ratio + lip2 * c.ref_spread) * c.forecast_discrepancy);
            difference.push(r.step, r.t, c.diff_sq, rhs);
        }
    }
    Ok(GainBounds {
        norm,
        bare,
        difference: have_coupled.then_some(difference),
    })
}

/// Smallest analysis-covariance eigenvalue per step against a fixed floor.
pub fn eigen_floor(lambda_path: &[f64], floor: f64, h: f64) -> BoundReport {
    let mut report = BoundReport::new("eigen_floor", BoundSense::Lower, 0.0);
    for (k, &l) in lambda_path.iter().enumerate() {
        report.push(k, k as f64 * h, l, floor);
    }
    report
}

/// Monte-Carlo estimate of `sup_k mean_r e^{2 delta int_0^{t_k} L}` with its
/// standard error at the attaining node. Overflow is reported as an infinite
/// estimate, flagged.
#[derive(Debug, Clone, Copy)]
pub struct ExpMomentEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub overflowed: bool,
}

pub fn exp_moment_estimate(
    l_paths: &[Vec<f64>],
    h: f64,
    delta: f64,
) -> Result<ExpMomentEstimate> {
    if delta <= 0.0 {
        return Err(Error::Range(format!("delta must be positive, got {delta}")));
    }
    let r = l_paths.len();
    if r == 0 {
        return Err(Error::Config("no L paths supplied".into()));
    }
    let n = l_paths[0].len();
    if l_paths.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension("L paths have unequal lengths".into()));
    }
    // per-path cumulative trapezoid integral of L
    let mut best = f64::NEG_INFINITY;
    let mut best_se = 0.0;
    let mut integrals = vec![0.0f64; r];
    for k in 0..n {
        if k > 0 {
            for (i, path) in l_paths.iter().enumerate() {
                integrals[i] += 0.5 * h * (path[k - 1] + path[k]);
            }
        }
        let vals: Vec<f64> = integrals.iter().map(|&i| (2.0 * delta * i).exp()).collect();
        let mean = vals.iter().sum::<f64>() / r as f64;
        if mean > best {
            let var = if r > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64
            } else {
                0.0
            };
            best = mean;
            best_se = (var / r as f64).sqrt();
        }
    }
    Ok(ExpMomentEstimate {
        estimate: best,
        standard_error: best_se,
        overflowed: !best.is_finite(),
    })
}
