//! The deterministic-transform ensemble Kalman filter: anomaly-drift forecast,
//! averaged-innovation update, and the reference Kalman-Bucy moment recursion
//! for the linear mode.

use nalgebra::{DMatrix, DVector};

use crate::classical;
use crate::ensemble::{compute_stats, Ensemble, EnsembleStats};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelSpec;

/// Which gain formula the update uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainMode {
    /// `E G^T / (M-1) * (C + h/(M-1) G G^T)^{-1}` (default).
    Regularized,
    /// `E G^T C^{-1} / (M-1)`.
    Bare,
}

impl Default for GainMode {
    fn default() -> Self {
        GainMode::Regularized
    }
}

/// One step's intermediate quantities, including the smallest analysis
/// covariance eigenvalue seen before inversion.
#[derive(Debug, Clone)]
pub struct ModifiedStep {
    pub forecast: Ensemble,
    pub forecast_stats: EnsembleStats,
    pub gain: DMatrix<f64>,
    pub analysis: Ensemble,
    pub lambda_min_analysis: f64,
}

/// Inverse of the analysis covariance, guarded by an eigenvalue floor.
pub fn inverse_covariance(
    stats: &EnsembleStats,
    floor: f64,
    step: usize,
) -> Result<DMatrix<f64>> {
    linalg::sym_inverse_floored(&stats.covariance, floor, step)
}

/// Forecast with the anomaly drift replacing stochastic model noise:
/// `X^(i) <- X^(i) + h f(X^(i)) + (h/2) Q P^{-1} (X^(i) - xbar)`.
pub fn forecast_modified(
    analysis_prev: &Ensemble,
    stats_prev: &EnsembleStats,
    p_inv: &DMatrix<f64>,
    model: &ModelSpec,
    h: f64,
    step: usize,
) -> Result<Ensemble> {
    let d = model.dim_state;
    if analysis_prev.size() <= d {
        return Err(Error::Rank(format!(
            "deterministic filter needs M > d for an invertible covariance; M = {}, d = {}",
            analysis_prev.size(),
            d
        )));
    }
    let drift_matrix = &model.q * p_inv * (h / 2.0);
    let mut members = analysis_prev.members.clone();
    for (i, mut col) in members.column_iter_mut().enumerate() {
        let x = col.clone_owned();
        col += model.drift(&x) * h + &drift_matrix * stats_prev.anomalies.column(i);
    }
    if members.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step,
            detail: "modified forecast became non-finite".into(),
        });
    }
    Ok(Ensemble { members })
}

/// Averaged-innovation update, no stochastic perturbation:
/// `X^(i) <- X^(i),f + K (dY - h (g(X^(i),f) + gbar^f) / 2)`.
pub fn update_modified(
    forecast: &Ensemble,
    forecast_stats: &EnsembleStats,
    gain: &DMatrix<f64>,
    dy: &DVector<f64>,
    h: f64,
) -> Result<Ensemble> {
    if dy.len() != forecast_stats.obs_mean.len() {
        return Err(Error::Dimension("observation increment has wrong dimension".into()));
    }
    let mut members = forecast.members.clone();
    for i in 0..forecast.size() {
        let avg_obs =
            (forecast_stats.obs_values.column(i) + &forecast_stats.obs_mean) * 0.5;
        let innovation = dy - avg_obs * h;
        let correction = gain * innovation;
        let mut col = members.column_mut(i);
        col += correction;
    }
    Ensemble::new(members)
}

/// One full deterministic step.
pub fn step_modified(
    analysis_prev: &Ensemble,
    stats_prev: &EnsembleStats,
    model: &ModelSpec,
    h: f64,
    dy: &DVector<f64>,
    gain_mode: GainMode,
    eig_floor: f64,
    step: usize,
) -> Result<ModifiedStep> {
    let lambda_min_analysis = linalg::min_eigenvalue(&stats_prev.covariance);
    let p_inv = inverse_covariance(stats_prev, eig_floor, step)?;
    let forecast = forecast_modified(analysis_prev, stats_prev, &p_inv, model, h, step)?;
    let forecast_stats = compute_stats(&forecast, model)?;
    let gain = match gain_mode {
        GainMode::Regularized => classical::gain(&forecast_stats, model, h)?,
        GainMode::Bare => classical::bare_gain(&forecast_stats, model)?,
    };
    let analysis = update_modified(&forecast, &forecast_stats, &gain, dy, h)?;
    Ok(ModifiedStep {
        forecast,
        forecast_stats,
        gain,
        analysis,
        lambda_min_analysis,
    })
}

/// Mean/covariance path of the Euler-discretized Kalman-Bucy equations
/// driven by the same observation increments (linear mode reference):
/// `m <- m + h A m + P G^T C^{-1} (dY - h G m)`,
/// `P <- P + h (A P + P A^T + Q - P G^T C^{-1} G P)`.
#[derive(Debug, Clone)]
pub struct MomentPath {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

pub fn integrate_moments(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    c: &DMatrix<f64>,
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    dy: &DMatrix<f64>,
    h: f64,
) -> Result<MomentPath> {
    let d = a.nrows();
    let p_obs = g.nrows();
    if m0.len() != d || p0.nrows() != d || dy.nrows() != p_obs {
        return Err(Error::Dimension("moment recursion inputs disagree in shape".into()));
    }
    let c_inv = linalg::sym_inverse_floored(c, 0.0, 0)?;
    let gtc = g.transpose() * &c_inv;
    let n = dy.ncols();
    let mut means = Vec::with_capacity(n + 1);
    let mut covariances = Vec::with_capacity(n + 1);
    let mut m = m0.clone();
    let mut p = p0.clone();
    means.push(m.clone());
    covariances.push(p.clone());
    for k in 0..n {
        let innovation = dy.column(k) - g * &m * h;
        let m_next = &m + a * &m * h + &p * &gtc * innovation;
        let drift = a * &p + &p * a.transpose() + q - &p * &gtc * g * &p;
        let p_next = &p + drift * h;
        if m_next.iter().any(|v| !v.is_finite()) || p_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                detail: "Kalman-Bucy moment recursion became non-finite".into(),
            });
        }
        m = m_next;
        // re-symmetrize against drift of rounding errors
        p = (&p_next + p_next.transpose()) * 0.5;
        means.push(m.clone());
        covariances.push(p.clone());
    }
    Ok(MomentPath { means, covariances })
}
