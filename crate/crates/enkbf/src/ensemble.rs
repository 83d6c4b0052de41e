//! Ensembles and their derived statistics: mean, anomalies, observation
//! anomalies, covariance and spread.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// A `d x M` particle block; column `i` is member `X^(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::Config(format!(
                "ensemble size must be >= 2, got {}",
                members.ncols()
            )));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("ensemble contains non-finite entries".into()));
        }
        Ok(Ensemble { members })
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }
}

/// Mean, anomaly and covariance statistics of one ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    /// State anomalies `E`, d x M.
    pub anomalies: DMatrix<f64>,
    /// `g(X^(i))` per column, p x M.
    pub obs_values: DMatrix<f64>,
    pub obs_mean: DVector<f64>,
    /// Observation anomalies, p x M.
    pub obs_anomalies: DMatrix<f64>,
    /// Ensemble covariance `P = E E^T / (M - 1)`.
    pub covariance: DMatrix<f64>,
    /// Spread `V = tr(P)`.
    pub spread: f64,
}

fn column_mean(block: &DMatrix<f64>) -> DVector<f64> {
    let m = block.ncols() as f64;
    let mut mean = DVector::zeros(block.nrows());
    for c in block.column_iter() {
        mean += c;
    }
    mean / m
}

fn center(block: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = block.clone();
    for mut c in out.column_iter_mut() {
        c -= mean;
    }
    out
}

/// Ensemble mean, anomalies, observation anomalies, covariance and spread.
pub fn compute_stats(ensemble: &Ensemble, model: &ModelSpec) -> Result<EnsembleStats> {
    if ensemble.dim() != model.dim_state {
        return Err(Error::Dimension(format!(
            "ensemble dimension {} does not match model state dimension {}",
            ensemble.dim(),
            model.dim_state
        )));
    }
    let m = ensemble.size();
    let mean = column_mean(&ensemble.members);
    let anomalies = center(&ensemble.members, &mean);
    let obs_values = model.obs_map_block(&ensemble.members);
    let obs_mean = column_mean(&obs_values);
    let obs_anomalies = center(&obs_values, &obs_mean);
    let covariance = &anomalies * anomalies.transpose() / (m - 1) as f64;
    let spread = covariance.trace();
    Ok(EnsembleStats {
        mean,
        anomalies,
        obs_values,
        obs_mean,
        obs_anomalies,
        covariance,
        spread,
    })
}
