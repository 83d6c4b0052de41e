//! Reference signal simulation and the discrete observation increments both
//! filters consume.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::{sum_columns, NoiseLattice};

/// The reference trajectory at fine grid nodes, `d x (N_fine + 1)`.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    pub states: DMatrix<f64>,
    pub initial: DVector<f64>,
}

/// Observation increments at the fine level and every coarser dyadic level up
/// to the lattice refinement. `levels[j]` is `p x (N_fine / 2^j)`; coarse
/// increments are exact sums of the fine ones.
#[derive(Debug, Clone)]
pub struct ObservationIncrements {
    pub levels: Vec<DMatrix<f64>>,
}

impl ObservationIncrements {
    pub fn at_level(&self, level: u32) -> Result<&DMatrix<f64>> {
        self.levels
            .get(level as usize)
            .ok_or_else(|| Error::Range(format!("no observation level {level}")))
    }
}

/// Euler-Maruyama forward simulation of the signal on the fine grid:
/// `X_{k+1} = X_k + h f(X_k) + Q^{1/2} dW_k`.
pub fn simulate_signal(
    model: &ModelSpec,
    lattice: &NoiseLattice,
    x0: &DVector<f64>,
) -> Result<ReferencePath> {
    if x0.len() != model.dim_state {
        return Err(Error::Dimension(format!(
            "x0 has dimension {}, model expects {}",
            x0.len(),
            model.dim_state
        )));
    }
    if lattice.dim_state != model.dim_state {
        return Err(Error::Dimension("lattice/model state dimension mismatch".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("x0 contains non-finite entries".into()));
    }
    let n = lattice.grid.n_fine();
    let h = lattice.grid.h_fine();
    let q_sqrt = model.q_sqrt();
    let mut states = DMatrix::zeros(model.dim_state, n + 1);
    states.set_column(0, x0);
    let mut x = x0.clone();
    for k in 0..n {
        x = &x + model.drift(&x) * h + q_sqrt * lattice.dw_ref.column(k);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                detail: "signal state became non-finite".into(),
            });
        }
        states.set_column(k + 1, &x);
    }
    Ok(ReferencePath {
        states,
        initial: x0.clone(),
    })
}

/// Discrete observation increments
/// `dY_k = h g(X_{t_{k-1}}) + C^{1/2} (V_{t_k} - V_{t_{k-1}})`
/// generated once at the fine level and aggregated exactly to every coarser
/// level.
pub fn observation_increments(
    model: &ModelSpec,
    path: &ReferencePath,
    lattice: &NoiseLattice,
) -> Result<ObservationIncrements> {
    if lattice.dim_obs != model.dim_obs {
        return Err(Error::Dimension("lattice/model observation dimension mismatch".into()));
    }
    if path.states.ncols() != lattice.grid.n_fine() + 1 {
        return Err(Error::Dimension(
            "reference path was not generated on this lattice's grid".into(),
        ));
    }
    let n = lattice.grid.n_fine();
    let h = lattice.grid.h_fine();
    let c_sqrt = model.c_sqrt();
    let mut fine = DMatrix::zeros(model.dim_obs, n);
    for k in 0..n {
        let gx = model.obs_map(&path.states.column(k).into_owned());
        let dy = gx * h + c_sqrt * lattice.dv_obs.column(k);
        fine.set_column(k, &dy);
    }
    let mut levels = Vec::with_capacity(lattice.grid.refinement as usize + 1);
    levels.push(fine);
    for j in 1..=lattice.grid.refinement {
        let coarse = sum_columns(&levels[0], j);
        levels.push(coarse);
    }
    Ok(ObservationIncrements { levels })
}

/// Export a path to CSV (columns: step, t, x_1..x_d).
pub fn path_to_csv(path: &ReferencePath, h: f64) -> String {
    let mut out = String::from("step,t");
    for i in 0..path.states.nrows() {
        out.push_str(&format!(",x_{}", i + 1));
    }
    out.push('\n');
    for k in 0..path.states.ncols() {
        out.push_str(&format!("{},{}", k, crate::report::fmt_f64(k as f64 * h)));
        for i in 0..path.states.nrows() {
            out.push_str(&format!(",{}", crate::report::fmt_f64(path.states[(i, k)])));
        }
        out.push('\n');
    }
    out
}
