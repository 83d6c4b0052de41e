//! Time grids and the left/right grid-point maps used by the error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform partition of `[0, T]` into `steps` cells, together with a dyadic
/// refinement exponent. The fine grid backing the noise lattice has
/// `steps * 2^refinement` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: u32,
    pub refinement: u32,
}

impl GridSpec {
    pub fn new(horizon: f64, steps: u32, refinement: u32) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if refinement > 40 {
            return Err(Error::Config(format!("refinement {refinement} is unreasonably large")));
        }
        let g = GridSpec {
            horizon,
            steps,
            refinement,
        };
        // h * L must reproduce T exactly in f64; dyadic L with round T always does.
        if g.h() * steps as f64 != horizon {
            return Err(Error::Config(format!(
                "stepsize T/L = {}/{} does not reproduce T exactly in f64",
                horizon, steps
            )));
        }
        Ok(g)
    }

    /// Base stepsize `h = T / L`.
    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Number of cells on the fine grid.
    pub fn n_fine(&self) -> usize {
        (self.steps as usize) << self.refinement
    }

    /// Fine stepsize.
    pub fn h_fine(&self) -> f64 {
        self.horizon / self.n_fine() as f64
    }
}

/// Values of the four grid maps at one time point, relative to the base grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMaps {
    /// Largest grid point `<= t` (with grid points themselves mapped to themselves).
    pub eta: f64,
    /// Right endpoint of the cell containing `t`.
    pub eta_plus: f64,
    /// Index of `eta`.
    pub nu: u32,
    /// Index of `eta_plus`.
    pub nu_plus: u32,
}

/// Relative tolerance for snapping `t` onto a grid node.
const NODE_SNAP: f64 = 1e-9;

/// The maps eta, eta+, nu, nu+ on the base grid.
///
/// Interior grid points belong to the cell that ends at them: at `t = t_k`
/// (k >= 1) all four maps return the node itself, so error metrics sampled at
/// grid points compare analysis ensembles.
pub fn grid_maps(t: f64, grid: &GridSpec) -> Result<GridMaps> {
    let tol = grid.horizon * NODE_SNAP;
    if t < -tol || t > grid.horizon + tol {
        return Err(Error::Range(format!(
            "t = {t} outside [0, {}]",
            grid.horizon
        )));
    }
    let h = grid.h();
    let nearest = (t / h).round();
    if (t - nearest * h).abs() <= tol {
        let k = nearest as u32;
        if k == 0 {
            return Ok(GridMaps {
                eta: 0.0,
                eta_plus: h.min(grid.horizon),
                nu: 0,
                nu_plus: 1.min(grid.steps),
            });
        }
        return Ok(GridMaps {
            eta: k as f64 * h,
            eta_plus: k as f64 * h,
            nu: k,
            nu_plus: k,
        });
    }
    let k = (t / h).floor() as u32;
    Ok(GridMaps {
        eta: k as f64 * h,
        eta_plus: (k + 1) as f64 * h,
        nu: k,
        nu_plus: k + 1,
    })
}
