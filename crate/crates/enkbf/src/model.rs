//! Problem definition: signal drift, observation map, noise covariances and
//! the declared regularity constants the diagnostics rely on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Built-in model families addressable from configuration by string id.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// `f(x) = a sin(x)`, `g(x) = b tanh(x)`, both componentwise, bounded and
    /// Lipschitz.
    SinTanh { a: f64, b: f64 },
    /// `f(x) = a x`, `g(x) = b x` (componentwise scaling). Unbounded maps:
    /// diagnostics that need a finite sup bound are disabled in this mode.
    Linear { a: f64, b: f64 },
}

/// The signal/observation model together with its declared constants.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim_state: usize,
    pub dim_obs: usize,
    /// Signal noise covariance, symmetric positive definite, d x d.
    pub q: DMatrix<f64>,
    /// Observation noise covariance, symmetric positive definite, p x p.
    pub c: DMatrix<f64>,
    pub lip_f: f64,
    pub lip_g: f64,
    /// May be infinite (linear mode).
    pub sup_f: f64,
    /// May be infinite (linear mode).
    pub sup_g: f64,
    /// One-sided Lipschitz (dissipativity) constant of the drift, `(Lf)_+`.
    pub one_sided_f: f64,
    // cached factors and norms
    q_sqrt: DMatrix<f64>,
    c_sqrt: DMatrix<f64>,
    c_inv_norm: f64,
    c_norm: f64,
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        dim_state: usize,
        dim_obs: usize,
        q: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self> {
        if dim_state == 0 || dim_obs == 0 {
            return Err(Error::Config("state and observation dimensions must be positive".into()));
        }
        // componentwise maps keep state and observation dimension equal
        if dim_obs != dim_state {
            return Err(Error::Config(
                "built-in componentwise models require dim_obs == dim_state".into(),
            ));
        }
        if q.nrows() != dim_state || q.ncols() != dim_state {
            return Err(Error::Dimension(format!(
                "Q must be {dim_state}x{dim_state}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if c.nrows() != dim_obs || c.ncols() != dim_obs {
            return Err(Error::Dimension(format!(
                "C must be {dim_obs}x{dim_obs}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        for (name, m) in [("Q", &q), ("C", &c)] {
            if !linalg::is_symmetric(m, linalg::SYM_TOL) {
                return Err(Error::Config(format!("{name} is not symmetric")));
            }
            if linalg::min_eigenvalue(m) <= 0.0 {
                return Err(Error::Config(format!("{name} is not positive definite")));
            }
        }
        let (lip_f, lip_g, sup_f, sup_g, one_sided_f) = match kind {
            ModelKind::SinTanh { a, b } => {
                let d = dim_state as f64;
                (a.abs(), b.abs(), a.abs() * d.sqrt(), b.abs() * d.sqrt(), a.max(0.0))
            }
            ModelKind::Linear { a, b } => {
                (a.abs(), b.abs(), f64::INFINITY, f64::INFINITY, a.max(0.0))
            }
        };
        let q_sqrt = linalg::sym_sqrt(&q)?;
        let c_sqrt = linalg::sym_sqrt(&c)?;
        let c_inv = linalg::sym_inverse_floored(&c, 0.0, 0)?;
        let c_inv_norm = linalg::sym_operator_norm(&c_inv);
        let c_norm = linalg::sym_operator_norm(&c);
        let spec = ModelSpec {
            kind,
            dim_state,
            dim_obs,
            q,
            c,
            lip_f,
            lip_g,
            sup_f,
            sup_g,
            one_sided_f,
            q_sqrt,
            c_sqrt,
            c_inv_norm,
            c_norm,
        };
        spec.check_sampled_constants()?;
        Ok(spec)
    }

    /// Resolve a model id string plus scalar parameters.
    pub fn from_id(
        id: &str,
        a: f64,
        b: f64,
        dim_state: usize,
        q: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self> {
        let kind = match id {
            "sin-tanh" => ModelKind::SinTanh { a, b },
            "linear" => ModelKind::Linear { a, b },
            other => {
                return Err(Error::Config(format!(
                    "unknown model id {other:?}; available: \"sin-tanh\", \"linear\""
                )))
            }
        };
        ModelSpec::new(kind, dim_state, dim_state, q, c)
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            ModelKind::SinTanh { a, .. } => x.map(|v| a * v.sin()),
            ModelKind::Linear { a, .. } => x * a,
        }
    }

    pub fn obs_map(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            ModelKind::SinTanh { b, .. } => x.map(|v| b * v.tanh()),
            ModelKind::Linear { b, .. } => x * b,
        }
    }

    /// Observation map applied to every column.
    pub fn obs_map_block(&self, members: &DMatrix<f64>) -> DMatrix<f64> {
        match self.kind {
            ModelKind::SinTanh { b, .. } => members.map(|v| b * v.tanh()),
            ModelKind::Linear { b, .. } => members * b,
        }
    }

    /// True when both maps carry finite sup bounds.
    pub fn bounded(&self) -> bool {
        self.sup_f.is_finite() && self.sup_g.is_finite()
    }

    /// In linear mode, the observation matrix `G = b * Id`.
    pub fn linear_obs_matrix(&self) -> Result<DMatrix<f64>> {
        match self.kind {
            ModelKind::Linear { b, .. } => {
                Ok(DMatrix::identity(self.dim_obs, self.dim_state) * b)
            }
            _ => Err(Error::Unsupported(
                "linear observation matrix only available in linear mode".into(),
            )),
        }
    }

    /// In linear mode, the drift matrix `A = a * Id`.
    pub fn linear_drift_matrix(&self) -> Result<DMatrix<f64>> {
        match self.kind {
            ModelKind::Linear { a, .. } => {
                Ok(DMatrix::identity(self.dim_state, self.dim_state) * a)
            }
            _ => Err(Error::Unsupported(
                "linear drift matrix only available in linear mode".into(),
            )),
        }
    }

    pub fn q_sqrt(&self) -> &DMatrix<f64> {
        &self.q_sqrt
    }

    pub fn c_sqrt(&self) -> &DMatrix<f64> {
        &self.c_sqrt
    }

    /// Operator norm of `C^{-1}`.
    pub fn c_inv_norm(&self) -> f64 {
        self.c_inv_norm
    }

    /// Operator norm of `C`.
    pub fn c_norm(&self) -> f64 {
        self.c_norm
    }

    pub fn trace_q(&self) -> f64 {
        self.q.trace()
    }

    /// Sampled sanity check of the declared Lipschitz / one-sided / sup
    /// constants on random point pairs.
    fn check_sampled_constants(&self) -> Result<()> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_c0de);
        let tol = 1.0 + 1e-9;
        for _ in 0..64 {
            let x = DVector::from_fn(self.dim_state, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                4.0 * z
            });
            let y = DVector::from_fn(self.dim_state, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                4.0 * z
            });
            let dxy = (&x - &y).norm();
            let df = self.drift(&x) - self.drift(&y);
            if df.norm() > self.lip_f * dxy * tol {
                return Err(Error::Config(format!(
                    "declared lip_f = {} violated on sampled points",
                    self.lip_f
                )));
            }
            if df.dot(&(&x - &y)) > self.one_sided_f * dxy * dxy * tol + 1e-12 {
                return Err(Error::Config(format!(
                    "declared one_sided_f = {} violated on sampled points",
                    self.one_sided_f
                )));
            }
            let dg = self.obs_map(&x) - self.obs_map(&y);
            if dg.norm() > self.lip_g * dxy * tol {
                return Err(Error::Config(format!(
                    "declared lip_g = {} violated on sampled points",
                    self.lip_g
                )));
            }
            if self.sup_g.is_finite() {
                let r: f64 = rng.random::<f64>() * 50.0;
                let far = &x * r;
                if self.obs_map(&far).norm() > self.sup_g * tol {
                    return Err(Error::Config(format!(
                        "declared sup_g = {} violated on sampled points",
                        self.sup_g
                    )));
                }
            }
        }
        Ok(())
    }
}
