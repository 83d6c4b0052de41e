//! Flat JSON run configuration shared by the CLI subcommands.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::harness::{ExperimentPlan, MetricKind, Variant};
use crate::model::ModelSpec;
use crate::modified::GainMode;
use crate::noise::DEFAULT_MEMORY_CAP;

/// Flat key/value configuration; unknown keys are rejected. Every field has a
/// default so a minimal config can be `{}` plus flag overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: String,
    pub model: String,
    pub model_a: f64,
    pub model_b: f64,
    pub dim_state: usize,
    /// Diagonal signal covariance `Q = q_scale * Id`.
    pub q_scale: f64,
    /// Diagonal observation covariance `C = c_scale * Id`.
    pub c_scale: f64,
    pub horizon: f64,
    pub steps: u32,
    pub refinement: u32,
    pub levels: Vec<u32>,
    pub ensemble_size: usize,
    pub replications: usize,
    pub seed: u64,
    pub metric: String,
    pub gamma: f64,
    pub delta: f64,
    pub initial_center: Vec<f64>,
    pub initial_sigma: f64,
    pub gain_mode: String,
    pub eig_floor: f64,
    pub out_dir: String,
    pub workers: usize,
    pub dump_lattice: bool,
    /// Monitors consumed by the diagnose subcommand.
    pub monitors: Vec<String>,
    pub memory_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: "modified".into(),
            model: "sin-tanh".into(),
            model_a: 1.0,
            model_b: 0.1,
            dim_state: 2,
            q_scale: 0.09,
            c_scale: 1.0,
            horizon: 1.0,
            steps: 16,
            refinement: 8,
            levels: (0..=5).collect(),
            ensemble_size: 10,
            replications: 64,
            seed: 0,
            metric: String::new(), // resolved from the variant when empty
            gamma: 0.45,
            delta: 1.0,
            initial_center: vec![0.5, -0.3],
            initial_sigma: 0.5,
            gain_mode: "regularized".into(),
            eig_floor: 1e-12,
            out_dir: "out".into(),
            workers: 0, // 0 = rayon default
            dump_lattice: false,
            monitors: vec![
                "gain".into(),
                "spread".into(),
                "eigen-floor".into(),
                "exp-moment".into(),
            ],
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }
}

/// Environment override for the seed only.
pub const SEED_ENV: &str = "ENKBF_SEED";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Apply the seed environment override, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be a u64, got {v:?}")))?;
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse()
    }

    pub fn gain_mode(&self) -> Result<GainMode> {
        match self.gain_mode.as_str() {
            "regularized" => Ok(GainMode::Regularized),
            "bare" => Ok(GainMode::Bare),
            other => Err(Error::Config(format!(
                "unknown gain_mode {other:?}; expected \"regularized\" or \"bare\""
            ))),
        }
    }

    pub fn metric(&self) -> Result<MetricKind> {
        if self.metric.is_empty() {
            return Ok(match self.variant()? {
                Variant::Classical => MetricKind::WeightedSup,
                Variant::Modified => MetricKind::SupExpectation,
            });
        }
        self.metric.parse()
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        if !(self.q_scale > 0.0) || !(self.c_scale > 0.0) {
            return Err(Error::Config("q_scale and c_scale must be positive".into()));
        }
        ModelSpec::from_id(
            &self.model,
            self.model_a,
            self.model_b,
            self.dim_state,
            DMatrix::identity(self.dim_state, self.dim_state) * self.q_scale,
            DMatrix::identity(self.dim_state, self.dim_state) * self.c_scale,
        )
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.horizon, self.steps, self.refinement)
    }

    /// Build and validate the experiment plan.
    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let plan = ExperimentPlan {
            variant: self.variant()?,
            model: self.model_spec()?,
            grid: self.grid()?,
            levels: self.levels.clone(),
            ensemble_size: self.ensemble_size,
            replications: self.replications,
            seed: self.seed,
            metric: self.metric()?,
            gamma: self.gamma,
            delta: Some(self.delta),
            initial_center: DVector::from_vec(self.initial_center.clone()),
            initial_sigma: self.initial_sigma,
            gain_mode: self.gain_mode()?,
            eig_floor: self.eig_floor,
            memory_cap: self.memory_cap,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Key/value pairs of the fully resolved config for output headers.
    pub fn header_entries(&self) -> Vec<(String, String)> {
        let json = serde_json::to_value(self).expect("config serializes");
        let map = json.as_object().expect("config is an object");
        map.iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect()
    }
}
