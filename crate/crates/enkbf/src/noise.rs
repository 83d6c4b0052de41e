//! The Brownian noise lattice.
//!
//! All increments (signal truth, observation noise, per-member forecast noise,
//! per-member observation perturbations) are drawn once at the finest dyadic
//! resolution. Coarser stepsizes see the exact partial sums of the same fine
//! increments, so runs at different stepsizes share one underlying noise
//! realization.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Default cap on lattice storage.
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;

/// Stream roles within one lattice. Each (role, member) pair owns an
/// independent substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    SignalTruth,
    ObservationNoise,
    EnsembleForecast(usize),
    ObservationPerturbation(usize),
    InitialEnsemble,
}

impl StreamRole {
    fn key(self) -> u64 {
        match self {
            StreamRole::SignalTruth => 1 << 32,
            StreamRole::ObservationNoise => 2 << 32,
            StreamRole::EnsembleForecast(i) => (3 << 32) | i as u64,
            StreamRole::ObservationPerturbation(i) => (4 << 32) | i as u64,
            StreamRole::InitialEnsemble => 5 << 32,
        }
    }
}

// SplitMix64 finalizer; decorrelates the per-stream seeds derived from
// (seed, role, member).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic counter-based stream for one (seed, role) key.
pub fn stream_rng(seed: u64, role: StreamRole) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    let a = mix(seed ^ role.key());
    let b = mix(a ^ 0xd1b5_4a32_d192_ed03);
    let c = mix(b ^ 0xaef1_7502_07c3_7ea7);
    let d = mix(c ^ 0x8642_1f5c_05ea_5a7f);
    s[0..8].copy_from_slice(&a.to_le_bytes());
    s[8..16].copy_from_slice(&b.to_le_bytes());
    s[16..24].copy_from_slice(&c.to_le_bytes());
    s[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(s)
}

fn gaussian_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// All Brownian increments of one replication at the finest resolution.
///
/// Increment matrices are `dim x n_fine`; column `k` is the increment over
/// fine cell `k`. Each entry is `N(0, h_fine)`.
#[derive(Debug, Clone)]
pub struct NoiseLattice {
    pub grid: GridSpec,
    pub seed: u64,
    pub dim_state: usize,
    pub dim_obs: usize,
    pub ensemble_size: usize,
    /// Signal-truth increments, d x N_fine.
    pub dw_ref: DMatrix<f64>,
    /// Observation-noise increments, p x N_fine.
    pub dv_obs: DMatrix<f64>,
    /// Per-member forecast-noise increments, M blocks of d x N_fine.
    pub dw_ens: Vec<DMatrix<f64>>,
    /// Per-member observation perturbations, M blocks of p x N_fine.
    pub dv_ens: Vec<DMatrix<f64>>,
}

/// A coarse view of a lattice stream: every coarse increment is the exact sum
/// of the `2^level` fine increments it covers.
#[derive(Debug, Clone)]
pub struct CoarseNoise {
    /// Coarsening factor exponent; factor is `2^level`.
    pub level: u32,
    pub h: f64,
    pub dw_ref: DMatrix<f64>,
    pub dv_obs: DMatrix<f64>,
    pub dw_ens: Vec<DMatrix<f64>>,
    pub dv_ens: Vec<DMatrix<f64>>,
}

/// Sum groups of `2^level` adjacent columns exactly.
pub fn sum_columns(fine: &DMatrix<f64>, level: u32) -> DMatrix<f64> {
    let factor = 1usize << level;
    let n_coarse = fine.ncols() / factor;
    let mut out = DMatrix::zeros(fine.nrows(), n_coarse);
    for k in 0..n_coarse {
        let mut acc = DVector::zeros(fine.nrows());
        for j in 0..factor {
            acc += fine.column(k * factor + j);
        }
        out.set_column(k, &acc);
    }
    out
}

pub fn estimate_bytes(grid: &GridSpec, dim_state: usize, dim_obs: usize, m: usize) -> usize {
    let streams = dim_state + dim_obs + m * (dim_state + dim_obs);
    streams * grid.n_fine() * std::mem::size_of::<f64>()
}

impl NoiseLattice {
    pub fn generate(
        seed: u64,
        dim_state: usize,
        dim_obs: usize,
        grid: GridSpec,
        ensemble_size: usize,
        memory_cap: usize,
    ) -> Result<Self> {
        if ensemble_size < 2 {
            return Err(Error::Config("ensemble size must be >= 2".into()));
        }
        let required = estimate_bytes(&grid, dim_state, dim_obs, ensemble_size);
        if required > memory_cap {
            return Err(Error::Resource {
                required,
                cap: memory_cap,
            });
        }
        let n = grid.n_fine();
        let scale = grid.h_fine().sqrt();
        let dw_ref = gaussian_block(&mut stream_rng(seed, StreamRole::SignalTruth), dim_state, n, scale);
        let dv_obs = gaussian_block(
            &mut stream_rng(seed, StreamRole::ObservationNoise),
            dim_obs,
            n,
            scale,
        );
        let dw_ens = (0..ensemble_size)
            .map(|i| {
                gaussian_block(
                    &mut stream_rng(seed, StreamRole::EnsembleForecast(i)),
                    dim_state,
                    n,
                    scale,
                )
            })
            .collect();
        let dv_ens = (0..ensemble_size)
            .map(|i| {
                gaussian_block(
                    &mut stream_rng(seed, StreamRole::ObservationPerturbation(i)),
                    dim_obs,
                    n,
                    scale,
                )
            })
            .collect();
        Ok(NoiseLattice {
            grid,
            seed,
            dim_state,
            dim_obs,
            ensemble_size,
            dw_ref,
            dv_obs,
            dw_ens,
            dv_ens,
        })
    }

    /// Exact coarse view summing `2^level` fine increments per coarse cell.
    pub fn coarsen(&self, level: u32) -> Result<CoarseNoise> {
        if level > self.grid.refinement {
            return Err(Error::Range(format!(
                "coarsening level {level} exceeds refinement {}",
                self.grid.refinement
            )));
        }
        Ok(CoarseNoise {
            level,
            h: self.grid.h_fine() * (1u64 << level) as f64,
            dw_ref: sum_columns(&self.dw_ref, level),
            dv_obs: sum_columns(&self.dv_obs, level),
            dw_ens: self.dw_ens.iter().map(|b| sum_columns(b, level)).collect(),
            dv_ens: self.dv_ens.iter().map(|b| sum_columns(b, level)).collect(),
        })
    }

    /// Initial ensemble draw, identical across all coarsening levels: members
    /// i.i.d. Gaussian around `center` with componentwise spread `sigma`.
    pub fn initial_ensemble(&self, center: &DVector<f64>, sigma: f64) -> DMatrix<f64> {
        let mut rng = stream_rng(self.seed, StreamRole::InitialEnsemble);
        let mut block = gaussian_block(&mut rng, self.dim_state, self.ensemble_size, sigma);
        for mut c in block.column_iter_mut() {
            c += center;
        }
        block
    }

    /// Serialize to a little-endian binary dump for reproducibility audits.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"ENKBFNL1")?;
        f.write_all(&self.seed.to_le_bytes())?;
        for v in [
            self.dim_state as u64,
            self.dim_obs as u64,
            self.ensemble_size as u64,
            self.grid.steps as u64,
            self.grid.refinement as u64,
        ] {
            f.write_all(&v.to_le_bytes())?;
        }
        f.write_all(&self.grid.horizon.to_le_bytes())?;
        let mut write_block = |b: &DMatrix<f64>| -> Result<()> {
            // stream-major: one stream (row) at a time, steps in order
            for r in 0..b.nrows() {
                for c in 0..b.ncols() {
                    f.write_all(&b[(r, c)].to_le_bytes())?;
                }
            }
            Ok(())
        };
        write_block(&self.dw_ref)?;
        write_block(&self.dv_obs)?;
        for b in &self.dw_ens {
            write_block(b)?;
        }
        for b in &self.dv_ens {
            write_block(b)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != b"ENKBFNL1" {
            return Err(Error::Config("not a noise lattice dump".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |f: &mut dyn Read| -> Result<u64> {
            f.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let seed = read_u64(&mut f)?;
        let dim_state = read_u64(&mut f)? as usize;
        let dim_obs = read_u64(&mut f)? as usize;
        let ensemble_size = read_u64(&mut f)? as usize;
        let steps = read_u64(&mut f)? as u32;
        let refinement = read_u64(&mut f)? as u32;
        let horizon = f64::from_bits(read_u64(&mut f)?);
        let grid = GridSpec::new(horizon, steps, refinement)?;
        let n = grid.n_fine();
        let read_block = |f: &mut dyn Read, rows: usize| -> Result<DMatrix<f64>> {
            let mut out = DMatrix::zeros(rows, n);
            let mut buf = [0u8; 8];
            for r in 0..rows {
                for c in 0..n {
                    f.read_exact(&mut buf)?;
                    out[(r, c)] = f64::from_le_bytes(buf);
                }
            }
            Ok(out)
        };
        let dw_ref = read_block(&mut f, dim_state)?;
        let dv_obs = read_block(&mut f, dim_obs)?;
        let dw_ens = (0..ensemble_size)
            .map(|_| read_block(&mut f, dim_state))
            .collect::<Result<Vec<_>>>()?;
        let dv_ens = (0..ensemble_size)
            .map(|_| read_block(&mut f, dim_obs))
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseLattice {
            grid,
            seed,
            dim_state,
            dim_obs,
            ensemble_size,
            dw_ref,
            dv_obs,
            dw_ens,
            dv_ens,
        })
    }
}

/// Center a block of `M` per-member increments at one step and return the
/// quadratic-spread statistic `W = sum_i ||w^(i) - wbar||^2 / (M - 1)`.
pub fn centered_perturbations(block: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let m = block.ncols();
    if m < 2 {
        return Err(Error::Config("perturbation block needs >= 2 members".into()));
    }
    let mut mean = DVector::zeros(block.nrows());
    for c in block.column_iter() {
        mean += c;
    }
    mean /= m as f64;
    let mut centered = block.clone();
    let mut stat = 0.0;
    for mut c in centered.column_iter_mut() {
        c -= &mean;
        stat += c.norm_squared();
    }
    Ok((centered, stat / (m - 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn small_grid() -> GridSpec {
        GridSpec::new(1.0, 4, 3).unwrap() // N_fine = 32
    }

    fn make(seed: u64) -> NoiseLattice {
        NoiseLattice::generate(seed, 1, 1, small_grid(), 2, DEFAULT_MEMORY_CAP).unwrap()
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = make(42);
        let b = make(42);
        assert_eq!(a.dw_ref, b.dw_ref);
        assert_eq!(a.dv_obs, b.dv_obs);
        assert_eq!(a.dw_ens, b.dw_ens);
        assert_eq!(a.dv_ens, b.dv_ens);
    }

    #[test]
    fn neighbouring_seeds_decorrelated() {
        let grid = GridSpec::new(1.0, 16, 6).unwrap(); // N_fine = 1024
        let a = NoiseLattice::generate(7, 1, 1, grid, 2, DEFAULT_MEMORY_CAP).unwrap();
        let b = NoiseLattice::generate(8, 1, 1, grid, 2, DEFAULT_MEMORY_CAP).unwrap();
        let n = grid.n_fine() as f64;
        let h = grid.h_fine();
        // sample correlation oracle
        let dot: f64 = a.dw_ref.iter().zip(b.dw_ref.iter()).map(|(x, y)| x * y).sum();
        let rho = dot / (n * h);
        assert!(rho.abs() < 5.0 / n.sqrt(), "rho = {rho}");
    }

    #[test]
    fn stream_variance_matches_h_fine() {
        let grid = GridSpec::new(1.0, 16, 6).unwrap();
        let a = NoiseLattice::generate(3, 1, 1, grid, 2, DEFAULT_MEMORY_CAP).unwrap();
        let n = grid.n_fine() as f64;
        let h = grid.h_fine();
        let mean: f64 = a.dw_ref.iter().sum::<f64>() / n;
        let var: f64 = a.dw_ref.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        // sample-moment oracle: Var(sample variance) ~ 2 h^2 / n for Gaussians
        let sigma_mean = (h / n).sqrt();
        let sigma_var = h * (2.0 / n).sqrt();
        assert!(mean.abs() < 5.0 * sigma_mean, "mean = {mean}");
        assert!((var - h).abs() < 5.0 * sigma_var, "var = {var}, h = {h}");
    }

    #[test]
    fn coarsen_identity_and_sums() {
        let lat = make(11);
        let c0 = lat.coarsen(0).unwrap();
        assert_eq!(c0.dw_ref, lat.dw_ref);

        let c1 = lat.coarsen(1).unwrap();
        assert_eq!(c1.dw_ref.ncols(), lat.dw_ref.ncols() / 2);
        for k in 0..c1.dw_ref.ncols() {
            assert_relative_eq!(
                c1.dw_ref[(0, k)],
                lat.dw_ref[(0, 2 * k)] + lat.dw_ref[(0, 2 * k + 1)],
            );
        }
        assert!(lat.coarsen(4).is_err());
    }

    #[test]
    fn coarsen_hand_values() {
        let fine = dmatrix![0.1, 0.2, -0.05, 0.15];
        let j1 = sum_columns(&fine, 1);
        assert_relative_eq!(j1[(0, 0)], 0.3, max_relative = 1e-12);
        assert_relative_eq!(j1[(0, 1)], 0.1, max_relative = 1e-12);
        let j2 = sum_columns(&fine, 2);
        assert_relative_eq!(j2[(0, 0)], 0.4, max_relative = 1e-12);
    }

    #[test]
    fn coupling_partial_sums_line_up() {
        let lat = make(13);
        let coarse = lat.coarsen(2).unwrap();
        let factor = 4;
        let mut fine_sum = 0.0;
        let mut coarse_sum = 0.0;
        for k in 0..coarse.dw_ens[1].ncols() {
            for j in 0..factor {
                fine_sum += lat.dw_ens[1][(0, k * factor + j)];
            }
            coarse_sum += coarse.dw_ens[1][(0, k)];
            assert_relative_eq!(fine_sum, coarse_sum, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn memory_cap_enforced() {
        let grid = GridSpec::new(1.0, 1024, 10, ).unwrap();
        let r = NoiseLattice::generate(1, 4, 4, grid, 64, 1 << 20);
        match r {
            Err(Error::Resource { required, cap }) => {
                assert!(required > cap);
            }
            other => panic!("expected resource error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn centered_block_examples() {
        let (c, w) = centered_perturbations(&dmatrix![0.7, -0.7]).unwrap();
        assert_relative_eq!(c[(0, 0)], 0.7);
        assert_relative_eq!(c[(0, 1)], -0.7);
        assert_relative_eq!(w, 2.0 * 0.49, max_relative = 1e-12);

        let (c, w) = centered_perturbations(&DMatrix::from_element(3, 4, 1.25)).unwrap();
        assert_eq!(c, DMatrix::zeros(3, 4));
        assert_relative_eq!(w, 0.0);
    }

    #[test]
    fn centered_member_variance() {
        // Var(w^(i) - wbar) = ((M-1)/M) h per component
        let grid = GridSpec::new(1.0, 16, 6).unwrap();
        let m = 4;
        let lat = NoiseLattice::generate(21, 1, 1, grid, m, DEFAULT_MEMORY_CAP).unwrap();
        let h = grid.h_fine();
        let n = grid.n_fine();
        let mut sum_sq = 0.0;
        for k in 0..n {
            let block = DMatrix::from_fn(1, m, |_, i| lat.dw_ens[i][(0, k)]);
            let (c, _) = centered_perturbations(&block).unwrap();
            sum_sq += c[(0, 0)] * c[(0, 0)];
        }
        let var = sum_sq / n as f64;
        let expected = (m as f64 - 1.0) / m as f64 * h;
        let sigma = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 5.0 * sigma, "var = {var}, expected = {expected}");
    }

    #[test]
    fn dump_roundtrip() {
        let lat = make(99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lattice.bin");
        lat.dump(&path).unwrap();
        let back = NoiseLattice::load(&path).unwrap();
        assert_eq!(back.seed, lat.seed);
        assert_eq!(back.dw_ref, lat.dw_ref);
        assert_eq!(back.dv_ens, lat.dv_ens);
    }
}
