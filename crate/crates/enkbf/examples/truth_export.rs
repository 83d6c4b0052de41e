//! Simulate the reference signal and its observation increments, export the
//! path as CSV. Pass an output directory to write files, otherwise a short
//! preview is printed.

use enkbf::harness::default_model;
use enkbf::grid::GridSpec;
use enkbf::noise::{NoiseLattice, DEFAULT_MEMORY_CAP};
use enkbf::report::{fmt_f64, CsvTable};
use enkbf::truth::{observation_increments, path_to_csv, simulate_signal};
use nalgebra::dvector;

fn main() -> enkbf::Result<()> {
    let model = default_model();
    let grid = GridSpec::new(1.0, 16, 4)?;
    let lattice = NoiseLattice::generate(1, 2, 2, grid, 2, DEFAULT_MEMORY_CAP)?;
    let path = simulate_signal(&model, &lattice, &dvector![0.5, -0.3])?;
    let obs = observation_increments(&model, &path, &lattice)?;

    let truth_csv = path_to_csv(&path, grid.h_fine());
    let fine = obs.at_level(0)?;
    let mut table = CsvTable::new(&["step", "dy_1", "dy_2"]);
    table.comment("seed", lattice.seed);
    table.comment("h", fmt_f64(grid.h_fine()));
    for k in 0..fine.ncols() {
        table.push_row(vec![
            (k + 1).to_string(),
            fmt_f64(fine[(0, k)]),
            fmt_f64(fine[(1, k)]),
        ]);
    }

    match std::env::args().nth(1) {
        Some(dir) => {
            let dir = std::path::PathBuf::from(dir);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("truth.csv"), truth_csv)?;
            std::fs::write(dir.join("observations.csv"), table.render())?;
            println!("wrote truth.csv and observations.csv to {}", dir.display());
        }
        None => {
            for line in truth_csv.lines().take(6) {
                println!("{line}");
            }
            println!("... ({} fine nodes; pass an output directory to export)", grid.n_fine() + 1);
        }
    }
    Ok(())
}
