//! IDW reconstruction from a sparse random mask, and its PSNR as more of
//! the grid is measured.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dynsamp::grid::{apply_mask, GridSpec, MeasurementMask};
use dynsamp::metrics::psnr;
use dynsamp::phantom::generate_phantom;
use dynsamp::reconstruct::reconstruct;

fn main() -> dynsamp::error::Result<()> {
    let grid = GridSpec::unit(64, 64)?;
    let truth = generate_phantom(7, grid, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for percent in [1, 5, 10, 20, 40] {
        let count = grid.len() * percent / 100;
        let cells = sample(&mut rng, grid.len(), count).into_iter().map(|u| grid.cell(u));
        let mask = MeasurementMask::from_cells(grid, cells)?;
        let recon = reconstruct(&apply_mask(&truth, &mask)?, 10)?;
        println!("{percent:>3}% measured: PSNR {:.2} dB", psnr(truth.channel(0), recon.plane(0))?);
    }
    Ok(())
}
