//! Exact and Gaussian-approximated reduction in distortion on one mask,
//! written out as `.f32` planes next to a PGM of the mask.

use dynsamp::grid::{apply_mask, Cell, GridSpec, MeasurementMask};
use dynsamp::io::{write_pgm, write_plane};
use dynsamp::phantom::generate_phantom;
use dynsamp::rd::{approx_rd, exact_rd, RdParams, WindowMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "rd_maps".into()));
    std::fs::create_dir_all(&out)?;
    let grid = GridSpec::unit(32, 32)?;
    let truth = generate_phantom(3, grid, 2)?;
    let cells = (0..32).step_by(5).flat_map(|r| (0..32).step_by(5).map(move |c| Cell::new(r, c)));
    let mask = MeasurementMask::from_cells(grid, cells)?;
    let measured = apply_mask(&truth, &mask)?;

    let exact = exact_rd(&truth, &measured)?;
    let mut params = RdParams::multichannel(2);
    let approx_dyn = approx_rd(&truth, &measured, &params)?;
    params.window = WindowMode::Static { side: 15 };
    let approx_static = approx_rd(&truth, &measured, &params)?;

    write_pgm(out.join("mask.pgm"), &mask)?;
    for (name, map) in [("exact", &exact), ("approx_dyn", &approx_dyn), ("approx_static", &approx_static)] {
        write_plane(out.join(format!("{name}_mean.f32")), map.mean())?;
        let (best, value) = map
            .mean()
            .indexed_iter()
            .fold(((0, 0), f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        println!("{name:>13}: largest mean RD {value:.4} at {best:?}");
    }
    Ok(())
}
