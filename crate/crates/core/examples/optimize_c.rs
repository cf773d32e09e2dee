//! Scores a small grid of Gaussian widths and window modes by the PSNR AUC
//! of RD-driven scans and prints the table.

use dynsamp::acquisition::AcquisitionConfig;
use dynsamp::experiment::optimize_c;
use dynsamp::grid::GridSpec;
use dynsamp::phantom::generate_phantom;
use dynsamp::rd::WindowMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::unit(24, 24)?;
    let samples = (0..3).map(|s| generate_phantom(40 + s, grid, 2)).collect::<Result<Vec<_>, _>>()?;
    let windows = [WindowMode::Static { side: 15 }, WindowMode::Dynamic { multiple: 3.0 }];
    let cfg = AcquisitionConfig {
        stop_fov: 20.0,
        ..AcquisitionConfig::pointwise(0)
    };
    let table = optimize_c(&samples, &[1.0, 2.0, 4.0, 8.0, 16.0], &windows, &[0, 1], &cfg)?;
    print!("{}", table.to_csv());
    let best = table.best();
    println!("best: c={} {} (AUC {:.3})", best.c, best.window, best.auc);
    Ok(())
}
