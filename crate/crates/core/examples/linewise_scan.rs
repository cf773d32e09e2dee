//! Linewise acquisition driven by the exact-RD oracle, with the run written
//! to disk and evaluated again from the files.

use dynsamp::acquisition::{run_acquisition, AcquisitionConfig, ErdSource, ScanMode};
use dynsamp::experiment::{evaluate_run_dir, write_run};
use dynsamp::grid::GridSpec;
use dynsamp::phantom::generate_phantom;
use dynsamp::rd::RdSource;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "linewise_run".into());
    let grid = GridSpec::unit(24, 32)?;
    let truth = generate_phantom(11, grid, 2)?;
    let rd = RdSource::Exact { channels: vec![0, 1] };
    let cfg = AcquisitionConfig {
        mode: ScanMode::Linewise { line_fraction: 25.0 },
        ..AcquisitionConfig::linewise(0)
    };
    let run = run_acquisition(&truth, &ErdSource::Oracle(rd.clone()), &cfg)?;
    for s in &run.steps {
        let rows: std::collections::BTreeSet<usize> = s.selected.iter().map(|c| c.row).collect();
        println!("step {:>2}: rows {rows:?}, {:.1}% measured, {:.2} dB", s.step, s.percent_fov, s.mean_psnr);
    }
    println!("stop: {:?}", run.stop);

    write_run(&out, &run, &truth, Some(rd))?;
    let metrics = evaluate_run_dir(&out, &truth)?;
    println!("re-evaluated PSNR AUC {:.3} (in memory {:.3})", metrics.psnr_auc, run.mz_psnr_auc());
    Ok(())
}
