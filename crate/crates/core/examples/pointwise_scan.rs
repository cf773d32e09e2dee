//! Pointwise dynamic sampling with an LS model against random sampling.

use dynsamp::acquisition::{run_acquisition, AcquisitionConfig, ErdSource};
use dynsamp::experiment::{generate_training_corpus, random_baseline_aucs, train_ls, training_rows};
use dynsamp::grid::GridSpec;
use dynsamp::phantom::generate_phantom;
use dynsamp::rd::{RdParams, RdSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::unit(48, 48)?;
    let train = (0..3).map(|s| generate_phantom(s, grid, 2)).collect::<Result<Vec<_>, _>>()?;
    let rd = RdSource::Approx(RdParams::multichannel(2));
    let corpus = generate_training_corpus(&train, &(1..=30).collect::<Vec<_>>(), 0, &rd)?;
    let model = train_ls(&training_rows(&corpus, &[0, 1])?, vec![0, 1], Some(rd))?;

    let truth = generate_phantom(99, grid, 2)?;
    let cfg = AcquisitionConfig::pointwise(5);
    let run = run_acquisition(&truth, &ErdSource::Model(model), &cfg)?;
    for (percent, step) in run.milestones().into_iter().filter(|(p, _)| p % 5 == 0) {
        println!("{percent:>3}%: mean PSNR {:.2} dB", run.steps[step].mean_psnr);
    }
    let random = random_baseline_aucs(&truth, cfg.stop_fov as usize, 5, 5)?;
    let mean = random.iter().sum::<f64>() / random.len() as f64;
    println!("stop: {:?}", run.stop);
    println!("PSNR AUC: dynamic {:.2}, random {mean:.2}", run.mz_psnr_auc());
    Ok(())
}
