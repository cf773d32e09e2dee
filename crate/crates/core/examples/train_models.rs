//! Builds an RD training corpus from phantoms, fits the LS and MLP ERD
//! models and saves them as JSON.

use dynsamp::experiment::{generate_training_corpus, train_ls, train_mlp, training_rows};
use dynsamp::grid::GridSpec;
use dynsamp::models::{ErdModel, MlpConfig};
use dynsamp::phantom::generate_phantom;
use dynsamp::rd::{RdParams, RdSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "models".into()));
    std::fs::create_dir_all(&out)?;
    let grid = GridSpec::unit(32, 32)?;
    let samples = (0..3).map(|s| generate_phantom(s, grid, 2)).collect::<Result<Vec<_>, _>>()?;
    let rd = RdSource::Approx(RdParams::multichannel(2));
    let densities: Vec<usize> = (1..=30).step_by(3).collect();
    let corpus = generate_training_corpus(&samples, &densities, 0, &rd)?;
    let set = training_rows(&corpus, &[0, 1])?;
    println!("{} corpus entries, {} training rows", corpus.entries.len(), set.len());

    let ls = train_ls(&set, vec![0, 1], Some(rd.clone()))?;
    ls.save_json(out.join("ls.json"))?;
    let cfg = MlpConfig {
        epochs: 20,
        ..MlpConfig::default()
    };
    let mlp = train_mlp(&set.subsample(5000, 1), vec![0, 1], Some(rd), &cfg)?;
    mlp.save_json(out.join("mlp.json"))?;

    let back = ErdModel::load_json(out.join("mlp.json"))?;
    assert_eq!(back, mlp);
    println!("saved {} and {} models to {}", ls.family(), mlp.family(), out.display());
    Ok(())
}
