//! Runs the checked-in tiny U-Net on its fixtures, then saves a randomly
//! initialised standard-size network and computes an ERD map with it.

use std::path::Path;

use dynsamp::grid::{apply_mask, Cell, GridSpec, MeasurementMask};
use dynsamp::models::unet::load_fixtures;
use dynsamp::models::{erd_for, Architecture, ErdModel, Regressor, UNetModel};
use dynsamp::phantom::generate_phantom;
use dynsamp::reconstruct::reconstruct;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let bundle = load_fixtures(&fixtures)?;
    let tiny = UNetModel::load(&bundle.weights)?;
    for f in &bundle.fixtures {
        let out = tiny.infer(&f.input)?;
        let dev = out.iter().zip(&f.output).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        println!("{}: {:?}, max deviation {dev:.2e}", f.name, out.dim());
    }

    let path = std::env::temp_dir().join("dynsamp_unet_example.bin");
    UNetModel::random(Architecture::standard(), 1)?.save(&path)?;
    let net = UNetModel::load(&path)?;
    let grid = GridSpec::unit(40, 40)?;
    let truth = generate_phantom(2, grid, 2)?;
    let cells = (0..40).step_by(4).flat_map(|r| (0..40).step_by(4).map(move |c| Cell::new(r, c)));
    let measured = apply_mask(&truth, &MeasurementMask::from_cells(grid, cells)?)?;
    let recon = reconstruct(&measured, 10)?;
    let model = ErdModel::new(Regressor::Unet(net), vec![0, 1], None)?;
    let erd = erd_for(&model, &recon, &measured, &[0, 1])?;
    let peak = erd.mean().iter().cloned().fold(f64::MIN, f64::max);
    println!("standard U-Net ERD on 40x40: peak mean ERD {peak:.4}");
    Ok(())
}
