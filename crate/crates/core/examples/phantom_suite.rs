//! Generates a few seeded phantoms and writes them as sample directories.
//!
//! ```text
//! cargo run --release --example phantom_suite -- /tmp/phantoms
//! ```

use dynsamp::grid::GridSpec;
use dynsamp::ingest::{load_sample, save_sample};
use dynsamp::phantom::{generate_phantom, phantom_meta};

fn main() -> dynsamp::error::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "phantoms".into());
    let grid = GridSpec::new(48, 64, 50.0, 50.0)?;
    for seed in 0..3u64 {
        let stack = generate_phantom(seed, grid, 4)?;
        let name = format!("phantom_{seed:04}");
        let dir = std::path::Path::new(&out).join(&name);
        save_sample(&dir, &phantom_meta(&name, &stack), &stack)?;
        let (meta, back) = load_sample(&dir)?;
        let peak = back.channel(0).iter().cloned().fold(f64::MIN, f64::max);
        println!(
            "{name}: {}x{} px, {:.2}x{:.2} mm, labels {:?}, channel 0 peak {peak:.3}",
            meta.rows,
            meta.cols,
            meta.width_mm,
            meta.height_mm,
            back.labels()
        );
    }
    Ok(())
}
