//! Assembles a sample from irregularly timed row acquisitions: each row is
//! linearly realigned onto the column grid implied by the FOV width, scan
//! rate and acquisition rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dynsamp::ingest::{assemble_rows, target_columns, ChannelSpec, RawRow, SampleMeta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = SampleMeta {
        name: "rows".into(),
        width_mm: 2.0,
        height_mm: 1.0,
        scan_rate_um_per_s: 100.0,
        acq_rate_spectra_per_s: 1.5,
        rows: 6,
        cols: 0,
        channels: vec![
            ChannelSpec { label: 760.5851, ppm: 25.0 },
            ChannelSpec { label: 782.5670, ppm: 25.0 },
        ],
        defective_rows: vec![],
    };
    let cols = target_columns(&meta);
    let meta = SampleMeta { cols, ..meta };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<RawRow> = (0..meta.rows)
        .map(|r| {
            let n = 25 + r;
            let mut t = 0.0f64;
            let mut times = Vec::new();
            let mut values = Vec::new();
            for _ in 0..n {
                t += rng.random_range(0.5..1.0);
                times.push(t);
                values.push(vec![(t * 0.3).sin().abs() + r as f64, rng.random::<f64>()]);
            }
            RawRow::new(times, values)
        })
        .collect::<Result<_, _>>()?;
    let stack = assemble_rows(&meta, &rows)?;
    println!("{} rows realigned to {} columns, {} channels", stack.grid().rows(), stack.grid().cols(), stack.depth());
    for r in 0..stack.grid().rows() {
        let row: Vec<String> = stack.channel(0).row(r).iter().take(8).map(|v| format!("{v:.2}")).collect();
        println!("row {r}: {} ...", row.join(" "));
    }
    Ok(())
}
