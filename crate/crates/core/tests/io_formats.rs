//! On-disk formats as an outside reader sees them.

use std::fs;

use serde_json::Value;
use tempfile::TempDir;

use dynsamp::experiment::{export_corpus, generate_training_corpus, import_corpus};
use dynsamp::grid::{Cell, GridSpec, MeasurementMask};
use dynsamp::ingest::{load_sample, save_sample};
use dynsamp::io::{read_pgm, write_pgm, write_rd_map};
use dynsamp::phantom::{generate_phantom, phantom_meta};
use dynsamp::rd::{RdParams, RdSource};

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

#[test]
fn corpus_export_is_readable_without_the_crate() {
    let tmp = TempDir::new().unwrap();
    let grid = GridSpec::new(10, 12, 20.0, 25.0).unwrap();
    let samples: Vec<_> = (0..2).map(|s| generate_phantom(s, grid, 2).unwrap()).collect();
    let rd = RdSource::Approx(RdParams::multichannel(2));
    let corpus = generate_training_corpus(&samples, &[5, 20], 9, &rd).unwrap();
    export_corpus(&corpus, tmp.path()).unwrap();

    let manifest: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["format"], "dynsamp-corpus");
    assert_eq!(manifest["version"], 1);
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for (e, orig) in entries.iter().zip(&corpus.entries) {
        let rows = e["grid"]["rows"].as_u64().unwrap() as usize;
        let cols = e["grid"]["cols"].as_u64().unwrap() as usize;
        assert_eq!((rows, cols), (10, 12));

        let pgm = fs::read(tmp.path().join(e["mask"].as_str().unwrap())).unwrap();
        let header = format!("P5\n{cols} {rows}\n255\n");
        assert!(pgm.starts_with(header.as_bytes()));
        let measured = pgm[header.len()..].iter().filter(|b| **b == 255).count();
        assert_eq!(measured, orig.mask.count());

        for (z, name) in e["rd"].as_array().unwrap().iter().enumerate() {
            let plane = f32s(&fs::read(tmp.path().join(name.as_str().unwrap())).unwrap());
            assert_eq!(plane.len(), rows * cols);
            for (a, b) in plane.iter().zip(orig.rd.plane(z).iter()) {
                assert_eq!(*a, *b as f32);
            }
        }
    }

    let back = import_corpus(tmp.path()).unwrap();
    assert_eq!(back.entries.len(), corpus.entries.len());
    assert_eq!(back.rd, corpus.rd);
    assert_eq!(back.entries[3].mask, corpus.entries[3].mask);
}

#[test]
fn sample_directory_round_trips() {
    let tmp = TempDir::new().unwrap();
    let grid = GridSpec::new(7, 9, 30.0, 40.0).unwrap();
    let stack = generate_phantom(4, grid, 3).unwrap();
    let meta = phantom_meta("p", &stack);
    save_sample(tmp.path().join("p"), &meta, &stack).unwrap();
    let (meta2, stack2) = load_sample(tmp.path().join("p")).unwrap();
    assert_eq!(meta2, meta);
    assert_eq!(stack2.grid(), stack.grid());
    for z in 0..3 {
        for (a, b) in stack2.channel(z).iter().zip(stack.channel(z).iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}

#[test]
fn pgm_masks_round_trip_and_reject_wrong_sizes() {
    let tmp = TempDir::new().unwrap();
    let grid = GridSpec::unit(5, 6).unwrap();
    let mask = MeasurementMask::from_cells(grid, [Cell::new(0, 0), Cell::new(4, 5), Cell::new(2, 3)]).unwrap();
    let path = tmp.path().join("m.pgm");
    write_pgm(&path, &mask).unwrap();
    assert_eq!(read_pgm(&path, grid).unwrap(), mask);
    assert!(read_pgm(&path, GridSpec::unit(6, 5).unwrap()).is_err());
}

#[test]
fn rd_sidecar_lists_its_planes() {
    let tmp = TempDir::new().unwrap();
    let grid = GridSpec::unit(8, 8).unwrap();
    let truth = generate_phantom(1, grid, 2).unwrap();
    let mask = MeasurementMask::from_cells(grid, [Cell::new(1, 1), Cell::new(6, 5)]).unwrap();
    let rd = RdSource::Exact { channels: vec![1] };
    let map = rd.compute(&truth, &mask).unwrap();
    write_rd_map(tmp.path(), "rd", &map, &rd).unwrap();
    let side: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("rd.json")).unwrap()).unwrap();
    assert_eq!(side["channels"], serde_json::json!([1]));
    assert_eq!(side["files"], serde_json::json!(["rd_z1.f32"]));
    assert_eq!(side["params"]["kind"], "exact");
    let mean = f32s(&fs::read(tmp.path().join("rd_mean.f32")).unwrap());
    assert_eq!(mean.len(), 64);
}
