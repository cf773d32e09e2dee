//! Dynamic sparse sampling for multichannel images.
//!
//! A scan starts from a small measured mask. Each step reconstructs every
//! channel by inverse distance weighting, estimates the reduction in
//! distortion (ERD) each unmeasured cell would bring, and measures the best
//! cells next. ERD comes from a learned regressor ([`models`]) trained on
//! ground-truth RD maps ([`rd`]), or from the RD itself as an oracle.
//!
//! Runnable examples live in `examples/`:
//!
//! | example | shows |
//! |---|---|
//! | `phantom_suite` | seeded synthetic samples written as sample directories |
//! | `ingest_rows` | realigning irregularly timed rows onto a grid |
//! | `reconstruct_idw` | IDW reconstruction quality against density |
//! | `rd_maps` | exact and approximate RD on one mask |
//! | `train_models` | corpus generation, LS and MLP training, JSON models |
//! | `pointwise_scan` | model-driven pointwise scan against random sampling |
//! | `linewise_scan` | oracle linewise scan, run directory, re-evaluation |
//! | `optimize_c` | the Gaussian width and window search |
//! | `unet_inference` | U-Net weight files, fixtures and ERD maps |

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod features;
pub mod grid;
pub mod ingest;
pub mod io;
pub mod metrics;
pub mod models;
pub mod neighbors;
pub mod phantom;
pub mod rd;
pub mod reconstruct;
