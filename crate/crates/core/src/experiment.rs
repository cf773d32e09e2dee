//! Experiment orchestration: training corpora, model training, random
//! baselines, the c/window search, run directories and evaluation.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{ceil_percent, run_acquisition, AcquisitionConfig, AcquisitionRun, ErdSource, StopReason};
use crate::error::{Error, Result};
use crate::features::{feature_row, Features};
use crate::grid::{apply_mask, ChannelStack, GridSpec, MeasurementMask};
use crate::ingest::{load_sample, sample_dirs};
use crate::io::{read_pgm, read_plane, write_pgm, write_plane};
use crate::metrics::{erd_psnr, milestone_steps, psnr_slice, trapezoid_auc, PSNR_CAP};
use crate::models::unet::fnv1a64;
use crate::models::{fit_ls, fit_mlp, ErdModel, MlpConfig, Regressor};
use crate::neighbors::NeighborIndex;
use crate::rd::{RdMap, RdParams, RdSource, WindowMode};
use crate::reconstruct::{reconstruct, IdwParams, ScanState};

/// Densities (percent of the FOV) used for training corpora.
pub fn default_densities() -> Vec<usize> {
    (1..=30).collect()
}

/// Train / validation / test index ranges in a 6:2:2 ratio.
pub fn split_622(n: usize) -> (Range<usize>, Range<usize>, Range<usize>) {
    let train = (n * 6 + 5) / 10;
    let val = ((n * 2 + 5) / 10).min(n - train);
    (0..train, train..train + val, train + val..n)
}

/// Every sample under `root`, in path order.
pub fn load_samples(root: impl AsRef<Path>) -> Result<Vec<(PathBuf, ChannelStack)>> {
    let dirs = sample_dirs(root.as_ref())?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no samples found under {}", root.as_ref().display())));
    }
    dirs.into_iter()
        .map(|d| load_sample(&d).map(|(_, s)| (d, s)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub sample: usize,
    pub density: usize,
    pub mask: MeasurementMask,
    /// IDW reconstruction of every channel under `mask`.
    pub recon: ChannelStack,
    pub rd: RdMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingCorpus {
    pub densities: Vec<usize>,
    pub seed: u64,
    pub rd: RdSource,
    pub entries: Vec<CorpusEntry>,
}

impl TrainingCorpus {
    /// FNV-1a over masks, reconstructions and RD planes.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for e in &self.entries {
            bytes.extend((e.sample as u64).to_le_bytes());
            bytes.extend((e.density as u64).to_le_bytes());
            bytes.extend(e.mask.as_array().iter().map(|m| *m as u8));
            for plane in e.recon.channels().iter().chain(e.rd.planes()) {
                bytes.extend(plane.iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        fnv1a64(&bytes)
    }
}

/// Random mask with `⌈density·|Ω|/100⌉` cells. Each (sample, density) pair
/// draws from its own stream of the seeded generator.
pub fn random_mask(grid: GridSpec, density: f64, seed: u64, stream: u64) -> Result<MeasurementMask> {
    if !(density > 0.0 && density <= 100.0) {
        return Err(Error::invalid(format!("density must be in (0, 100], got {density}")));
    }
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let count = ceil_percent(density, n).clamp(1, n);
    MeasurementMask::from_cells(grid, sample(&mut rng, n, count).into_iter().map(|u| grid.cell(u)))
}

/// Random masks at each density for each sample, with their
/// reconstructions and ground-truth RD.
pub fn generate_training_corpus(
    samples: &[ChannelStack],
    densities: &[usize],
    seed: u64,
    rd: &RdSource,
) -> Result<TrainingCorpus> {
    if samples.is_empty() || densities.is_empty() {
        return Err(Error::invalid("corpus needs samples and densities"));
    }
    for s in samples {
        crate::rd::check_channels(rd.channels(), s.depth())?;
    }
    let jobs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|s| densities.iter().map(move |&d| (s, d)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(s, d)| {
            let truth = &samples[s];
            let stream = ((s as u64) << 32) | d as u64;
            let mask = random_mask(*truth.grid(), d as f64, seed, stream)?;
            let state = ScanState::new(&apply_mask(truth, &mask)?, IdwParams::default())?;
            let rd_map = if mask.unmeasured_count() == 0 {
                rd.compute(truth, &mask)?
            } else {
                rd.compute_state(&state, truth)?
            };
            Ok(CorpusEntry {
                sample: s,
                density: d,
                mask,
                recon: state.reconstruction().into_stack(),
                rd: rd_map,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    info!("corpus: {} entries from {} samples", entries.len(), samples.len());
    Ok(TrainingCorpus {
        densities: densities.to_vec(),
        seed,
        rd: rd.clone(),
        entries,
    })
}

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    format: String,
    version: u32,
    densities: Vec<usize>,
    seed: u64,
    rd: RdSource,
    entries: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    sample: usize,
    density: usize,
    grid: GridSpec,
    labels: Vec<f64>,
    mask: String,
    recon: Vec<String>,
    rd_channels: Vec<usize>,
    rd: Vec<String>,
}

/// Writes `manifest.json`, one PGM mask per entry and `f32` planes for every
/// reconstruction and RD channel.
pub fn export_corpus(corpus: &TrainingCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for e in &corpus.entries {
        let stem = format!("s{:03}_d{:03}", e.sample, e.density);
        let mask = format!("{stem}_mask.pgm");
        write_pgm(dir.join(&mask), &e.mask)?;
        let mut recon = Vec::new();
        for (z, plane) in e.recon.channels().iter().enumerate() {
            let name = format!("{stem}_recon_z{z}.f32");
            write_plane(dir.join(&name), plane)?;
            recon.push(name);
        }
        let mut rd = Vec::new();
        for (z, plane) in e.rd.channels().iter().zip(e.rd.planes()) {
            let name = format!("{stem}_rd_z{z}.f32");
            write_plane(dir.join(&name), plane)?;
            rd.push(name);
        }
        records.push(EntryRecord {
            sample: e.sample,
            density: e.density,
            grid: *e.mask.grid(),
            labels: e.recon.labels().to_vec(),
            mask,
            recon,
            rd_channels: e.rd.channels().to_vec(),
            rd,
        });
    }
    let manifest = CorpusManifest {
        format: "dynsamp-corpus".into(),
        version: 1,
        densities: corpus.densities.clone(),
        seed: corpus.seed,
        rd: corpus.rd.clone(),
        entries: records,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Reads a corpus written by [`export_corpus`]. Planes come back at `f32`
/// precision.
pub fn import_corpus(dir: impl AsRef<Path>) -> Result<TrainingCorpus> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CorpusManifest = serde_json::from_str(&text)?;
    if m.format != "dynsamp-corpus" || m.version != 1 {
        return Err(Error::ModelFormat(format!("{}: not a version 1 corpus", path.display())));
    }
    let entries = m
        .entries
        .into_iter()
        .map(|r| {
            let (rows, cols) = r.grid.shape();
            let read = |names: &[String]| {
                names
                    .iter()
                    .map(|n| read_plane(dir.join(n), rows, cols))
                    .collect::<Result<Vec<_>>>()
            };
            Ok(CorpusEntry {
                sample: r.sample,
                density: r.density,
                mask: read_pgm(dir.join(&r.mask), r.grid)?,
                recon: ChannelStack::new(r.grid, read(&r.recon)?, r.labels)?,
                rd: RdMap::new(r.rd_channels, read(&r.rd)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingCorpus {
        densities: m.densities,
        seed: m.seed,
        rd: m.rd,
        entries,
    })
}

/// Feature rows and RD targets for the unmeasured cells of every corpus
/// entry and channel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<Features>,
    pub targets: Vec<f64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// A seeded subset of at most `limit` rows, in original order.
    pub fn subsample(&self, limit: usize, seed: u64) -> TrainingSet {
        if self.len() <= limit {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), limit).into_vec();
        idx.sort_unstable();
        TrainingSet {
            features: idx.iter().map(|&i| self.features[i]).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

pub fn training_rows(corpus: &TrainingCorpus, channels: &[usize]) -> Result<TrainingSet> {
    if channels.is_empty() {
        return Err(Error::invalid("no training channels"));
    }
    let parts = corpus
        .entries
        .par_iter()
        .map(|e| {
            let index = NeighborIndex::build(&e.mask, IdwParams::default().neighbors);
            let unmeasured: Vec<usize> = (0..e.mask.grid().len()).filter(|&u| !index.is_measured(u)).collect();
            let mut set = TrainingSet::default();
            for &z in channels {
                crate::rd::check_channels(&[z], e.recon.depth())?;
                let pos = e
                    .rd
                    .channels()
                    .iter()
                    .position(|c| *c == z)
                    .ok_or(Error::ChannelMismatch {
                        requested: vec![z],
                        expected: e.rd.channels().to_vec(),
                    })?;
                let recon = e.recon.channel_slice(z);
                let rd = e.rd.plane(pos).as_slice().expect("standard layout");
                for &u in &unmeasured {
                    set.features.push(feature_row(&index, recon, u, IdwParams::default().power));
                    set.targets.push(rd[u]);
                }
            }
            Ok(set)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = TrainingSet::default();
    for p in parts {
        out.features.extend(p.features);
        out.targets.extend(p.targets);
    }
    Ok(out)
}

pub fn train_ls(set: &TrainingSet, channels: Vec<usize>, rd: Option<RdSource>) -> Result<ErdModel> {
    let fit = fit_ls(&set.features, &set.targets)?;
    info!(
        "LS fit on {} rows: residual {:.4e}{}",
        fit.rows,
        fit.residual,
        if fit.ridge { " (ridge)" } else { "" }
    );
    ErdModel::new(Regressor::Ls(fit.model), channels, rd)
}

pub fn train_mlp(set: &TrainingSet, channels: Vec<usize>, rd: Option<RdSource>, cfg: &MlpConfig) -> Result<ErdModel> {
    let fit = fit_mlp(&set.features, &set.targets, cfg)?;
    info!(
        "MLP fit on {} rows: loss {:.4e} -> {:.4e}",
        set.len(),
        fit.initial_loss,
        fit.final_loss
    );
    ErdModel::new(Regressor::Mlp(fit.model), channels, rd)
}

/// Per-sample acquisition settings: the seed is offset by the sample index.
pub fn sample_config(cfg: &AcquisitionConfig, sample: usize) -> AcquisitionConfig {
    AcquisitionConfig {
        seed: cfg.seed.wrapping_add(sample as u64),
        ..cfg.clone()
    }
}

fn mean_channel_psnr(state: &ScanState, truth: &ChannelStack) -> Result<f64> {
    let mut total = 0.0;
    for z in 0..truth.depth() {
        total += psnr_slice(truth.channel_slice(z), state.recon_plane(z))?.min(PSNR_CAP);
    }
    Ok(total / truth.depth() as f64)
}

/// Avg m/z PSNR AUC of `runs` random orderings of the FOV, each sampled at
/// the same whole-percent milestones `1..=stop_fov` as a pointwise scan.
pub fn random_baseline_aucs(truth: &ChannelStack, stop_fov: usize, runs: usize, seed: u64) -> Result<Vec<f64>> {
    let grid = *truth.grid();
    let n = grid.len();
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut taken = ceil_percent(1.0, n).clamp(1, n);
            let first = MeasurementMask::from_cells(grid, order[..taken].iter().map(|&u| grid.cell(u)))?;
            let mut state = ScanState::new(&apply_mask(truth, &first)?, IdwParams::default())?;
            let mut curve = vec![(1.0, mean_channel_psnr(&state, truth)?)];
            for p in 2..=stop_fov {
                let upto = ceil_percent(p as f64, n).min(n);
                let cells: Vec<_> = order[taken..upto].iter().map(|&u| grid.cell(u)).collect();
                state.reveal(&cells, truth)?;
                taken = upto;
                curve.push((p as f64, mean_channel_psnr(&state, truth)?));
            }
            Ok(trapezoid_auc(&curve))
        })
        .collect()
}

/// Area under the ERD-PSNR curve: at each milestone the stored `Ē` is
/// scored against the mean ground-truth RD for that step's mask.
pub fn erd_psnr_auc(run: &AcquisitionRun, truth: &ChannelStack, rd: &RdSource) -> Result<f64> {
    let mut curve = Vec::new();
    for (p, i) in run.milestones() {
        let step = &run.steps[i];
        let erd = step
            .erd
            .as_ref()
            .ok_or_else(|| Error::Runtime(format!("step {i} has no stored ERD")))?;
        let reference = rd.compute(truth, &step.mask)?;
        curve.push((p as f64, erd_psnr(reference.mean(), erd)?));
    }
    Ok(trapezoid_auc(&curve))
}

/// One cell of the c/window table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub c: f64,
    pub window: WindowMode,
    /// Avg m/z PSNR AUC over the samples.
    pub auc: f64,
    pub mean_rd_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CTable {
    pub rows: Vec<CandidateScore>,
    pub best: usize,
}

impl CTable {
    pub fn best(&self) -> &CandidateScore {
        &self.rows[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("c,window,auc,mean_rd_time_s\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:.6},{:.6}", r.c, r.window, r.auc, r.mean_rd_time_s).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

fn window_key(w: &WindowMode) -> (u8, f64) {
    match *w {
        WindowMode::Static { side } => (0, side as f64),
        WindowMode::Dynamic { multiple } => (1, multiple),
    }
}

/// Runs pointwise scans driven by approximate RD for every `(c, window)`
/// candidate and returns the table with its argmax.
///
/// Candidates are deduplicated and put in ascending order first, so the
/// result does not depend on the order they were given in; ties go to the
/// earlier candidate.
pub fn optimize_c(
    samples: &[ChannelStack],
    c_set: &[f64],
    windows: &[WindowMode],
    channels: &[usize],
    cfg: &AcquisitionConfig,
) -> Result<CTable> {
    if samples.is_empty() || c_set.is_empty() || windows.is_empty() {
        return Err(Error::invalid("optimize_c needs samples, c values and windows"));
    }
    let mut cs = c_set.to_vec();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut ws = windows.to_vec();
    ws.sort_by(|a, b| {
        let (ka, kb) = (window_key(a), window_key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    ws.dedup();
    let mut candidates = Vec::new();
    for &c in &cs {
        for &window in &ws {
            let params = RdParams {
                c,
                window,
                channels: channels.to_vec(),
            };
            params.validate()?;
            candidates.push(params);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..samples.len()).map(move |s| (c, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, s)| {
            let source = ErdSource::Oracle(RdSource::Approx(candidates[c].clone()));
            let run = run_acquisition(&samples[s], &source, &sample_config(cfg, s))?;
            if let StopReason::Failed(e) = &run.stop {
                return Err(Error::Runtime(e.clone()));
            }
            Ok((run.mz_psnr_auc(), run.mean_erd_time_s()))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = samples.len() as f64;
    let rows: Vec<CandidateScore> = candidates
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let chunk = &results[i * samples.len()..(i + 1) * samples.len()];
            CandidateScore {
                c: p.c,
                window: p.window,
                auc: chunk.iter().map(|r| r.0).sum::<f64>() / k,
                mean_rd_time_s: chunk.iter().map(|r| r.1).sum::<f64>() / k,
            }
        })
        .collect();
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.auc > rows[best].auc {
            best = i;
        }
    }
    Ok(CTable { rows, best })
}

/// `config.json` of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub source: String,
    pub acquisition: AcquisitionConfig,
    pub stop: StopReason,
    pub labels: Vec<f64>,
    /// `(percent, step)` pairs.
    pub milestones: Vec<(usize, usize)>,
    /// Ground truth the model targets, used for ERD-PSNR.
    pub rd: Option<RdSource>,
    pub final_percent: f64,
    pub psnr_auc: f64,
}

fn label_tag(label: f64) -> String {
    format!("{label}")
}

/// Writes `trace.csv`, `config.json`, a mask per step, and the
/// reconstruction of every channel plus `Ē` at each milestone step.
pub fn write_run(dir: impl AsRef<Path>, run: &AcquisitionRun, truth: &ChannelStack, rd: Option<RdSource>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels = truth.labels();
    let mut csv = String::from("step,percent_fov");
    for l in labels {
        write!(csv, ",psnr_{}", label_tag(*l)).unwrap();
    }
    csv.push_str(",mean_psnr,erd_time_s,selected\n");
    for s in &run.steps {
        write!(csv, "{},{:.6}", s.step, s.percent_fov).unwrap();
        for p in &s.psnr {
            write!(csv, ",{p:.6}").unwrap();
        }
        let cells: Vec<String> = s.selected.iter().map(|c| format!("{}:{}", c.row, c.col)).collect();
        writeln!(csv, ",{:.6},{:.6},{}", s.mean_psnr, s.erd_time_s, cells.join(" ")).unwrap();
        write_pgm(dir.join(format!("mask_step{:04}.pgm", s.step)), &s.mask)?;
    }
    let path = dir.join("trace.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    let milestones = run.milestones();
    let mut written = Vec::new();
    for &(_, i) in &milestones {
        if written.contains(&i) {
            continue;
        }
        written.push(i);
        let step = &run.steps[i];
        let recon = reconstruct(&apply_mask(truth, &step.mask)?, IdwParams::default().neighbors)?;
        for (z, l) in labels.iter().enumerate() {
            write_plane(dir.join(format!("recon_{}_step{:04}.f32", label_tag(*l), i)), recon.plane(z))?;
        }
        if let Some(erd) = &step.erd {
            write_plane(dir.join(format!("erd_mean_step{i:04}.f32")), erd)?;
        }
    }
    let record = RunRecord {
        source: run.source.clone(),
        acquisition: run.config.clone(),
        stop: run.stop.clone(),
        labels: labels.to_vec(),
        milestones,
        rd,
        final_percent: run.final_step().percent_fov,
        psnr_auc: run.mz_psnr_auc(),
    };
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub run: String,
    pub source: String,
    pub final_percent: f64,
    pub psnr_auc: f64,
    pub erd_psnr_auc: Option<f64>,
}

/// Recomputes the metrics of a run directory from its masks and `truth`.
pub fn evaluate_run_dir(dir: impl AsRef<Path>, truth: &ChannelStack) -> Result<RunMetrics> {
    let dir = dir.as_ref();
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let record: RunRecord = serde_json::from_str(&text)?;
    if record.labels != truth.labels() {
        return Err(Error::GridMismatch(format!(
            "{}: run channels {:?} differ from the truth sample {:?}",
            dir.display(),
            record.labels,
            truth.labels()
        )));
    }
    let grid = *truth.grid();
    let (rows, cols) = grid.shape();
    let mut psnr_curve = Vec::new();
    let mut erd_curve = Vec::new();
    for &(p, i) in &record.milestones {
        let mask = read_pgm(dir.join(format!("mask_step{i:04}.pgm")), grid)?;
        let state = ScanState::new(&apply_mask(truth, &mask)?, IdwParams::default())?;
        psnr_curve.push((p as f64, mean_channel_psnr(&state, truth)?));
        if let Some(rd) = &record.rd {
            let erd = read_plane(dir.join(format!("erd_mean_step{i:04}.f32")), rows, cols)?;
            let reference = rd.compute(truth, &mask)?;
            erd_curve.push((p as f64, erd_psnr(reference.mean(), &erd)?));
        }
    }
    Ok(RunMetrics {
        run: dir.display().to_string(),
        source: record.source,
        final_percent: record.final_percent,
        psnr_auc: trapezoid_auc(&psnr_curve),
        erd_psnr_auc: record.rd.as_ref().map(|_| trapezoid_auc(&erd_curve)),
    })
}

pub fn metrics_csv(metrics: &[RunMetrics]) -> String {
    let mut out = String::from("run,source,final_percent,psnr_auc,erd_psnr_auc\n");
    for m in metrics {
        let erd = m.erd_psnr_auc.map_or(String::new(), |v| format!("{v:.6}"));
        writeln!(out, "{},{},{:.4},{:.6},{erd}", m.run, m.source, m.final_percent, m.psnr_auc).unwrap();
    }
    out
}

/// Milestone curve of avg m/z PSNR from a list of `(percent, psnr)` trace
/// rows, taken at the first row reaching each whole percent.
pub fn milestone_curve(trace: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let pct: Vec<f64> = trace.iter().map(|t| t.0).collect();
    let upto = trace.last().map_or(0, |t| (t.0 + 1e-9).floor() as usize);
    milestone_steps(&pct, upto)
        .into_iter()
        .map(|(p, i)| (p as f64, trace[i].1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LsModel;
    use crate::phantom::generate_phantom;

    fn phantoms(count: u64, rows: usize, cols: usize, depth: usize) -> Vec<ChannelStack> {
        (0..count)
            .map(|s| generate_phantom(s, GridSpec::unit(rows, cols).unwrap(), depth).unwrap())
            .collect()
    }

    #[test]
    fn split_is_six_two_two() {
        assert_eq!(split_622(10), (0..6, 6..8, 8..10));
        assert_eq!(split_622(5), (0..3, 3..4, 4..5));
    }

    #[test]
    fn corpus_cardinality_and_density() {
        let samples = phantoms(2, 10, 10, 2);
        let rd = RdSource::Approx(RdParams::multichannel(2));
        let corpus = generate_training_corpus(&samples, &default_densities(), 7, &rd).unwrap();
        assert_eq!(corpus.entries.len(), 60);
        let e = corpus.entries.iter().find(|e| e.density == 30).unwrap();
        assert_eq!(e.mask.count(), 30);
        let again = generate_training_corpus(&samples, &default_densities(), 7, &rd).unwrap();
        assert_eq!(corpus.checksum(), again.checksum());
        let other = generate_training_corpus(&samples, &default_densities(), 8, &rd).unwrap();
        assert_ne!(corpus.checksum(), other.checksum());
    }

    #[test]
    fn corpus_export_round_trip() {
        let samples = phantoms(1, 8, 9, 2);
        let rd = RdSource::Approx(RdParams::multichannel(2));
        let corpus = generate_training_corpus(&samples, &[3, 20], 1, &rd).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_corpus(&corpus, dir.path()).unwrap();
        let back = import_corpus(dir.path()).unwrap();
        assert_eq!(back.entries.len(), 2);
        for (a, b) in corpus.entries.iter().zip(&back.entries) {
            assert_eq!(a.mask, b.mask);
            for (pa, pb) in a.rd.planes().iter().zip(b.rd.planes()) {
                assert!(pa.iter().zip(pb).all(|(x, y)| (*x as f32) as f64 == *y));
            }
        }
    }

    #[test]
    fn training_rows_cover_unmeasured_cells() {
        let samples = phantoms(1, 8, 8, 2);
        let rd = RdSource::Approx(RdParams::multichannel(2));
        let corpus = generate_training_corpus(&samples, &[10, 20], 0, &rd).unwrap();
        let set = training_rows(&corpus, &[0, 1]).unwrap();
        let expected: usize = corpus.entries.iter().map(|e| 2 * e.mask.unmeasured_count()).sum();
        assert_eq!(set.len(), expected);
        assert_eq!(set.subsample(10, 1).len(), 10);
        assert!(training_rows(&corpus, &[2]).unwrap_err().is_validation());
    }

    #[test]
    fn singleton_candidate_set_returns_it() {
        let samples = phantoms(1, 12, 12, 2);
        let t = optimize_c(
            &samples,
            &[4.0],
            &[WindowMode::Dynamic { multiple: 3.0 }],
            &[0, 1],
            &AcquisitionConfig { stop_fov: 10.0, ..AcquisitionConfig::pointwise(0) },
        )
        .unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.best().c, 4.0);
    }

    #[test]
    fn optimize_c_ignores_candidate_order() {
        let samples = phantoms(2, 10, 10, 2);
        let cfg = AcquisitionConfig { stop_fov: 15.0, ..AcquisitionConfig::pointwise(3) };
        let w = [WindowMode::Static { side: 5 }, WindowMode::Dynamic { multiple: 3.0 }];
        let a = optimize_c(&samples, &[1.0, 8.0, 2.0], &w, &[0, 1], &cfg).unwrap();
        let b = optimize_c(&samples, &[8.0, 2.0, 1.0, 2.0], &[w[1], w[0]], &[0, 1], &cfg).unwrap();
        assert_eq!(a.best().c, b.best().c);
        assert_eq!(a.best().window, b.best().window);
        assert_eq!(
            a.rows.iter().map(|r| r.auc).collect::<Vec<_>>(),
            b.rows.iter().map(|r| r.auc).collect::<Vec<_>>()
        );
    }

    #[test]
    fn oracle_scores_the_cap_and_zero_model_scores_less() {
        let truth = &phantoms(1, 12, 12, 2)[0];
        let rd = RdSource::Approx(RdParams::multichannel(2));
        let cfg = AcquisitionConfig { stop_fov: 8.0, ..AcquisitionConfig::pointwise(1) };
        let oracle = run_acquisition(truth, &ErdSource::Oracle(rd.clone()), &cfg).unwrap();
        let auc = erd_psnr_auc(&oracle, truth, &rd).unwrap();
        assert!((auc - PSNR_CAP * 7.0).abs() < 1e-9);

        let mut zero = ErdModel::new(Regressor::Ls(LsModel::zeros()), vec![0, 1], None).unwrap();
        zero.rd = Some(rd.clone());
        let run = run_acquisition(truth, &ErdSource::Model(zero), &cfg).unwrap();
        // An all-zero model stops at once, so ERD-PSNR is scored on the first milestone only.
        let z = erd_psnr_auc(&run, truth, &rd).unwrap();
        assert!(z.is_finite() && z < auc);
    }

    #[test]
    fn random_baseline_is_deterministic() {
        let truth = &phantoms(1, 12, 12, 2)[0];
        let a = random_baseline_aucs(truth, 10, 3, 5).unwrap();
        assert_eq!(a, random_baseline_aucs(truth, 10, 3, 5).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn run_dir_round_trip() {
        let truth = &phantoms(1, 10, 10, 2)[0];
        let rd = RdSource::Approx(RdParams::multichannel(2));
        let cfg = AcquisitionConfig { stop_fov: 6.0, ..AcquisitionConfig::pointwise(2) };
        let run = run_acquisition(truth, &ErdSource::Oracle(rd.clone()), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &run, truth, Some(rd)).unwrap();
        assert!(dir.path().join("mask_step0000.pgm").is_file());
        let m = evaluate_run_dir(dir.path(), truth).unwrap();
        assert!((m.psnr_auc - run.mz_psnr_auc()).abs() < 1e-9);
        assert!((m.erd_psnr_auc.unwrap() - PSNR_CAP * 5.0).abs() < 1e-3);
        let trace: Vec<(f64, f64)> = run.steps.iter().map(|s| (s.percent_fov, s.mean_psnr)).collect();
        assert_eq!(milestone_curve(&trace), run.psnr_curve());
    }
}
