//! Command-line front end. Every subcommand accepts `--config FILE`, a JSON
//! object keyed by flag name (`{"stop-fov": 30, ...}`); flags given on the
//! command line take precedence over the file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::acquisition::{run_acquisition, AcquisitionConfig, ErdSource, ScanMode, StopReason};
use crate::error::{Error, Result};
use crate::experiment::{
    default_densities, evaluate_run_dir, export_corpus, generate_training_corpus, import_corpus, load_samples,
    metrics_csv, optimize_c, train_ls, train_mlp, training_rows, write_run,
};
use crate::grid::GridSpec;
use crate::ingest::{load_sample, save_sample};
use crate::models::{ErdModel, MlpConfig, Regressor, UNetModel};
use crate::phantom::{generate_phantom, phantom_meta};
use crate::rd::{RdParams, RdSource, WindowMode};

#[derive(Parser, Debug)]
#[command(name = "dynsamp", version, about = "Dynamic sparse sampling simulator")]
pub struct Cli {
    /// JSON file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic multichannel phantoms.
    Phantom(PhantomArgs),
    /// Build a training corpus of random masks, reconstructions and RD maps.
    Corpus(CorpusArgs),
    /// Search c and window candidates by RD-driven simulated scans.
    OptimizeC(OptimizeArgs),
    /// Fit an LS or MLP ERD model on a corpus.
    Train(TrainArgs),
    /// Simulate a scan of one sample.
    Simulate(SimulateArgs),
    /// Recompute metrics of run directories against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PhantomArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Pixel pitch in micrometres, `WIDTHxHEIGHT` or a single value.
    #[arg(long)]
    pub pixel: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CorpusArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// `START:END:STEP` in percent.
    #[arg(long)]
    pub densities: Option<String>,
    #[arg(long)]
    pub c: Option<f64>,
    /// `static:N` or `dyn:N`.
    #[arg(long)]
    pub window: Option<String>,
    /// Use exact RD instead of the Gaussian approximation.
    #[arg(long)]
    pub exact: Option<bool>,
    /// Comma-separated channel indices; all channels by default.
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub c_set: Option<String>,
    #[arg(long)]
    pub windows: Option<String>,
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub stop_fov: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    /// `ls` or `mlp`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Train on a seeded subset of at most this many rows.
    #[arg(long)]
    pub max_rows: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// `ls:FILE`, `mlp:FILE`, `unet:FILE` or `oracle`.
    #[arg(long)]
    pub model: Option<String>,
    /// `pointwise` or `linewise`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub stop_fov: Option<f64>,
    #[arg(long)]
    pub line_fraction: Option<f64>,
    /// Percent of the FOV revealed per pointwise step; one cell by default.
    #[arg(long)]
    pub group_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long, num_args = 1..)]
    pub runs: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Overlays the flags given on the command line onto the config file.
fn merge<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut base: Value = serde_json::from_str(&text)?;
    let Value::Object(base_map) = &mut base else {
        return Err(Error::invalid(format!("{}: config must be a JSON object", path.display())));
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                base_map.insert(k, v);
            }
        }
    }
    Ok(serde_json::from_value(base)?)
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::invalid(format!("--{flag} is required")))
}

pub fn parse_densities(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::invalid(format!("densities must be START:END:STEP, got {spec:?}"));
    let parts: Vec<usize> = spec
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if start == 0 || step == 0 || start > end || end > 100 {
        return Err(bad());
    }
    Ok((start..=end).step_by(step).collect())
}

fn parse_list<T: std::str::FromStr>(spec: &str, what: &str) -> Result<Vec<T>> {
    let out: Vec<T> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad {what} {s:?}")))
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::invalid(format!("empty {what} list")));
    }
    Ok(out)
}

fn parse_window(spec: &str) -> Result<WindowMode> {
    let w: WindowMode = spec.parse()?;
    w.validate()?;
    Ok(w)
}

fn parse_pixel(spec: &str) -> Result<(f64, f64)> {
    let vals: Vec<f64> = parse_list(&spec.replace('x', ","), "pixel size")?;
    match vals[..] {
        [v] => Ok((v, v)),
        [w, h] => Ok((w, h)),
        _ => Err(Error::invalid(format!("pixel size must be W or WxH, got {spec:?}"))),
    }
}

fn channels_or_all(spec: Option<&str>, depth: usize) -> Result<Vec<usize>> {
    match spec {
        Some(s) => parse_list(s, "channel"),
        None => Ok((0..depth).collect()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Phantom(a) => phantom(merge(a, config)?),
        Command::Corpus(a) => corpus(merge(a, config)?),
        Command::OptimizeC(a) => optimize(merge(a, config)?),
        Command::Train(a) => train(merge(a, config)?),
        Command::Simulate(a) => simulate(merge(a, config)?),
        Command::Evaluate(a) => evaluate(merge(a, config)?),
    }
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let out = required(a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let (pw, ph) = a.pixel.as_deref().map_or(Ok((1.0, 1.0)), parse_pixel)?;
    let grid = GridSpec::new(a.rows.unwrap_or(64), a.cols.unwrap_or(64), pw, ph)?;
    let depth = a.channels.unwrap_or(4);
    for i in 0..a.count.unwrap_or(1) {
        let s = seed.wrapping_add(i as u64);
        let stack = generate_phantom(s, grid, depth)?;
        let name = format!("phantom_{s:04}");
        save_sample(out.join(&name), &phantom_meta(&name, &stack), &stack)?;
    }
    info!("wrote phantoms to {}", out.display());
    Ok(())
}

fn samples_only(dir: &Path) -> Result<Vec<crate::grid::ChannelStack>> {
    Ok(load_samples(dir)?.into_iter().map(|(_, s)| s).collect())
}

fn corpus(a: CorpusArgs) -> Result<()> {
    let samples = samples_only(&required(a.samples, "samples")?)?;
    let out = required(a.out, "out")?;
    let depth = samples[0].depth();
    let channels = channels_or_all(a.channels.as_deref(), depth)?;
    let rd = if a.exact.unwrap_or(false) {
        RdSource::Exact { channels }
    } else {
        let mut p = RdParams::multichannel(depth);
        p.channels = channels;
        if let Some(c) = a.c {
            p.c = c;
        }
        if let Some(w) = a.window.as_deref() {
            p.window = parse_window(w)?;
        }
        p.validate()?;
        RdSource::Approx(p)
    };
    let densities = a.densities.as_deref().map_or(Ok(default_densities()), parse_densities)?;
    let corpus = generate_training_corpus(&samples, &densities, a.seed.unwrap_or(0), &rd)?;
    export_corpus(&corpus, &out)?;
    println!("{} entries, checksum {:016x}", corpus.entries.len(), corpus.checksum());
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let samples = samples_only(&required(a.samples, "samples")?)?;
    let out = required(a.out, "out")?;
    let cs: Vec<f64> = parse_list(a.c_set.as_deref().unwrap_or("1,2,4,8,16,32,64,128,256"), "c value")?;
    let windows = a
        .windows
        .as_deref()
        .unwrap_or("static:15,dyn:3")
        .split(',')
        .map(parse_window)
        .collect::<Result<Vec<_>>>()?;
    let channels = channels_or_all(a.channels.as_deref(), samples[0].depth())?;
    let cfg = AcquisitionConfig {
        stop_fov: a.stop_fov.unwrap_or(30.0),
        ..AcquisitionConfig::pointwise(a.seed.unwrap_or(0))
    };
    let table = optimize_c(&samples, &cs, &windows, &channels, &cfg)?;
    write_text(&out, &table.to_csv())?;
    let best = table.best();
    println!("best c={} window={} auc={:.4}", best.c, best.window, best.auc);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = import_corpus(required(a.corpus, "corpus")?)?;
    let out = required(a.out, "out")?;
    let depth = corpus
        .entries
        .first()
        .ok_or_else(|| Error::invalid("corpus is empty"))?
        .recon
        .depth();
    let channels = match a.channels.as_deref() {
        Some(s) => parse_list(s, "channel")?,
        None => corpus.rd.channels().to_vec(),
    };
    let seed = a.seed.unwrap_or(0);
    let mut set = training_rows(&corpus, &channels)?;
    if let Some(limit) = a.max_rows {
        set = set.subsample(limit, seed);
    }
    let rd = Some(corpus.rd.clone());
    let model = match a.model.as_deref().unwrap_or("ls") {
        "ls" => train_ls(&set, channels, rd)?,
        "mlp" => {
            let defaults = MlpConfig::default();
            let cfg = MlpConfig {
                epochs: a.epochs.unwrap_or(defaults.epochs),
                learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
                seed,
                ..defaults
            };
            train_mlp(&set, channels, rd, &cfg)?
        }
        other => return Err(Error::invalid(format!("unknown model family {other:?}"))),
    };
    model.check_selection(&model.channels, depth)?;
    model.save_json(&out)?;
    println!("trained {} on {} rows", model.family(), set.len());
    Ok(())
}

fn load_source(spec: &str, depth: usize) -> Result<(ErdSource, Option<RdSource>)> {
    if spec == "oracle" {
        let rd = RdSource::Exact { channels: (0..depth).collect() };
        return Ok((ErdSource::Oracle(rd.clone()), Some(rd)));
    }
    let (family, file) = spec
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("model must be FAMILY:FILE or oracle, got {spec:?}")))?;
    let model = match family {
        "ls" | "mlp" => {
            let m = ErdModel::load_json(file)?;
            if m.family() != family {
                return Err(Error::ModelFormat(format!("{file} holds a {} model, not {family}", m.family())));
            }
            m
        }
        "unet" => ErdModel::new(
            Regressor::Unet(UNetModel::load(file)?),
            (0..depth).collect(),
            Some(RdSource::Approx(RdParams::multichannel(depth))),
        )?,
        other => return Err(Error::invalid(format!("unknown model family {other:?}"))),
    };
    let rd = model.rd.clone();
    Ok((ErdSource::Model(model), rd))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (_, sample) = load_sample(required(a.sample, "sample")?)?;
    let out = required(a.out, "out")?;
    let (source, rd) = load_source(a.model.as_deref().unwrap_or("oracle"), sample.depth())?;
    let seed = a.seed.unwrap_or(0);
    let mut cfg = match a.mode.as_deref().unwrap_or("pointwise") {
        "pointwise" => AcquisitionConfig {
            mode: ScanMode::Pointwise { group_fraction: a.group_fraction },
            ..AcquisitionConfig::pointwise(seed)
        },
        "linewise" => AcquisitionConfig {
            mode: ScanMode::Linewise { line_fraction: a.line_fraction.unwrap_or(30.0) },
            ..AcquisitionConfig::linewise(seed)
        },
        other => return Err(Error::invalid(format!("unknown mode {other:?}"))),
    };
    if let Some(s) = a.stop_fov {
        cfg.stop_fov = s;
    }
    let run = run_acquisition(&sample, &source, &cfg)?;
    write_run(&out, &run, &sample, rd)?;
    println!(
        "{} steps, {:.2}% measured, avg m/z PSNR AUC {:.4} ({:?})",
        run.steps.len() - 1,
        run.final_step().percent_fov,
        run.mz_psnr_auc(),
        run.stop
    );
    if let StopReason::Failed(e) = run.stop {
        return Err(Error::Runtime(format!("scan aborted: {e}")));
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let runs = required(a.runs, "runs")?;
    if runs.is_empty() {
        return Err(Error::invalid("--runs needs at least one directory"));
    }
    let (_, truth) = load_sample(required(a.truth, "truth")?)?;
    let out = required(a.out, "out")?;
    let metrics = runs
        .iter()
        .map(|r| evaluate_run_dir(r, &truth))
        .collect::<Result<Vec<_>>>()?;
    write_text(&out, &metrics_csv(&metrics))?;
    for m in &metrics {
        println!("{}: avg m/z PSNR AUC {:.4}", m.run, m.psnr_auc);
    }
    Ok(())
}

/// Process exit code for a result: 0, 2 for invalid input, 3 otherwise.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 3,
    }
}
