//! Fully connected ERD regressor: standardised features, ReLU hidden layers,
//! linear scalar output, trained with Adam on squared error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Features, NUM_FEATURES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50; 5],
            epochs: 500,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Dense layer, `weights` stored row-major as `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o = acc;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpFit {
    pub model: MlpModel,
    /// Mean squared error on the training set before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl MlpModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ModelFormat(format!("MLP: {m}")));
        if self.feature_mean.len() != NUM_FEATURES || self.feature_std.len() != NUM_FEATURES {
            return bad("feature statistics have the wrong length");
        }
        if self.layers.is_empty() {
            return bad("no layers");
        }
        let mut width = NUM_FEATURES;
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != width || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad(&format!("layer {i} shape is inconsistent"));
            }
            width = l.outputs;
        }
        if width != 1 {
            return bad("output layer must have one unit");
        }
        let finite = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .chain(&self.feature_mean)
            .chain(&self.feature_std)
            .chain([&self.target_mean, &self.target_std])
            .all(|v| v.is_finite());
        if !finite || self.feature_std.iter().any(|s| *s <= 0.0) || self.target_std <= 0.0 {
            return bad("non-finite or non-positive parameters");
        }
        Ok(())
    }

    fn standardize(&self, x: &Features) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|i| (x[i] - self.feature_mean[i]) / self.feature_std[i])
    }

    /// Network output on standardised inputs, before target rescaling.
    fn raw(&self, x: &[f64], scratch: &mut (Vec<f64>, Vec<f64>)) -> f64 {
        let (a, b) = scratch;
        a.clear();
        a.extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            b.resize(layer.outputs, 0.0);
            layer.apply(a, b);
            if i < last {
                b.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(a, b);
        }
        a[0]
    }

    pub fn predict(&self, x: &Features) -> f64 {
        let mut scratch = (Vec::with_capacity(64), Vec::with_capacity(64));
        self.predict_with(x, &mut scratch)
    }

    pub(crate) fn predict_with(&self, x: &Features, scratch: &mut (Vec<f64>, Vec<f64>)) -> f64 {
        let z = self.standardize(x);
        self.target_mean + self.target_std * self.raw(&z, scratch)
    }

    fn mse(&self, features: &[Features], targets: &[f64]) -> f64 {
        let mut scratch = (Vec::new(), Vec::new());
        features
            .iter()
            .zip(targets)
            .map(|(x, y)| (self.predict_with(x, &mut scratch) - y).powi(2))
            .sum::<f64>()
            / features.len() as f64
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, gi) in p.iter_mut().zip(g) {
                self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * gi;
                self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * gi * gi;
                *w -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

/// Trains a network from scratch. Deterministic for a given `cfg.seed`.
pub fn fit_mlp(features: &[Features], targets: &[f64], cfg: &MlpConfig) -> Result<MlpFit> {
    if features.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::invalid("MLP fit needs at least one row"));
    }
    if cfg.batch_size == 0 || cfg.hidden.iter().any(|h| *h == 0) {
        return Err(Error::invalid("batch size and layer widths must be positive"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if features.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("MLP training data must be finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut fmean, mut fstd) = (Vec::new(), Vec::new());
    for i in 0..NUM_FEATURES {
        let (m, s) = mean_std(features.iter().map(move |x| x[i]));
        fmean.push(m);
        fstd.push(s);
    }
    let (tmean, tstd) = mean_std(targets.iter().copied());

    let mut widths = vec![NUM_FEATURES];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let gain = if i + 2 == widths.len() { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / w[0] as f64).sqrt()).expect("valid std");
            Layer {
                inputs: w[0],
                outputs: w[1],
                weights: (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; w[1]],
            }
        })
        .collect();
    let mut model = MlpModel {
        feature_mean: fmean,
        feature_std: fstd,
        target_mean: tmean,
        target_std: tstd,
        layers,
    };

    let xs: Vec<[f64; NUM_FEATURES]> = features.iter().map(|x| model.standardize(x)).collect();
    let ys: Vec<f64> = targets.iter().map(|y| (y - tmean) / tstd).collect();
    let initial_loss = model.mse(features, targets);

    let nl = model.layers.len();
    let n_params: usize = model.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let mut adam = Adam::new(n_params);
    let mut grads: Vec<Vec<f64>> = model
        .layers
        .iter()
        .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
        .collect();
    let mut acts: Vec<Vec<f64>> = widths.iter().map(|w| vec![0.0; *w]).collect();
    let mut deltas: Vec<Vec<f64>> = widths.iter().map(|w| vec![0.0; *w]).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                acts[0].copy_from_slice(&xs[i]);
                for l in 0..nl {
                    let (lo, hi) = acts.split_at_mut(l + 1);
                    model.layers[l].apply(&lo[l], &mut hi[0]);
                    if l + 1 < nl {
                        hi[0].iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
                deltas[nl][0] = scale * (acts[nl][0] - ys[i]);
                for l in (0..nl).rev() {
                    let layer = &model.layers[l];
                    let (gw, gb) = {
                        let (a, b) = grads.split_at_mut(2 * l + 1);
                        (&mut a[2 * l], &mut b[0])
                    };
                    let (dlo, dhi) = deltas.split_at_mut(l + 1);
                    let d_out = &dhi[0];
                    for (o, &d) in d_out.iter().enumerate() {
                        gb[o] += d;
                        let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                        for (g, a) in row.iter_mut().zip(&acts[l]) {
                            *g += d * a;
                        }
                    }
                    if l > 0 {
                        let d_in = &mut dlo[l];
                        d_in.iter_mut().for_each(|v| *v = 0.0);
                        for (o, &d) in d_out.iter().enumerate() {
                            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                            for (di, w) in d_in.iter_mut().zip(row) {
                                *di += d * w;
                            }
                        }
                        for (di, a) in d_in.iter_mut().zip(&acts[l]) {
                            if *a <= 0.0 {
                                *di = 0.0;
                            }
                        }
                    }
                }
            }
            let mut params: Vec<&mut [f64]> = model
                .layers
                .iter_mut()
                .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
                .collect();
            adam.step(&mut params, &grads, cfg.learning_rate);
        }
        if model.layers.iter().any(|l| l.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::Diverged(format!(
                "non-finite weights after epoch {epoch}; the learning rate {} is too high for this data",
                cfg.learning_rate
            )));
        }
    }
    let final_loss = model.mse(features, targets);
    if !final_loss.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite training loss; the learning rate {} is too high for this data",
            cfg.learning_rate
        )));
    }
    Ok(MlpFit {
        model,
        initial_loss,
        final_loss,
    })
}
