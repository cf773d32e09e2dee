//! Fully convolutional ERD inference (single precision).
//!
//! Weight file layout:
//!
//! ```text
//! b"DSUNET01" | u64 LE header length | UTF-8 JSON header | f32 LE payload
//! ```
//!
//! The header carries the architecture descriptor, a tensor manifest
//! (`name`, `shape`, byte `offset` into the payload) and the FNV-1a 64-bit
//! checksum of the payload as 16 lowercase hex digits. Kernels are
//! `[out, in, kh, kw]`, biases `[out]`.
//!
//! Architecture for depth `D` and base width `B` (level `l` has `B·2^l`
//! filters): each encoder level applies two 3x3 convolutions with leaky ReLU,
//! levels are joined by 2x2 max pooling; each decoder level upsamples ×2
//! (nearest), applies a 3x3 convolution, concatenates `[skip, up]` and
//! applies two more 3x3 convolutions, all with ReLU. A final 1x1 convolution
//! yields one plane. Inputs are zero padded to multiples of `2^(D-1)`.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DSUNET01";
pub const FORMAT_NAME: &str = "dynsamp-unet";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub base_filters: usize,
    pub in_channels: usize,
    pub encoder_activation: String,
    pub leaky_slope: f32,
    pub decoder_activation: String,
    pub upsample: String,
}

impl Architecture {
    /// Four levels, 32 base filters, three input planes.
    pub fn standard() -> Self {
        Self::new(4, 32)
    }

    pub fn new(depth: usize, base_filters: usize) -> Self {
        Self {
            depth,
            base_filters,
            in_channels: 3,
            encoder_activation: "leaky_relu".into(),
            leaky_slope: 0.2,
            decoder_activation: "relu".into(),
            upsample: "nearest".into(),
        }
    }

    pub fn pad_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelFormat(m));
        if !(1..=8).contains(&self.depth) || self.base_filters == 0 || self.in_channels == 0 {
            return bad(format!(
                "unsupported architecture depth {} / base {} / inputs {}",
                self.depth, self.base_filters, self.in_channels
            ));
        }
        if self.encoder_activation != "leaky_relu"
            || self.decoder_activation != "relu"
            || self.upsample != "nearest"
        {
            return bad("unsupported activation or upsampling tag".into());
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky slope must be finite".into());
        }
        Ok(())
    }

    fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Names and shapes of every tensor, in payload order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, o: usize, i: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![o, i, k, k]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        for l in 0..self.depth {
            let f = self.filters(l);
            let fin = if l == 0 { self.in_channels } else { self.filters(l - 1) };
            conv(format!("enc{l}.conv1"), f, fin, 3);
            conv(format!("enc{l}.conv2"), f, f, 3);
        }
        for l in (0..self.depth - 1).rev() {
            let f = self.filters(l);
            conv(format!("dec{l}.up"), f, self.filters(l + 1), 3);
            conv(format!("dec{l}.conv1"), f, 2 * f, 3);
            conv(format!("dec{l}.conv2"), f, f, 3);
        }
        conv("out".into(), 1, self.filters(0), 1);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub checksum_fnv1a64: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    out_ch: usize,
    in_ch: usize,
    k: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel {
    arch: Architecture,
    convs: Vec<Conv>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

impl UNetModel {
    /// Builds a model from tensors given in manifest order.
    pub fn from_tensors(arch: Architecture, tensors: Vec<Vec<f32>>) -> Result<Self> {
        arch.validate()?;
        let manifest = arch.manifest();
        if tensors.len() != manifest.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} tensors, got {}",
                manifest.len(),
                tensors.len()
            )));
        }
        let mut convs = Vec::new();
        let mut it = manifest.iter().zip(tensors);
        while let (Some(((wn, ws), w)), Some(((_, bs), b))) = (it.next(), it.next()) {
            let size: usize = ws.iter().product();
            if w.len() != size || b.len() != bs[0] {
                return Err(Error::ModelFormat(format!("tensor {wn} has the wrong length")));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::ModelFormat(format!("tensor {wn} has non-finite values")));
            }
            convs.push(Conv {
                out_ch: ws[0],
                in_ch: ws[1],
                k: ws[2],
                weight: w,
                bias: b,
            });
        }
        Ok(Self { arch, convs })
    }

    /// He-initialised weights, for examples and tests.
    pub fn random(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = arch
            .manifest()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                if name.ends_with(".bias") {
                    (0..n).map(|_| Normal::new(0.0f32, 0.01).unwrap().sample(&mut rng)).collect()
                } else {
                    let fan_in = (shape[1] * shape[2] * shape[3]) as f32;
                    let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).unwrap();
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
            })
            .collect();
        Self::from_tensors(arch, tensors)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn tensors(&self) -> impl Iterator<Item = &[f32]> {
        self.convs
            .iter()
            .flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::new();
        for ((name, shape), t) in self.arch.manifest().into_iter().zip(self.tensors()) {
            entries.push(TensorEntry {
                name,
                shape,
                offset: payload.len(),
            });
            for v in t {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT_NAME.into(),
            version: 1,
            architecture: self.arch.clone(),
            checksum_fnv1a64: format!("{:016x}", fnv1a64(&payload)),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a U-Net weight file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(hlen)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        if header.format != FORMAT_NAME || header.version != 1 {
            return Err(bad("unknown format or version"));
        }
        let payload = &bytes[header_end..];
        let expected = u64::from_str_radix(&header.checksum_fnv1a64, 16)
            .map_err(|_| bad("malformed checksum"))?;
        if fnv1a64(payload) != expected {
            return Err(bad("payload checksum mismatch"));
        }
        header.architecture.validate()?;
        let manifest = header.architecture.manifest();
        if manifest.len() != header.tensors.len() {
            return Err(Error::ModelFormat(format!(
                "architecture declares {} tensors, manifest lists {}",
                manifest.len(),
                header.tensors.len()
            )));
        }
        let mut tensors = Vec::new();
        for ((name, shape), entry) in manifest.iter().zip(&header.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(Error::ModelFormat(format!(
                    "tensor {} {:?} does not match the architecture ({name} {shape:?})",
                    entry.name, entry.shape
                )));
            }
            let n: usize = shape.iter().product();
            let end = entry.offset + 4 * n;
            if end > payload.len() {
                return Err(Error::ModelFormat(format!("tensor {name} exceeds the payload")));
            }
            tensors.push(
                payload[entry.offset..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        Self::from_tensors(header.architecture, tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Runs the network on `[planes, rows, cols]` and returns `[rows, cols]`.
    pub fn infer(&self, input: &Array3<f32>) -> Result<Array2<f32>> {
        let (c, h, w) = input.dim();
        if c != self.arch.in_channels {
            return Err(Error::invalid(format!(
                "network expects {} input planes, got {c}",
                self.arch.in_channels
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::invalid("empty input"));
        }
        let m = self.arch.pad_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let (top, left) = ((ph - h) / 2, (pw - w) / 2);
        let mut x = Tensor::zeros(c, ph, pw);
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    x.data[(ch * ph + r + top) * pw + col + left] = input[[ch, r, col]];
                }
            }
        }

        let slope = self.arch.leaky_slope;
        let leaky = |v: f32| if v > 0.0 { v } else { slope * v };
        let relu = |v: f32| v.max(0.0);
        let mut convs = self.convs.iter();
        let mut skips = Vec::new();
        for l in 0..self.arch.depth {
            if l > 0 {
                x = x.max_pool();
            }
            x = x.conv(convs.next().unwrap(), leaky);
            x = x.conv(convs.next().unwrap(), leaky);
            if l + 1 < self.arch.depth {
                skips.push(x.clone());
            }
        }
        for _ in (0..self.arch.depth - 1).rev() {
            x = x.upsample().conv(convs.next().unwrap(), relu);
            x = Tensor::concat(&skips.pop().unwrap(), &x);
            x = x.conv(convs.next().unwrap(), relu);
            x = x.conv(convs.next().unwrap(), relu);
        }
        x = x.conv(convs.next().unwrap(), |v| v);

        Ok(Array2::from_shape_fn((h, w), |(r, col)| {
            x.data[(r + top) * pw + col + left]
        }))
    }
}

#[derive(Clone, Debug)]
struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    /// Same-size convolution with zero padding.
    fn conv(&self, k: &Conv, act: impl Fn(f32) -> f32) -> Tensor {
        debug_assert_eq!(k.in_ch, self.c);
        let (h, w) = (self.h, self.w);
        let half = k.k / 2;
        let mut out = Tensor::zeros(k.out_ch, h, w);
        for o in 0..k.out_ch {
            let plane = &mut out.data[o * h * w..(o + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = k.bias[o]);
            for i in 0..k.in_ch {
                let src = &self.data[i * h * w..(i + 1) * h * w];
                for ky in 0..k.k {
                    for kx in 0..k.k {
                        let wv = k.weight[((o * k.in_ch + i) * k.k + ky) * k.k + kx];
                        let dy = ky as isize - half as isize;
                        let dx = kx as isize - half as isize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize) as usize;
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                            let drow = &mut plane[y * w..(y + 1) * w];
                            for x in x0..x1 {
                                drow[x] += wv * srow[(x as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
            plane.iter_mut().for_each(|v| *v = act(*v));
        }
        out
    }

    fn max_pool(&self) -> Tensor {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut out = Tensor::zeros(self.c, h, w);
        for c in 0..self.c {
            for y in 0..h {
                for x in 0..w {
                    let at = |dy: usize, dx: usize| self.data[(c * self.h + 2 * y + dy) * self.w + 2 * x + dx];
                    out.data[(c * h + y) * w + x] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
                }
            }
        }
        out
    }

    fn upsample(&self) -> Tensor {
        let (h, w) = (self.h * 2, self.w * 2);
        let mut out = Tensor::zeros(self.c, h, w);
        for c in 0..self.c {
            for y in 0..h {
                for x in 0..w {
                    out.data[(c * h + y) * w + x] = self.data[(c * self.h + y / 2) * self.w + x / 2];
                }
            }
        }
        out
    }

    fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }
}

/// One recorded input/output pair produced alongside a weight file.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub input: Array3<f32>,
    pub output: Array2<f32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FixtureEntry {
    name: String,
    rows: usize,
    cols: usize,
    input: String,
    output: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FixtureManifest {
    weights: String,
    fixtures: Vec<FixtureEntry>,
}

/// A fixture bundle: `manifest.json` naming the weight file and, per fixture,
/// a `[3, rows, cols]` input and a `[rows, cols]` output `.f32` file.
#[derive(Clone, Debug)]
pub struct FixtureBundle {
    pub weights: std::path::PathBuf,
    pub fixtures: Vec<Fixture>,
}

pub fn load_fixtures(dir: impl AsRef<Path>) -> Result<FixtureBundle> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: FixtureManifest = serde_json::from_str(&text)?;
    let mut fixtures = Vec::new();
    for e in manifest.fixtures {
        let input = crate::io::read_f32(dir.join(&e.input), 3 * e.rows * e.cols)?;
        let output = crate::io::read_f32(dir.join(&e.output), e.rows * e.cols)?;
        fixtures.push(Fixture {
            name: e.name,
            input: Array3::from_shape_vec((3, e.rows, e.cols), input).expect("length checked"),
            output: Array2::from_shape_vec((e.rows, e.cols), output).expect("length checked"),
        });
    }
    Ok(FixtureBundle {
        weights: dir.join(manifest.weights),
        fixtures,
    })
}
