//! SDNet parameters, initialization, flat views, and checkpoint I/O.
//!
//! Checkpoint layout (little-endian): magic "MFCK" | u32 version=1 |
//! u32 config length + UTF-8 key=value lines | per tensor in declaration
//! order: u32 ndim, u32 dims, f32 data | u32 CRC32 of everything after the
//! magic.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::util::{crc32, push_f32, push_u32, ByteReader};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MFCK";
const VERSION: u32 = 1;

/// Architecture of the subdomain solver network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdnetConfig {
    /// Subdomain side in cells; boundary curves have `4m` values.
    pub m: usize,
    /// Boundary convolution stack: (kernel width, output channels). Kernels
    /// are circular (the perimeter is a closed loop) with GELU after each
    /// layer.
    pub conv_layers: Vec<(usize, usize)>,
    /// Width `d` of the split first layer.
    pub embed_dim: usize,
    /// Hidden MLP widths; the output layer is always width 1.
    pub hidden: Vec<usize>,
    /// Initialization seed.
    pub seed: u64,
}

impl SdnetConfig {
    /// Desk-scale default: small enough to train on a CPU in minutes.
    pub fn desk(m: usize) -> Self {
        SdnetConfig {
            m,
            conv_layers: vec![(5, 8), (5, 1)],
            embed_dim: 128,
            hidden: vec![128, 128, 128],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid(format!("m must be >= 2, got {}", self.m)));
        }
        if self.embed_dim == 0 || self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::invalid("layer widths must be positive".to_string()));
        }
        for (k, c) in &self.conv_layers {
            if k % 2 == 0 || *k == 0 || *c == 0 {
                return Err(Error::invalid(format!(
                    "conv kernel widths must be odd and channels positive, got ({k}, {c})"
                )));
            }
        }
        Ok(())
    }

    /// Boundary curve length `4m`.
    pub fn boundary_len(&self) -> usize {
        4 * self.m
    }

    /// Flattened conv-stack output size: final channel count times curve
    /// length.
    pub fn embedding_len(&self) -> usize {
        let channels = self.conv_layers.last().map(|(_, c)| *c).unwrap_or(1);
        channels * self.boundary_len()
    }

    fn to_blob(&self) -> String {
        let conv: Vec<String> = self
            .conv_layers
            .iter()
            .map(|(k, c)| format!("{k}x{c}"))
            .collect();
        let hidden: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
        format!(
            "m={}\nconv={}\nembed_dim={}\nhidden={}\nseed={}\n",
            self.m,
            conv.join(","),
            self.embed_dim,
            hidden.join(","),
            self.seed
        )
    }

    fn from_blob(blob: &str) -> Result<Self> {
        let mut m = None;
        let mut conv_layers = None;
        let mut embed_dim = None;
        let mut hidden = None;
        let mut seed = 0u64;
        for line in blob.lines() {
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad config line {line:?}")))?;
            let parse_usize =
                |v: &str| v.parse::<usize>().map_err(|e| Error::format(format!("{key}: {e}")));
            match key {
                "m" => m = Some(parse_usize(val)?),
                "embed_dim" => embed_dim = Some(parse_usize(val)?),
                "seed" => seed = val.parse().map_err(|e| Error::format(format!("seed: {e}")))?,
                "conv" => {
                    let mut layers = Vec::new();
                    if !val.is_empty() {
                        for part in val.split(',') {
                            let (k, c) = part
                                .split_once('x')
                                .ok_or_else(|| Error::format(format!("bad conv spec {part:?}")))?;
                            layers.push((parse_usize(k)?, parse_usize(c)?));
                        }
                    }
                    conv_layers = Some(layers);
                }
                "hidden" => {
                    let mut widths = Vec::new();
                    if !val.is_empty() {
                        for part in val.split(',') {
                            widths.push(parse_usize(part)?);
                        }
                    }
                    hidden = Some(widths);
                }
                _ => return Err(Error::format(format!("unknown config key {key:?}"))),
            }
        }
        let cfg = SdnetConfig {
            m: m.ok_or_else(|| Error::format("config missing m"))?,
            conv_layers: conv_layers.ok_or_else(|| Error::format("config missing conv"))?,
            embed_dim: embed_dim.ok_or_else(|| Error::format("config missing embed_dim"))?,
            hidden: hidden.ok_or_else(|| Error::format("config missing hidden"))?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One circular 1-D convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// (out_channels, in_channels, kernel).
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

/// One dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// (out, in).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All trainable tensors; also used as the gradient container since
/// gradients share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct SdnetParams {
    pub convs: Vec<Conv1d>,
    /// Split weight block applied to the boundary embedding: (d, E).
    pub w1: Array2<f64>,
    /// Split weight block applied to the xy coordinates: (d, 2).
    pub w2: Array2<f64>,
    /// Hidden layers plus the final width-1 output layer.
    pub mlp: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdnetModel {
    pub config: SdnetConfig,
    pub params: SdnetParams,
}

impl SdnetParams {
    fn zeros(config: &SdnetConfig) -> Self {
        let mut convs = Vec::new();
        let mut in_c = 1;
        for &(k, out_c) in &config.conv_layers {
            convs.push(Conv1d {
                weight: Array3::zeros((out_c, in_c, k)),
                bias: Array1::zeros(out_c),
            });
            in_c = out_c;
        }
        let d = config.embed_dim;
        let mut mlp = Vec::new();
        let mut prev = d;
        for &w in &config.hidden {
            mlp.push(Linear {
                weight: Array2::zeros((w, prev)),
                bias: Array1::zeros(w),
            });
            prev = w;
        }
        mlp.push(Linear {
            weight: Array2::zeros((1, prev)),
            bias: Array1::zeros(1),
        });
        SdnetParams {
            convs,
            w1: Array2::zeros((d, config.embedding_len())),
            w2: Array2::zeros((d, 2)),
            mlp,
        }
    }

    /// Tensor names and flat lengths in declaration order.
    pub fn segments(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), c.weight.len()));
            out.push((format!("conv{i}.bias"), c.bias.len()));
        }
        out.push(("w1".to_string(), self.w1.len()));
        out.push(("w2".to_string(), self.w2.len()));
        for (i, l) in self.mlp.iter().enumerate() {
            out.push((format!("mlp{i}.weight"), l.weight.len()));
            out.push((format!("mlp{i}.bias"), l.bias.len()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.segments().iter().map(|(_, n)| n).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.convs {
            out.extend(c.weight.iter());
            out.extend(c.bias.iter());
        }
        out.extend(self.w1.iter());
        out.extend(self.w2.iter());
        for l in &self.mlp {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "flat vector has {} values, model has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for c in &mut self.convs {
            take(c.weight.as_slice_mut().unwrap());
            take(c.bias.as_slice_mut().unwrap());
        }
        take(self.w1.as_slice_mut().unwrap());
        take(self.w2.as_slice_mut().unwrap());
        for l in &mut self.mlp {
            take(l.weight.as_slice_mut().unwrap());
            take(l.bias.as_slice_mut().unwrap());
        }
        Ok(())
    }

    /// Adds `scale * other` into `self` (same shapes assumed).
    pub fn axpy(&mut self, scale: f64, other: &SdnetParams) {
        for (c, o) in self.convs.iter_mut().zip(&other.convs) {
            c.weight.scaled_add(scale, &o.weight);
            c.bias.scaled_add(scale, &o.bias);
        }
        self.w1.scaled_add(scale, &other.w1);
        self.w2.scaled_add(scale, &other.w2);
        for (l, o) in self.mlp.iter_mut().zip(&other.mlp) {
            l.weight.scaled_add(scale, &o.weight);
            l.bias.scaled_add(scale, &o.bias);
        }
    }
}

impl SdnetModel {
    /// Seeded Xavier-normal initialization; biases start at zero.
    pub fn init(config: SdnetConfig) -> Result<Self> {
        config.validate()?;
        let mut params = SdnetParams::zeros(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            for v in w {
                *v = dist.sample(&mut rng);
            }
        };
        let mut in_c = 1;
        for (c, &(k, out_c)) in params.convs.iter_mut().zip(&config.conv_layers) {
            fill(c.weight.as_slice_mut().unwrap(), in_c * k, out_c * k);
            in_c = out_c;
        }
        let e = config.embedding_len();
        let d = config.embed_dim;
        fill(params.w1.as_slice_mut().unwrap(), e, d);
        fill(params.w2.as_slice_mut().unwrap(), 2, d);
        let mut prev = d;
        for (l, &w) in params.mlp.iter_mut().zip(config.hidden.iter().chain([&1usize])) {
            fill(l.weight.as_slice_mut().unwrap(), prev, w);
            prev = w;
        }
        Ok(SdnetModel { config, params })
    }

    /// A zero-valued gradient container with this model's shapes.
    pub fn zero_grads(&self) -> SdnetParams {
        SdnetParams::zeros(&self.config)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }
}

/// Writes the model as an MFCK checkpoint (parameters stored in single
/// precision).
pub fn save_model(path: impl AsRef<Path>, model: &SdnetModel) -> Result<()> {
    let mut body = Vec::new();
    push_u32(&mut body, VERSION);
    let blob = model.config.to_blob();
    push_u32(&mut body, blob.len() as u32);
    body.extend_from_slice(blob.as_bytes());
    let tensor = |dims: &[usize], data: &[f64], body: &mut Vec<u8>| {
        push_u32(body, dims.len() as u32);
        for d in dims {
            push_u32(body, *d as u32);
        }
        for v in data {
            push_f32(body, *v as f32);
        }
    };
    let p = &model.params;
    for c in &p.convs {
        tensor(&c.weight.shape().to_vec(), c.weight.as_slice().unwrap(), &mut body);
        tensor(&[c.bias.len()], c.bias.as_slice().unwrap(), &mut body);
    }
    tensor(&p.w1.shape().to_vec(), p.w1.as_slice().unwrap(), &mut body);
    tensor(&p.w2.shape().to_vec(), p.w2.as_slice().unwrap(), &mut body);
    for l in &p.mlp {
        tensor(&l.weight.shape().to_vec(), l.weight.as_slice().unwrap(), &mut body);
        tensor(&[l.bias.len()], l.bias.as_slice().unwrap(), &mut body);
    }
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&body);
    push_u32(&mut out, crc32(&body));
    fs::write(path, out)?;
    Ok(())
}

/// Loads an MFCK checkpoint, verifying the checksum and that every tensor
/// shape matches the embedded config.
pub fn load_model(path: impl AsRef<Path>) -> Result<SdnetModel> {
    let bytes = fs::read(&path)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::format("not an MFCK checkpoint".to_string()));
    }
    let body = &bytes[4..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32(body);
    if stored != actual {
        return Err(Error::format(format!(
            "checkpoint checksum mismatch (stored {stored:#010x}, computed {actual:#010x})"
        )));
    }
    let mut r = ByteReader::new(body);
    let trunc = || Error::format("truncated checkpoint".to_string());
    let version = r.u32().ok_or_else(trunc)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let blob_len = r.u32().ok_or_else(trunc)? as usize;
    let blob = std::str::from_utf8(r.take(blob_len).ok_or_else(trunc)?)
        .map_err(|e| Error::format(format!("config blob not UTF-8: {e}")))?;
    let config = SdnetConfig::from_blob(blob)?;

    let mut params = SdnetParams::zeros(&config);
    {
        let mut read_tensor = |expect_dims: &[usize], data: &mut [f64]| -> Result<()> {
            let ndim = r.u32().ok_or_else(trunc)? as usize;
            if ndim != expect_dims.len() {
                return Err(Error::shape(format!(
                    "tensor rank {ndim} does not match config rank {}",
                    expect_dims.len()
                )));
            }
            for expect in expect_dims {
                let got = r.u32().ok_or_else(trunc)? as usize;
                if got != *expect {
                    return Err(Error::shape(format!(
                        "tensor dim {got} does not match config dim {expect}"
                    )));
                }
            }
            for v in data.iter_mut() {
                *v = r.f32().ok_or_else(trunc)? as f64;
            }
            Ok(())
        };
        let shapes: Vec<Vec<usize>> = {
            let mut s = Vec::new();
            for c in &params.convs {
                s.push(c.weight.shape().to_vec());
                s.push(vec![c.bias.len()]);
            }
            s.push(params.w1.shape().to_vec());
            s.push(params.w2.shape().to_vec());
            for l in &params.mlp {
                s.push(l.weight.shape().to_vec());
                s.push(vec![l.bias.len()]);
            }
            s
        };
        let mut idx = 0;
        for c in &mut params.convs {
            read_tensor(&shapes[idx], c.weight.as_slice_mut().unwrap())?;
            idx += 1;
            read_tensor(&shapes[idx], c.bias.as_slice_mut().unwrap())?;
            idx += 1;
        }
        read_tensor(&shapes[idx], params.w1.as_slice_mut().unwrap())?;
        idx += 1;
        read_tensor(&shapes[idx], params.w2.as_slice_mut().unwrap())?;
        idx += 1;
        for l in &mut params.mlp {
            read_tensor(&shapes[idx], l.weight.as_slice_mut().unwrap())?;
            idx += 1;
            read_tensor(&shapes[idx], l.bias.as_slice_mut().unwrap())?;
            idx += 1;
        }
    }
    Ok(SdnetModel { config, params })
}
