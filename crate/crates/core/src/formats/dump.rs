use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{ModelConfig, Params};
use crate::numcore::Tensor;

pub const DUMP_MAGIC: &[u8; 4] = b"GLAN";
pub const DUMP_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// A `layers × tokens × dim` block of little-endian `f32`, layer-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDump {
    pub layers: u32,
    pub tokens: u32,
    pub dim: u32,
    pub data: Vec<f32>,
}

impl EmbeddingDump {
    pub fn new(layers: u32, tokens: u32, dim: u32, data: Vec<f32>) -> Result<Self> {
        let n = layers as u64 * tokens as u64 * dim as u64;
        ensure!(n == data.len() as u64, Shape, "payload has {} values, header implies {n}", data.len());
        Ok(Self { layers, tokens, dim, data })
    }

    /// One `tokens × dim` tensor per layer, all of the same shape.
    pub fn from_tensors(layers: &[Tensor]) -> Result<Self> {
        ensure!(!layers.is_empty(), Input, "nothing to dump");
        let (t, d) = (layers[0].rows(), layers[0].cols());
        let mut data = Vec::with_capacity(layers.len() * t * d);
        for (l, x) in layers.iter().enumerate() {
            ensure!(x.rows() == t && x.cols() == d, Shape, "layer {l} is {}x{}, expected {t}x{d}", x.rows(), x.cols());
            data.extend(x.data().iter().map(|&v| v as f32));
        }
        Self::new(layers.len() as u32, t as u32, d as u32, data)
    }

    pub fn layer(&self, l: usize) -> Result<Tensor> {
        ensure!(l < self.layers as usize, Input, "layer {l} of {}", self.layers);
        let (t, d) = (self.tokens as usize, self.dim as usize);
        let chunk = &self.data[l * t * d..(l + 1) * t * d];
        Tensor::matrix(t, d, chunk.iter().map(|&v| v as f64).collect())
    }

    pub fn to_tensors(&self) -> Result<Vec<Tensor>> {
        (0..self.layers as usize).map(|l| self.layer(l)).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(DUMP_MAGIC);
        for v in [DUMP_VERSION, self.layers, self.tokens, self.dim] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        ensure!(buf.len() >= HEADER_LEN, Corrupt, "dump shorter than its {HEADER_LEN}-byte header");
        ensure!(&buf[..4] == DUMP_MAGIC, Corrupt, "bad magic {:?}", &buf[..4]);
        let word = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        ensure!(version == DUMP_VERSION, Corrupt, "unsupported dump version {version}");
        let (layers, tokens, dim) = (word(1), word(2), word(3));
        let n = layers as u64 * tokens as u64 * dim as u64;
        let body = &buf[HEADER_LEN..];
        ensure!(
            body.len() as u64 == 4 * n,
            Corrupt,
            "payload is {} bytes, header implies {}",
            body.len(),
            4 * n
        );
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { layers, tokens, dim, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Sidecar describing how a flat checkpoint dump splits into tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<(String, Vec<usize>)>,
}

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes parameters as a `1 × 1 × n_params` dump plus a JSON manifest next to it.
pub fn save_checkpoint(path: &Path, params: &Params) -> Result<()> {
    let flat: Vec<f32> = params.tensors.iter().flat_map(|t| t.data().iter().map(|&v| v as f32)).collect();
    EmbeddingDump::new(1, 1, flat.len() as u32, flat)?.save(path)?;
    let manifest = CheckpointManifest {
        version: DUMP_VERSION,
        config: params.config.clone(),
        tensors: params.config.layout(),
    };
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Params> {
    let dump = EmbeddingDump::load(path)?;
    let text = fs::read_to_string(manifest_path(path))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("checkpoint manifest: {e}")))?;
    manifest.config.validate()?;
    ensure!(
        manifest.tensors == manifest.config.layout(),
        Corrupt,
        "manifest layout does not match its model config"
    );
    ensure!(
        dump.layers == 1 && dump.tokens == 1 && dump.dim as usize == manifest.config.n_params(),
        Corrupt,
        "checkpoint holds {} values, config needs {}",
        dump.data.len(),
        manifest.config.n_params()
    );
    let mut off = 0;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for (_, shape) in &manifest.tensors {
        let n: usize = shape.iter().product();
        let vals = dump.data[off..off + n].iter().map(|&v| v as f64).collect();
        tensors.push(Tensor::new(shape.clone(), vals)?);
        off += n;
    }
    Params::from_tensors(&manifest.config, tensors)
}
