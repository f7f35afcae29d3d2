//! `DCMP` checkpoint files.
//!
//! Layout: magic `DCMP`, `u32` version, `u32` header length and a UTF-8
//! `key = value` header, `u32` tensor count and the tensor names (each a
//! `u32` length plus bytes), then one tensor blob per name in the same order.

use std::fmt::Write as _;
use std::path::Path;

use super::TrainConfig;
use crate::codec::{CodecArch, NeuralCodec};
use crate::error::{Error, Result};
use crate::tensor::{read_blob, write_blob, ByteReader, Real};

pub const MAGIC: &[u8; 4] = b"DCMP";
pub const FORMAT_VERSION: u32 = 1;

/// Metadata stored next to the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub arch: CodecArch,
    pub lambda: f64,
    pub sigma: f64,
    pub intensity_scale: f64,
    pub step: u64,
    pub seed: u64,
}

impl CheckpointHeader {
    pub fn from_config(cfg: &TrainConfig, step: u64) -> Self {
        Self {
            arch: cfg.arch.clone(),
            lambda: cfg.lambda,
            sigma: cfg.sigma,
            intensity_scale: cfg.intensity_scale,
            step,
            seed: cfg.seed,
        }
    }

    fn to_text(&self) -> String {
        let a = &self.arch;
        let hidden: Vec<String> = a.prior_hidden.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "patch_size = {}", a.patch_size);
        let _ = writeln!(s, "hidden_channels = {}", a.hidden_channels);
        let _ = writeln!(s, "latent_channels = {}", a.latent_channels);
        let _ = writeln!(s, "layers = {}", a.layers);
        let _ = writeln!(s, "kernel = {}", a.kernel);
        let _ = writeln!(s, "prior_hidden = {}", hidden.join(","));
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "intensity_scale = {}", self.intensity_scale);
        let _ = writeln!(s, "step = {}", self.step);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    fn parse(text: &str, offset: u64) -> Result<Self> {
        let bad = |detail: String| Error::Format { offset, detail };
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("header line without '=': {line:?}")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks {k}")));
        fn num<N: std::str::FromStr>(k: &str, v: &str, offset: u64) -> Result<N> {
            v.parse().map_err(|_| Error::Format { offset, detail: format!("header {k} = {v:?} is not a number") })
        }
        let prior_hidden = get("prior_hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|w| num("prior_hidden", w.trim(), offset))
            .collect::<Result<Vec<usize>>>()?;
        Ok(Self {
            arch: CodecArch {
                patch_size: num("patch_size", get("patch_size")?, offset)?,
                hidden_channels: num("hidden_channels", get("hidden_channels")?, offset)?,
                latent_channels: num("latent_channels", get("latent_channels")?, offset)?,
                layers: num("layers", get("layers")?, offset)?,
                kernel: num("kernel", get("kernel")?, offset)?,
                prior_hidden,
            },
            lambda: num("lambda", get("lambda")?, offset)?,
            sigma: num("sigma", get("sigma")?, offset)?,
            intensity_scale: num("intensity_scale", get("intensity_scale")?, offset)?,
            step: num("step", get("step")?, offset)?,
            seed: num("seed", get("seed")?, offset)?,
        })
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

/// Encode a checkpoint in memory.
pub fn write_checkpoint<T: Real>(codec: &NeuralCodec<T>, header: &CheckpointHeader) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_bytes(&mut out, header.to_text().as_bytes());
    let params = codec.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, _) in &params {
        put_bytes(&mut out, name.as_bytes());
    }
    for (_, t) in &params {
        write_blob(&mut out, t);
    }
    out
}

/// Decode a checkpoint; the weights come back as trainable leaves.
pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<(NeuralCodec<T>, CheckpointHeader)> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, detail: format!("bad magic {magic:?}, expected \"DCMP\"") });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let at = r.offset();
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|e| Error::Format { offset: at, detail: format!("header is not UTF-8: {e}") })?;
    let header = CheckpointHeader::parse(text, at)?;
    let mut codec = NeuralCodec::<T>::new(header.arch.clone(), header.intensity_scale, 0)
        .map_err(|e| Error::Architecture(e.to_string()))?;

    let count = r.u32()? as usize;
    let expected = codec.params().len();
    if count != expected {
        return Err(Error::Architecture(format!("checkpoint has {count} tensors, architecture needs {expected}")));
    }
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| Error::Format { offset: at, detail: format!("tensor name is not UTF-8: {e}") })?;
        names.push(name.to_string());
    }
    for ((want, slot), name) in codec.params_mut().into_iter().zip(&names) {
        if want != *name {
            return Err(Error::Architecture(format!("tensor {name} found where {want} was expected")));
        }
        let blob = read_blob::<T>(&mut r)?;
        if blob.shape() != slot.shape() {
            return Err(Error::Architecture(format!(
                "tensor {name} has shape {:?}, architecture needs {:?}",
                blob.shape(),
                slot.shape()
            )));
        }
        *slot = blob.detach_parameter();
    }
    if r.remaining() != 0 {
        return Err(Error::Format { offset: r.offset(), detail: format!("{} trailing bytes", r.remaining()) });
    }
    Ok((codec, header))
}

pub fn save_checkpoint<T: Real>(codec: &NeuralCodec<T>, header: &CheckpointHeader, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(codec, header)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(NeuralCodec<T>, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
