//! Single-file checkpoint: magic, header length, JSON header, raw tensor data.
//!
//! The header lists every tensor by name and shape in storage order, along
//! with the step, the resolved configuration and its hash, optimizer step
//! counters and the generator position. Tensor data follows as little-endian
//! values of the declared dtype.

use std::io::{Read, Write};
use std::path::Path;

use objman_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"OBJMCKPT";
const VERSION: u32 = 1;

/// Position of the training random generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal word position (may exceed 64 bits).
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    step: u64,
    config_hash: String,
    config: String,
    height: usize,
    width: usize,
    rng: Option<RngState>,
    optimizer_steps: Vec<(String, u64)>,
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub config_hash: String,
    /// Resolved configuration TOML.
    pub config: String,
    pub height: usize,
    pub width: usize,
    pub rng: Option<RngState>,
    /// Adam step counter per optimizer name.
    pub optimizer_steps: Vec<(String, u64)>,
    /// Parameters and optimizer moments, in a fixed order.
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose name starts with `prefix/`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> Vec<(&str, Tensor<T>)> {
        let p = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&p).map(|rest| (rest, t.clone())))
            .collect()
    }

    pub fn optimizer_step(&self, name: &str) -> Option<u64> {
        self.optimizer_steps.iter().find(|(n, _)| n == name).map(|&(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: VERSION,
            dtype: T::DTYPE.to_string(),
            step: self.step,
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            height: self.height,
            width: self.width,
            rng: self.rng.clone(),
            optimizer_steps: self.optimizer_steps.clone(),
            entries: self.tensors.iter().map(|(n, t)| Entry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header is serializable");
        let mut out = Vec::with_capacity(json.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("corrupt header: {e}")))?;
        if header.version != VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        if header.dtype != T::DTYPE {
            return Err(bad(format!("stored dtype {} but {} requested", header.dtype, T::DTYPE)));
        }
        let mut offset = 16 + hlen;
        let expected: usize = header.entries.iter().map(|e| e.shape.iter().product::<usize>() * T::BYTES).sum();
        if bytes.len() != offset + expected {
            return Err(bad(format!("expected {} data bytes, found {}", expected, bytes.len() - offset)));
        }
        let mut tensors = Vec::with_capacity(header.entries.len());
        for e in header.entries {
            let n: usize = e.shape.iter().product();
            let data = (0..n)
                .map(|i| T::read_le(&bytes[offset + i * T::BYTES..offset + (i + 1) * T::BYTES]))
                .collect();
            offset += n * T::BYTES;
            tensors.push((e.name, Tensor::from_vec(&e.shape, data)?));
        }
        Ok(Self {
            step: header.step,
            config_hash: header.config_hash,
            config: header.config,
            height: header.height,
            width: header.width,
            rng: header.rng,
            optimizer_steps: header.optimizer_steps,
            tensors,
        })
    }
}

/// Writes atomically via a temporary sibling file.
pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        Checkpoint {
            step: 42,
            config_hash: "abc".into(),
            config: "seed = 1\n".into(),
            height: 8,
            width: 8,
            rng: Some(RngState { seed: "00".repeat(32), stream: 3, word_pos: "123456789012345678901234".into() }),
            optimizer_steps: vec![("seg".into(), 7)],
            tensors: vec![
                ("seg/a".into(), Tensor::from_vec(&[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]).unwrap()),
                ("inp/b".into(), Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap()),
            ],
        }
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let c = sample();
        let back = Checkpoint::<f32>::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        for ((_, a), (_, b)) in c.tensors.iter().zip(&back.tensors) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.group("seg").len(), 1);
        assert_eq!(back.optimizer_step("seg"), Some(7));
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes();
        let p = Path::new("x");
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        assert!(Checkpoint::<f32>::from_bytes(&bytes[1..], p).is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes, p).is_err());
        let mut broken = bytes.clone();
        broken[20] ^= 0xff;
        assert!(Checkpoint::<f32>::from_bytes(&broken, p).is_err());
    }
}
