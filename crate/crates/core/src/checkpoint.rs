//! Checkpoint container.
//!
//! ```text
//! magic "SLGTCKPT" | version u8 = 1
//! meta_count u32 | meta_count x { key_len u32 | key utf8 | val_len u32 | val utf8 }
//! tensor_count u32 | tensor_count x { name_len u32 | name utf8 | ndim u32 | ndim x u64 | f64 payload }
//! crc32 u32 of everything before it
//! ```
//!
//! Little-endian throughout. Entries are written in key order, so equal
//! contents give byte-identical files. Parameter checkpoints carry the model
//! config under the `config` key; training checkpoints add optimizer moments
//! and loop counters.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::params::{ModelParams, ParamSpec};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SLGTCKPT";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    /// name -> (shape, values)
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("non-utf8 string".into()))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Missing(format!("meta key {key}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.tensors.insert(name.into(), (shape.to_vec(), data));
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.insert(name, t.shape(), t.to_vec());
    }

    pub fn tensor(&self, name: &str) -> Result<&(Vec<usize>, Vec<f64>), CheckpointError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(FORMAT_VERSION);
        buf.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, (shape, data)) in &self.tensors {
            put_str(&mut buf, name);
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        if bytes.len() < MAGIC.len() + 1 + 4 {
            return Err(CheckpointError::Malformed("file too short".into()));
        }
        let version = bytes[MAGIC.len()];
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() + 1 };
        let mut ck = Checkpoint::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| CheckpointError::Malformed(format!("bad shape {shape:?} for {name}")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("payload size".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            ck.tensors.insert(name, (shape, data));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Checkpoint::from_bytes(&bytes)?)
    }

    /// Stores every parameter under its own name.
    pub fn put_params(&mut self, params: &ModelParams) {
        for (name, t) in params.iter() {
            self.insert_tensor(name.clone(), t);
        }
    }

    /// Parameters named by `specs`, shape-checked. Other tensors (optimizer
    /// state) are ignored.
    pub fn params(&self, specs: &[ParamSpec]) -> Result<ModelParams> {
        let mut p = ModelParams::new();
        for spec in specs {
            let (shape, data) = self.tensor(&spec.name)?;
            if shape != &spec.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: shape.clone(),
                }
                .into());
            }
            p.insert(spec.name.clone(), Tensor::param(shape, data.clone())?);
        }
        Ok(p)
    }
}

/// Writes a parameter-only checkpoint with the model config attached.
pub fn save_params(path: impl AsRef<Path>, params: &ModelParams, config_toml: &str) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.set_meta("kind", "params");
    ck.set_meta("config", config_toml);
    ck.put_params(params);
    ck.save(path)
}

/// Loads a parameter checkpoint and validates it against `specs` exactly
/// (missing, extra and reshaped parameters are distinct errors).
pub fn load_params(path: impl AsRef<Path>, specs: &[ParamSpec]) -> Result<ModelParams> {
    let ck = Checkpoint::load(path)?;
    let p: ModelParams = ck
        .tensors
        .iter()
        .map(|(n, (s, d))| Ok((n.clone(), Tensor::param(s, d.clone())?)))
        .collect::<Result<_>>()?;
    p.validate(specs)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "params");
        ck.insert("b", &[2], vec![1.5, -0.0]);
        ck.insert("a.w", &[2, 3], (0..6).map(|i| i as f64 * 0.1).collect());
        ck
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.tensor("b").unwrap().1[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Magic));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version(9)));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 10] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn params_check_shapes() {
        let ck = sample();
        let ok = ck.params(&[ParamSpec::zeros("b", &[2])]).unwrap();
        assert_eq!(ok.get("b").unwrap().data(), &[1.5, 0.0]);
        assert!(matches!(
            ck.params(&[ParamSpec::zeros("b", &[3])]),
            Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))
        ));
        assert!(matches!(
            ck.params(&[ParamSpec::zeros("c", &[2])]),
            Err(Error::Checkpoint(CheckpointError::Missing(_)))
        ));
    }
}
