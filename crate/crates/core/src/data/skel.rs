//! SKEL1 keypoint files and the dataset manifest.
//!
//! SKEL1, little-endian:
//!
//! ```text
//! magic "SKEL1" | version u8 = 1 | frames u32 | joints u32 | channels u32
//! label u32 | signer i32 (-1: none) | fps f32 (0: none)
//! frames*joints*channels f32, frame-major then joint then channel
//! crc32 u32 of everything before it
//! ```
//!
//! Manifest, one directive per line, `#` comments:
//!
//! ```text
//! classes 10
//! class 0 wave_low_1
//! sample train 0 train/00000.skel
//! sample test 0 test/00040.skel
//! ```
//!
//! Sample paths are relative to the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::KeypointSequence;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"SKEL1";
const VERSION: u8 = 1;
const HEADER: usize = 5 + 1 + 4 * 6;

pub fn encode_skel(seq: &KeypointSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + 4 * seq.data.len() + 4);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    for v in [seq.frames, seq.joints, seq.channels, seq.label] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&seq.signer.map_or(-1, |s| s as i32).to_le_bytes());
    buf.extend_from_slice(&seq.fps.unwrap_or(0.0).to_le_bytes());
    for &v in &seq.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_skel(bytes: &[u8]) -> Result<KeypointSequence> {
    let bad = |m: &str| Error::Format(format!("SKEL1: {m}"));
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("bad magic"));
    }
    if bytes.len() < HEADER + 4 {
        return Err(bad("truncated header"));
    }
    if bytes[5] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[5])));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&body[6 + 4 * i..10 + 4 * i]).unwrap();
    let [frames, joints, channels, label] = [0, 1, 2, 3].map(|i| u32::from_le_bytes(word(i)) as usize);
    let signer = i32::from_le_bytes(word(4));
    let fps = f32::from_le_bytes(word(5));
    let n = frames
        .checked_mul(joints)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("size overflow"))?;
    if body.len() - HEADER != 4 * n {
        return Err(bad(&format!("payload holds {} bytes, header needs {}", body.len() - HEADER, 4 * n)));
    }
    let data = body[HEADER..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let seq = KeypointSequence {
        frames,
        joints,
        channels,
        data,
        label,
        signer: (signer >= 0).then_some(signer as u32),
        fps: (fps > 0.0).then_some(fps),
    };
    seq.validate()?;
    Ok(seq)
}

pub fn write_skel(path: impl AsRef<Path>, seq: &KeypointSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_skel(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_skel(path: impl AsRef<Path>) -> Result<KeypointSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_skel(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub label: usize,
    /// Relative to the manifest directory.
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub samples: Vec<ManifestEntry>,
    /// Directory sample paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Manifest> {
        let mut m = Manifest { root: root.into(), ..Manifest::default() };
        let mut declared = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Format(format!("manifest line {}: {msg}", i + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad number {s:?}")));
            match words.as_slice() {
                ["classes", k] => declared = Some(num(k)?),
                ["class", id, name] => {
                    if num(id)? != m.classes.len() {
                        return Err(err(format!("class ids must be consecutive from 0, got {id}")));
                    }
                    m.classes.push(name.to_string());
                }
                ["sample", split, label, path] => m.samples.push(ManifestEntry {
                    split: split.parse().map_err(|_| err(format!("unknown split {split:?}")))?,
                    label: num(label)?,
                    path: PathBuf::from(path),
                }),
                _ => return Err(err(format!("unrecognized directive {line:?}"))),
            }
        }
        match declared {
            Some(k) if k == m.classes.len() => {}
            Some(k) => return Err(Error::Format(format!("manifest declares {k} classes, names {}", m.classes.len()))),
            None => return Err(Error::Format("manifest lacks a classes line".into())),
        }
        if let Some(s) = m.samples.iter().find(|s| s.label >= m.classes.len()) {
            return Err(Error::Format(format!("sample {} has label {} out of range", s.path.display(), s.label)));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("classes {}\n", self.classes.len());
        for (i, c) in self.classes.iter().enumerate() {
            s += &format!("class {i} {c}\n");
        }
        for e in &self.samples {
            s += &format!("sample {} {} {}\n", e.split, e.label, e.path.display());
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Reads every sample of `split`, checking file labels against the manifest.
    pub fn load_split(&self, split: Split) -> Result<Vec<KeypointSequence>> {
        self.samples
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let seq = read_skel(self.root.join(&e.path))?;
                if seq.label != e.label {
                    return Err(Error::Format(format!(
                        "{}: file label {} differs from manifest label {}",
                        e.path.display(),
                        seq.label,
                        e.label
                    )));
                }
                Ok(seq)
            })
            .collect()
    }
}
