//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ADGN"                 magic
//! u32                    format version
//! u64                    total file length in bytes
//! u64 + bytes            UTF-8 JSON header {config, state}
//! u64                    tensor count
//! per tensor:
//!   u32 + bytes          UTF-8 name
//!   u8                   value width in bytes (4 or 8)
//!   u32                  rank
//!   u64 * rank           dims
//!   values               raw little-endian floats
//! u32                    CRC32 of every preceding byte
//! ```
//!
//! Network parameters are stored under their own names, optimizer
//! accumulators under `opt/<name>`.

use std::path::{Path, PathBuf};

use adgan_tensor::{Real, RmspropState, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::TrainConfig;
use crate::nn::{Model, NetKind};

pub const MAGIC: &[u8; 4] = b"ADGN";
pub const FORMAT_VERSION: u32 = 1;
const OPT_PREFIX: &str = "opt/";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}: not a checkpoint (bad magic bytes)")]
    BadMagic(PathBuf),
    #[error("{path}: checkpoint format version {found}, this build reads version {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated checkpoint ({actual} of {expected} bytes)")]
    Truncated {
        path: PathBuf,
        actual: usize,
        expected: usize,
    },
    #[error("{path}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Progress counters and the generator state driving batches and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage1_done: u64,
    pub stage2_done: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            stage1_done: 0,
            stage2_done: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn iteration(&self) -> u64 {
        self.stage1_done + self.stage2_done
    }
}

/// RMSProp accumulators of every parameter, per network.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimStates<T> {
    states: [Vec<RmspropState<T>>; 4],
}

fn slot(kind: NetKind) -> usize {
    NetKind::ALL.iter().position(|&k| k == kind).unwrap()
}

impl<T: Real> OptimStates<T> {
    pub fn new(model: &Model<T>) -> Self {
        OptimStates {
            states: NetKind::ALL.map(|kind| {
                model
                    .params(kind)
                    .tensors()
                    .iter()
                    .map(|t| RmspropState::new(t.shape()))
                    .collect()
            }),
        }
    }

    pub fn get(&self, kind: NetKind) -> &[RmspropState<T>] {
        &self.states[slot(kind)]
    }

    pub fn get_mut(&mut self, kind: NetKind) -> &mut [RmspropState<T>] {
        &mut self.states[slot(kind)]
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    state: TrainState,
}

/// Everything needed to resume training or synthesize.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub state: TrainState,
    pub model: Model<T>,
    pub optim: OptimStates<T>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    let width = std::mem::size_of::<T>();
    out.push(width as u8);
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &v in t.data() {
        if width == 4 {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
}

impl<T: Real> Checkpoint<T> {
    /// Serialized file contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            state: self.state.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u64(&mut out, 0);
        put_u64(&mut out, header.len() as u64);
        out.extend_from_slice(&header);
        let count: usize = NetKind::ALL
            .iter()
            .map(|&k| 2 * self.model.params(k).len())
            .sum();
        put_u64(&mut out, count as u64);
        for kind in NetKind::ALL {
            for (name, t) in self.model.params(kind).iter() {
                put_tensor(&mut out, name, t);
            }
        }
        for kind in NetKind::ALL {
            let ps = self.model.params(kind);
            for (i, st) in self.optim.get(kind).iter().enumerate() {
                put_tensor(&mut out, &format!("{OPT_PREFIX}{}", ps.name(i)), st.accumulator());
            }
        }
        let total = out.len() as u64 + 4;
        out[8..16].copy_from_slice(&total.to_le_bytes());
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        // write-then-rename so an interrupted save never clobbers the old file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Parses file contents; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let p = || path.to_path_buf();
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic(p()));
        }
        let truncated = |expected: usize| CheckpointError::Truncated {
            path: p(),
            actual: bytes.len(),
            expected,
        };
        if bytes.len() < 16 {
            return Err(truncated(16));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                path: p(),
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let total = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < total {
            return Err(truncated(total));
        }
        let malformed = |detail: String| CheckpointError::Malformed { path: p(), detail };
        if bytes.len() > total || total < 20 {
            return Err(malformed(format!(
                "file is {} bytes but its header records {total}",
                bytes.len()
            )));
        }
        let body = &bytes[..total - 4];
        let stored = u32::from_le_bytes(bytes[total - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum {
                path: p(),
                stored,
                computed,
            });
        }

        let mut r = Reader { buf: body, pos: 16 };
        let short = |_| malformed("record runs past the end of the file".into());
        let header_len = r.u64().map_err(short)? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len).map_err(short)?)
            .map_err(|e| malformed(format!("header: {e}")))?;
        let mut model = Model::<T>::new(
            &header.config.arch,
            header.config.attributes,
            header.config.resolution,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .map_err(|e| malformed(e.to_string()))?;
        let mut optim = OptimStates::new(&model);
        let mut seen = std::collections::HashSet::new();
        let count = r.u64().map_err(short)?;
        for _ in 0..count {
            let (name, tensor) = r.tensor::<T>().map_err(|e| match e {
                ReadError::Short => malformed("record runs past the end of the file".into()),
                ReadError::Bad(m) => malformed(m),
            })?;
            let (param_name, is_opt) = match name.strip_prefix(OPT_PREFIX) {
                Some(n) => (n.to_string(), true),
                None => (name.clone(), false),
            };
            let kind = NetKind::ALL
                .into_iter()
                .find(|k| param_name.starts_with(&format!("{}.", k.prefix())))
                .ok_or_else(|| malformed(format!("unknown tensor `{name}`")))?;
            let idx = model
                .params(kind)
                .find(&param_name)
                .ok_or_else(|| malformed(format!("unknown tensor `{name}`")))?;
            let expected = model.params(kind).get(idx).shape().to_vec();
            if tensor.shape() != expected.as_slice() {
                return Err(malformed(format!(
                    "tensor `{name}` has shape {:?}, architecture expects {expected:?}",
                    tensor.shape()
                )));
            }
            if !seen.insert(name.clone()) {
                return Err(malformed(format!("tensor `{name}` stored twice")));
            }
            if is_opt {
                optim.get_mut(kind)[idx] = RmspropState::from_accumulator(tensor)
                    .map_err(|e| malformed(format!("`{name}`: {e}")))?;
            } else {
                *model.params_mut(kind).get_mut(idx) = tensor;
            }
        }
        if r.pos != body.len() {
            return Err(malformed("trailing bytes after the last tensor".into()));
        }
        let expected: usize = NetKind::ALL.iter().map(|&k| 2 * model.params(k).len()).sum();
        if seen.len() != expected {
            return Err(malformed(format!(
                "{} of {expected} tensors present",
                seen.len()
            )));
        }
        Ok(Checkpoint {
            config: header.config,
            state: header.state,
            model,
            optim,
        })
    }
}

enum ReadError {
    Short,
    Bad(String),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ReadError> {
        let end = self.pos.checked_add(n).ok_or(ReadError::Short)?;
        if end > self.buf.len() {
            return Err(ReadError::Short);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ReadError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ReadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ReadError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor<T: Real>(&mut self) -> Result<(String, Tensor<T>), ReadError> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| ReadError::Bad("tensor name is not UTF-8".into()))?
            .to_string();
        let width = self.u8()?;
        if width != 4 && width != 8 {
            return Err(ReadError::Bad(format!("`{name}`: value width {width}")));
        }
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(ReadError::Short)?;
        let raw = self.take(numel.checked_mul(width as usize).ok_or(ReadError::Short)?)?;
        let data: Vec<T> = if width == 4 {
            raw.chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()
        };
        let t = Tensor::new(shape, data).map_err(|e| ReadError::Bad(format!("`{name}`: {e}")))?;
        Ok((name, t))
    }
}
