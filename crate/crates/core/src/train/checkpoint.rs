//! Binary checkpoint format:
//!
//! ```text
//! "SRNW" | u16 version | u16 flags (bit 0: optimizer state) | u32 count
//! count × { u16 name_len | name | u8 dtype (0 = f32) | u8 rank | rank × u32 dim | f32 payload }
//! u32 CRC32 of the tensor records
//! ```
//!
//! All integers and floats are little-endian. Optimizer moments are stored
//! as extra tensors `adam.m/<name>` and `adam.v/<name>`. Configs and counters
//! live in a `key: value` sidecar at `<path>.meta`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::config::{config_pairs, configs_from_pairs, parse_pairs};
use crate::error::{CheckpointError, Error, Result};
use crate::model::{ModelWeights, SrnConfig};
use crate::tensor::Tensor;

use super::{AdamState, TrainConfig};

pub const MAGIC: &[u8; 4] = b"SRNW";
pub const VERSION: u16 = 1;
const FLAG_OPTIMIZER: u16 = 1;
const DTYPE_F32: u8 = 0;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";
const SIDECAR_EXTRA: [&str; 3] = ["step", "epoch", "adam_t"];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SrnConfig,
    pub train: TrainConfig,
    /// Optimizer steps completed.
    pub step: u64,
    /// Epochs completed.
    pub epoch: u64,
    pub weights: ModelWeights<f32>,
    pub adam: Option<AdamState<f32>>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Serializes named tensors. Names are not checked for uniqueness here.
pub fn encode_tensors<'a>(
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
    flags: u16,
) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let count = u32::try_from(tensors.len())
        .map_err(|_| CheckpointError::Malformed("too many tensors".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    let body_start = out.len();
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| CheckpointError::Malformed(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(4);
        for d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| CheckpointError::Malformed("dimension too large".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.reserve(4 * t.len());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[body_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Parses a tensor file into `(flags, tensors)`.
pub fn decode_tensors(
    bytes: &[u8],
) -> Result<(u16, IndexMap<String, Tensor<f32>>), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let flags = r.u16("flags")?;
    let count = r.u32("tensor count")?;
    let body_start = r.pos;
    let mut tensors = IndexMap::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::UnsupportedDtype(dtype));
        }
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > 4 {
            return Err(CheckpointError::Malformed(format!(
                "rank {rank} of `{name}`"
            )));
        }
        let mut shape = [1usize; 4];
        for d in shape[4 - rank..].iter_mut() {
            *d = r.u32("dims")? as usize;
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| CheckpointError::Malformed(format!("shape {shape:?} of `{name}`")))?;
        let payload = r.take(
            numel
                .checked_mul(4)
                .ok_or(CheckpointError::Truncated("payload"))?,
            "payload",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor =
            Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if tensors.contains_key(&name) {
            return Err(CheckpointError::DuplicateName(name));
        }
        tensors.insert(name, tensor);
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(
            "trailing bytes after checksum".into(),
        ));
    }
    if crc32fast::hash(&bytes[body_start..body_end]) != stored {
        return Err(CheckpointError::Checksum);
    }
    Ok((flags, tensors))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes to a temporary sibling and renames, so an interrupted save never
/// leaves a half-written checkpoint behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut records: Vec<(String, &Tensor<f32>)> =
        ckpt.weights.iter().map(|(k, v)| (k.clone(), v)).collect();
    let mut flags = 0;
    if let Some(adam) = &ckpt.adam {
        flags |= FLAG_OPTIMIZER;
        records.extend(adam.m.iter().map(|(k, v)| (format!("{M_PREFIX}{k}"), v)));
        records.extend(adam.v.iter().map(|(k, v)| (format!("{V_PREFIX}{k}"), v)));
    }
    let bytes = encode_tensors(records.iter().map(|(k, v)| (k.as_str(), *v)), flags)?;
    let mut meta: String = config_pairs(&ckpt.model, &ckpt.train)
        .into_iter()
        .map(|(k, v)| format!("{k}: {v}\n"))
        .collect();
    meta.push_str(&format!("step: {}\n", ckpt.step));
    meta.push_str(&format!("epoch: {}\n", ckpt.epoch));
    if let Some(adam) = &ckpt.adam {
        meta.push_str(&format!("adam_t: {}\n", adam.t));
    }
    write_atomic(&sidecar_path(path), meta.as_bytes())?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (flags, tensors) = decode_tensors(&bytes)?;
    let meta_path = sidecar_path(path);
    let meta = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let pairs = parse_pairs(&meta, ':')?;
    let (model, train) = configs_from_pairs(&pairs, &SIDECAR_EXTRA)?;
    let counter = |key: &str| -> Result<u64> {
        match pairs.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid `{key}` in sidecar"))),
            None => Ok(0),
        }
    };
    let (step, epoch) = (counter("step")?, counter("epoch")?);

    let mut weights = Vec::new();
    let (mut m, mut v) = (IndexMap::new(), IndexMap::new());
    for (name, t) in tensors {
        if let Some(base) = name.strip_prefix(M_PREFIX) {
            m.insert(base.to_string(), t);
        } else if let Some(base) = name.strip_prefix(V_PREFIX) {
            v.insert(base.to_string(), t);
        } else {
            weights.push((name, t));
        }
    }
    let weights = ModelWeights::from_tensors(weights)?;
    let adam = if flags & FLAG_OPTIMIZER != 0 {
        let names: HashSet<&str> = weights.names().collect();
        if m.len() != weights.len()
            || v.len() != weights.len()
            || m.keys()
                .chain(v.keys())
                .any(|k| !names.contains(k.as_str()))
        {
            return Err(CheckpointError::Malformed(
                "optimizer moments do not match the weights".into(),
            )
            .into());
        }
        Some(AdamState {
            m,
            v,
            t: counter("adam_t")?,
        })
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        train,
        step,
        epoch,
        weights,
        adam,
    })
}
