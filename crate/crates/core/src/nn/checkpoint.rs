//! Binary model checkpoints.
//!
//! Layout (little-endian): the 8-byte magic, a `u32` format version, a
//! `u64`-length-prefixed JSON document holding the model config and any
//! caller metadata, a `u32` tensor count, then per tensor a
//! `u32`-length-prefixed UTF-8 name, a `u32` rank, `u64` dims and the
//! `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{AnyModel, ModelConfig, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EEGSPNN\0";
const VERSION: u32 = 1;
/// Refuse absurd lengths from a corrupt header before allocating.
const MAX_BLOB: u64 = 1 << 34;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

fn ck(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), NnError> {
    let io = io_err(path);
    let mut w = BufWriter::new(File::create(path).map_err(&io)?);
    let header = serde_json::to_vec(&CheckpointHeader {
        config: ckpt.model.config(),
        meta: ckpt.meta.clone(),
    })
    .map_err(|e| ck(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC).map_err(&io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(&io)?;
    w.write_u64::<LittleEndian>(header.len() as u64).map_err(&io)?;
    w.write_all(&header).map_err(&io)?;
    let params = ckpt.model.params();
    w.write_u32::<LittleEndian>(params.len() as u32).map_err(&io)?;
    for p in params {
        w.write_u32::<LittleEndian>(p.name.len() as u32).map_err(&io)?;
        w.write_all(p.name.as_bytes()).map_err(&io)?;
        w.write_u32::<LittleEndian>(p.shape.len() as u32).map_err(&io)?;
        for &d in &p.shape {
            w.write_u64::<LittleEndian>(d as u64).map_err(&io)?;
        }
        for &v in p.data {
            w.write_f64::<LittleEndian>(v).map_err(&io)?;
        }
    }
    w.flush().map_err(&io)
}

fn read_len<R: Read>(r: &mut R, wide: bool) -> Result<usize, NnError> {
    let n = if wide {
        r.read_u64::<LittleEndian>()
    } else {
        r.read_u32::<LittleEndian>().map(u64::from)
    }
    .map_err(|e| ck(format!("truncated checkpoint: {e}")))?;
    if n > MAX_BLOB {
        return Err(ck(format!("implausible length {n}")));
    }
    Ok(n as usize)
}

/// Restores a model, checking every tensor's name and shape against the
/// architecture described by the stored config.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let trunc = |e: std::io::Error| ck(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ck("not a model checkpoint (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != VERSION {
        return Err(ck(format!("unsupported checkpoint version {version}")));
    }
    let hlen = read_len(&mut r, true)?;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(trunc)?;
    let header: CheckpointHeader = serde_json::from_slice(&hbuf).map_err(|e| ck(format!("bad header: {e}")))?;
    let mut model = AnyModel::build(&header.config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = model.params().iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    let count = read_len(&mut r, false)?;
    if count != expected.len() {
        return Err(ck(format!("{count} tensors stored, architecture has {}", expected.len())));
    }
    let mut slots = model.params_mut();
    for (slot, (want_name, want_shape)) in slots.iter_mut().zip(&expected) {
        let nlen = read_len(&mut r, false)?;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf).map_err(trunc)?;
        let name = String::from_utf8(nbuf).map_err(|_| ck("tensor name is not UTF-8"))?;
        let rank = read_len(&mut r, false)?;
        let shape = (0..rank).map(|_| read_len(&mut r, true)).collect::<Result<Vec<_>, _>>()?;
        if &name != want_name || &shape != want_shape {
            return Err(ck(format!("tensor {name} {shape:?} where {want_name} {want_shape:?} was expected")));
        }
        for v in slot.iter_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(trunc)?;
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(ck("trailing bytes after the last tensor"));
    }
    Ok(Checkpoint {
        model,
        meta: header.meta,
    })
}
