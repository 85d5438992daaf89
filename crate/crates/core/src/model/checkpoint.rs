//! Binary checkpoint: magic, version, a JSON header, then raw little-endian
//! `f64` arrays (parameters, then optimizer moments). Byte-level layout is in
//! `docs/formats.md`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::train::{OptimizerState, TrainConfig};
use super::{Architecture, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"QFLOWCKP";
// headers are small; anything larger is a corrupt length field
const MAX_HEADER_BYTES: u64 = 1 << 26;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Configuration the parameters were trained with; its seed and
    /// optimizer are what a resumed run continues with.
    pub train: TrainConfig,
    pub epoch: usize,
    pub loss_trace: Vec<f64>,
    pub optimizer_state: OptimizerState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    param_count: usize,
    train: TrainConfig,
    epoch: usize,
    loss_trace: Vec<f64>,
    optimizer_step: u64,
    first_moment_len: usize,
    second_moment_len: usize,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    ckpt.params.check()?;
    if !ckpt.params.is_finite() {
        return Err(Error::Checkpoint("parameters contain non-finite values".into()));
    }
    if ckpt.loss_trace.iter().any(|l| !l.is_finite()) {
        return Err(Error::Checkpoint("loss trace contains non-finite values".into()));
    }
    let header = Header {
        architecture: ckpt.params.architecture().clone(),
        param_count: ckpt.params.len(),
        train: ckpt.train.clone(),
        epoch: ckpt.epoch,
        loss_trace: ckpt.loss_trace.clone(),
        optimizer_step: ckpt.optimizer_state.step,
        first_moment_len: ckpt.optimizer_state.first.len(),
        second_moment_len: ckpt.optimizer_state.second.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&json).map_err(io_err)?;
    let arrays = [
        ckpt.params.values(),
        &ckpt.optimizer_state.first,
        &ckpt.optimizer_state.second,
    ];
    for arr in arrays {
        let mut buf = Vec::with_capacity(arr.len() * 8);
        for v in arr {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated parameter block: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short to be a checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(io_err)?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut l = [0u8; 8];
    r.read_exact(&mut l).map_err(io_err)?;
    let len = u64::from_le_bytes(l);
    if len > MAX_HEADER_BYTES {
        return Err(Error::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.architecture.validate()?;
    if header.architecture.param_count() != header.param_count {
        return Err(Error::Architecture(format!(
            "header declares {} parameters but the architecture needs {}",
            header.param_count,
            header.architecture.param_count()
        )));
    }
    let values = read_f64s(&mut r, header.param_count)?;
    let first = read_f64s(&mut r, header.first_moment_len)?;
    let second = read_f64s(&mut r, header.second_moment_len)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io_err)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    let params = ModelParams::from_values(header.architecture, values)?;
    params.check()?;
    Ok(Checkpoint {
        params,
        train: header.train,
        epoch: header.epoch,
        loss_trace: header.loss_trace,
        optimizer_state: OptimizerState {
            step: header.optimizer_step,
            first,
            second,
        },
    })
}
