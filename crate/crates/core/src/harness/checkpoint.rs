//! `SEMKD1` checkpoints: magic, format version, a JSON header describing the
//! run state, then every parameter tensor as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::PrototypeMemory;
use crate::model::{ClassifierHead, FrozenFlags, ModelConfig, ModelState, Params};
use crate::semantics::SuperclassMap;
use crate::sessions::InputShape;
use crate::trainer::RunState;

pub const MAGIC: &[u8; 6] = b"SEMKD1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    session_index: usize,
    seed: u64,
    model_config: ModelConfig,
    input_shape: InputShape,
    semantic_dim: usize,
    frozen: FrozenFlags,
    tensor_lengths: Vec<usize>,
    head: ClassifierHead,
    memory: PrototypeMemory,
    superclasses: SuperclassMap,
}

fn model_tensors(model: &ModelState) -> Vec<&[f64]> {
    let mut out = model.backbone.tensors();
    out.extend(model.fusion.tensors());
    out
}

fn model_tensors_mut(model: &mut ModelState) -> Vec<&mut [f64]> {
    let mut out = model.backbone.tensors_mut();
    out.extend(model.fusion.tensors_mut());
    out
}

pub fn write_checkpoint(state: &RunState, mut out: impl Write) -> Result<()> {
    let tensors = model_tensors(&state.model);
    let header = Header {
        session_index: state.session_index,
        seed: state.seed,
        model_config: state.model.config.clone(),
        input_shape: state.model.input_shape,
        semantic_dim: state.model.semantic_dim,
        frozen: state.model.frozen,
        tensor_lengths: tensors.iter().map(|t| t.len()).collect(),
        head: state.head.clone(),
        memory: state.memory.clone(),
        superclasses: state.superclasses.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(18 + json.len() + 8 * tensors.iter().map(|t| t.len()).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in tensors {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<RunState> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let truncated = || Error::Checkpoint("truncated checkpoint".into());
    if bytes.len() < 18 || &bytes[..6] != MAGIC {
        return Err(Error::Checkpoint("not a SEMKD1 checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(18..18 + header_len).ok_or_else(truncated)?;
    let header: Header = serde_json::from_slice(body)?;

    let mut model = ModelState::new(&header.model_config, header.input_shape, header.semantic_dim, 0)?;
    model.frozen = header.frozen;
    let mut offset = 18 + header_len;
    {
        let tensors = model_tensors_mut(&mut model);
        if tensors.len() != header.tensor_lengths.len()
            || tensors.iter().zip(&header.tensor_lengths).any(|(t, &n)| t.len() != n)
        {
            return Err(Error::Checkpoint("tensor layout does not match the model config".into()));
        }
        for t in tensors {
            for v in t.iter_mut() {
                let raw = bytes.get(offset..offset + 8).ok_or_else(truncated)?;
                *v = f64::from_le_bytes(raw.try_into().expect("8 bytes"));
                offset += 8;
            }
        }
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(RunState {
        model,
        head: header.head,
        memory: header.memory,
        superclasses: header.superclasses,
        session_index: header.session_index,
        seed: header.seed,
        loss_log: Vec::new(),
        updates_in_progress: false,
    })
}

pub fn save_checkpoint(state: &RunState, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(state, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<RunState> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
