//! `.nlrd` model container.
//!
//! Little-endian layout:
//!
//! | offset | size | field                          |
//! |-------:|-----:|--------------------------------|
//! | 0      | 8    | magic `NLRDMODL`               |
//! | 8      | 4    | format version (u32, = 1)      |
//! | 12     | 4    | stage count T (u32)            |
//! | 16     | 4    | filter size m (u32)            |
//! | 20     | 4    | neighbors L (u32)              |
//! | 24     | 4    | filters per stage N_k (u32)    |
//! | 28     | 4    | RBF centers M (u32)            |
//! | 32     | 4    | matching patch size (u32)      |
//! | 36     | 4    | matching window size (u32)     |
//! | 40     | 8    | first RBF center (f64)         |
//! | 48     | 8    | last RBF center (f64)          |
//! | 56     | 8    | RBF width gamma (f64)          |
//! | 64     | 8    | training noise sigma (f64)     |
//! | 72     | 8    | parameter count P (u64)        |
//! | 80     | 8·P  | parameters (f64), stage by stage in gradient-vector order |

use std::fs;
use std::path::Path;

use crate::diffusion::{DiffusionModel, Hyperparameters, StageParameters};
use crate::error::{Error, Result};
use crate::param::RbfGrid;

pub const MAGIC: &[u8; 8] = b"NLRDMODL";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 80;

pub fn encode_model(model: &DiffusionModel) -> Vec<u8> {
    let h = &model.hyper;
    let params = model.to_vector();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        model.stages.len() as u32,
        h.filter_size as u32,
        h.neighbors as u32,
        h.filters as u32,
        h.rbf.count as u32,
        h.patch as u32,
        h.window as u32,
    ] {
        out.extend(v.to_le_bytes());
    }
    for v in [h.rbf.min, h.rbf.max, h.rbf.gamma, h.sigma] {
        out.extend(v.to_le_bytes());
    }
    out.extend((params.len() as u64).to_le_bytes());
    for v in params {
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> std::result::Result<DiffusionModel, String> {
    if bytes.len() < HEADER_LEN {
        return Err("file shorter than the model header".into());
    }
    if &bytes[..8] != MAGIC {
        return Err("missing NLRDMODL magic".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let stages = u32_at(12) as usize;
    let hyper = Hyperparameters {
        filter_size: u32_at(16) as usize,
        neighbors: u32_at(20) as usize,
        filters: u32_at(24) as usize,
        rbf: RbfGrid {
            count: u32_at(28) as usize,
            min: f64_at(40),
            max: f64_at(48),
            gamma: f64_at(56),
        },
        patch: u32_at(32) as usize,
        window: u32_at(36) as usize,
        sigma: f64_at(64),
    };
    hyper.validate().map_err(|e| e.to_string())?;
    let count = u64::from_le_bytes(bytes[72..80].try_into().unwrap()) as usize;
    if stages == 0 || count != stages * hyper.stage_len() {
        return Err(format!(
            "parameter count {count} does not match {stages} stages of {}",
            hyper.stage_len()
        ));
    }
    if bytes.len() != HEADER_LEN + 8 * count {
        return Err(format!(
            "expected {} bytes of parameters, found {}",
            8 * count,
            bytes.len() - HEADER_LEN
        ));
    }
    let flat: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let stages = flat
        .chunks_exact(hyper.stage_len())
        .map(|c| StageParameters::from_flat(c, &hyper))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    DiffusionModel::new(hyper, stages).map_err(|e| e.to_string())
}

pub fn save_model(model: &DiffusionModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DiffusionModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|reason| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    })
}
