//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "DGLABCKP"
//! version      u32      1
//! policy kind  u32      0 = linear, 1 = tabular
//! vocab size   u32
//! answer count u32
//! window       u32      (0 for tabular)
//! buckets      u32      (0 for tabular)
//! arith base   u32      (0 for tabular)
//! feature dim  u32      (V for tabular)
//! param count  u64
//! params       f64 x param count
//! ```

use std::path::Path;

use super::{FeatureConfig, LinearSoftmax, Policy, PolicyModel, TabularPolicy};
use crate::error::{Error, Result};
use crate::mdp::Vocabulary;

pub const MAGIC: &[u8; 8] = b"DGLABCKP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 8 + 8;

pub fn encode(policy: &PolicyModel) -> Vec<u8> {
    let vocab = policy.vocab();
    let (kind, cfg, dim) = match policy {
        PolicyModel::Linear(p) => (0u32, Some(*p.features().config()), p.features().dim()),
        PolicyModel::Tabular(_) => (1u32, None, vocab.size()),
    };
    let params = policy.params();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(MAGIC);
    for x in [
        VERSION,
        kind,
        vocab.size() as u32,
        vocab.answer_count() as u32,
        cfg.map_or(0, |c| c.window as u32),
        cfg.map_or(0, |c| c.position_buckets as u32),
        cfg.map_or(0, |c| c.arith_base as u32),
        dim as u32,
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<PolicyModel> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic or truncated header)".into()));
    }
    let version = u32_at(bytes, 0);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = u32_at(bytes, 1);
    let vocab = Vocabulary::with_answer_count(u32_at(bytes, 2) as usize, u32_at(bytes, 3) as usize)
        .map_err(|e| Error::Format(e.to_string()))?;
    let cfg = FeatureConfig {
        window: u32_at(bytes, 4) as usize,
        position_buckets: u32_at(bytes, 5) as usize,
        arith_base: u32_at(bytes, 6) as usize,
    };
    let dim = u32_at(bytes, 7) as usize;
    let count = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + 8 * count {
        return Err(Error::Format(format!(
            "payload length {} does not match {count} parameters",
            bytes.len() - HEADER_LEN
        )));
    }
    let params: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = match kind {
        0 => PolicyModel::Linear(
            LinearSoftmax::from_params(vocab, cfg, params).map_err(|e| Error::Format(e.to_string()))?,
        ),
        1 => PolicyModel::Tabular(TabularPolicy::from_params(vocab, params)?),
        k => return Err(Error::Format(format!("unknown policy kind {k}"))),
    };
    let actual_dim = match &model {
        PolicyModel::Linear(p) => p.features().dim(),
        PolicyModel::Tabular(_) => vocab.size(),
    };
    if actual_dim != dim {
        return Err(Error::Format(format!(
            "header feature dim {dim} disagrees with layout dim {actual_dim}"
        )));
    }
    Ok(model)
}

/// Decode and require the same architecture as `expected`.
pub fn decode_matching(bytes: &[u8], expected: &PolicyModel) -> Result<PolicyModel> {
    let m = decode(bytes)?;
    if !m.same_shape(expected) {
        return Err(Error::Format(format!(
            "checkpoint dims ({} {}, {} params) do not match expected ({} {}, {} params)",
            m.kind(),
            m.vocab().size(),
            m.num_params(),
            expected.kind(),
            expected.vocab().size(),
            expected.num_params()
        )));
    }
    Ok(m)
}

pub fn save(path: &Path, policy: &PolicyModel) -> Result<()> {
    std::fs::write(path, encode(policy)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PolicyModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
