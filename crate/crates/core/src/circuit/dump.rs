//! Raw activation dump: a little-endian `f32` blob plus a JSON header.
//!
//! The header lists one entry per matrix in blob order: every circuit
//! `0..=2H+4` of every layer, then the final residual (`"final": true`).
//! Each matrix is `n_tokens × d_model`, row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::CircuitActivations;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub layer: usize,
    pub index: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub r#final: bool,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub dtype: String,
    pub n_tokens: usize,
    pub d_model: usize,
    pub entries: Vec<DumpEntry>,
}

/// Writes `<stem>.bin` and `<stem>.json` next to each other.
pub fn write_dump<T: Scalar>(acts: &CircuitActivations<T>, stem: &Path) -> Result<DumpHeader> {
    let (n, d) = acts.final_residual.shape();
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    let mut push = |layer: usize, index: usize, fin: bool, values: &[T], blob: &mut Vec<u8>| {
        entries.push(DumpEntry {
            layer,
            index,
            r#final: fin,
            offset: blob.len(),
        });
        for v in values {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    };
    for (l, state) in acts.layers.iter().enumerate() {
        for i in 0..=state.outputs.len() {
            push(l, i, false, state.output(i).as_slice(), &mut blob);
        }
    }
    push(acts.layers.len(), 0, true, acts.final_residual.as_slice(), &mut blob);
    let header = DumpHeader {
        dtype: "f32".into(),
        n_tokens: n,
        d_model: d,
        entries,
    };
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    fs::write(&json, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| Error::io(&json, e))?;
    Ok(header)
}
