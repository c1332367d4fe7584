//! Circuit graphs, paths and skill graphs.
//!
//! Graph files are JSON:
//!
//! ```json
//! { "schema": 1,
//!   "universe": { "layers": 12, "heads": 12, "adjacent_only": false },
//!   "removed_edges": [[l1, i1, l2, i2], ...],
//!   "meta": { ... } }
//! ```
//!
//! Skill graph files:
//!
//! ```json
//! { "schema": 1, "delta": 0.6, "skill": "pvt",
//!   "paths": [{ "nodes": [[0, 13], [1, 6]], "effect": 0.71 }] }
//! ```
//!
//! `universe` and `heads` may be omitted and default to GPT-2 small.

pub mod paths;
pub mod skill;
pub mod universe;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

pub use paths::{enumerate_paths, Adjacency, Path, PathIter};
pub use skill::{SkillGraph, SkillPath};
pub use universe::{EdgeId, EdgeMask, EdgeUniverse};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;

/// A removal mask plus free-form metadata (sample id, search settings, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitGraph {
    pub mask: EdgeMask,
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct CircuitGraphFile {
    schema: u64,
    universe: EdgeUniverse,
    removed_edges: Vec<[usize; 4]>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

impl CircuitGraph {
    /// The complete graph: nothing removed.
    pub fn complete(universe: EdgeUniverse) -> Self {
        Self::from_mask(EdgeMask::empty(universe))
    }

    pub fn from_mask(mask: EdgeMask) -> Self {
        Self {
            mask,
            meta: BTreeMap::new(),
        }
    }

    pub fn universe(&self) -> &EdgeUniverse {
        self.mask.universe()
    }

    pub fn to_json(&self) -> Result<String> {
        let u = *self.universe();
        let file = CircuitGraphFile {
            schema: SCHEMA_VERSION,
            universe: u,
            removed_edges: self
                .mask
                .removed_indices()
                .map(|i| u.edge_at(i).to_array())
                .collect(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CircuitGraphFile = serde_json::from_str(text)?;
        if file.schema != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: file.schema,
                expected: SCHEMA_VERSION,
            });
        }
        let mut mask = EdgeMask::empty(file.universe);
        for e in file.removed_edges {
            mask.remove_edge(EdgeId::from_array(e))?;
        }
        Ok(Self {
            mask,
            meta: file.meta,
        })
    }

    /// Like [`Self::from_json`], additionally requiring a specific universe.
    pub fn from_json_in(text: &str, universe: &EdgeUniverse) -> Result<Self> {
        let g = Self::from_json(text)?;
        if g.universe() != universe {
            return Err(Error::UniverseMismatch(format!(
                "file has {:?}, expected {:?}",
                g.universe(),
                universe
            )));
        }
        Ok(g)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
