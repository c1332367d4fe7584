//! Skill graphs: thresholded path sets with per-path skill effects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::paths::Path;
use super::universe::{EdgeId, EdgeMask, EdgeUniverse};
use super::SCHEMA_VERSION;
use crate::circuit::layout::CircuitId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillPath {
    pub nodes: Path,
    pub effect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillGraph {
    pub universe: EdgeUniverse,
    pub delta: f64,
    pub skill: Option<String>,
    pub sample_count: Option<usize>,
    pub paths: Vec<SkillPath>,
}

#[derive(Serialize, Deserialize)]
struct SkillGraphFile {
    schema: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    universe: Option<EdgeUniverse>,
    delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skill: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_count: Option<usize>,
    paths: Vec<SkillPath>,
}

impl SkillGraph {
    pub fn empty(universe: EdgeUniverse, delta: f64) -> Self {
        Self {
            universe,
            delta,
            skill: None,
            sample_count: None,
            paths: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Format(format!("delta {} outside [0, 1)", self.delta)));
        }
        for p in &self.paths {
            p.nodes.validate(&self.universe)?;
            if !(p.effect > self.delta && p.effect <= 1.0) {
                return Err(Error::Format(format!(
                    "path {} has effect {} outside ({}, 1]",
                    p.nodes.key(),
                    p.effect,
                    self.delta
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Union of edges over all paths.
    pub fn edge_set(&self) -> BTreeSet<EdgeId> {
        self.paths.iter().flat_map(|p| p.nodes.edges()).collect()
    }

    /// Mask keeping exactly the edges used by some path.
    pub fn to_mask(&self) -> EdgeMask {
        let mut mask = EdgeMask::full(self.universe);
        for e in self.edge_set() {
            let idx = self.universe.index_of(e).expect("validated path edge");
            mask.restore(idx);
        }
        mask
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SkillGraphFile {
            schema: SCHEMA_VERSION,
            universe: Some(self.universe),
            delta: self.delta,
            skill: self.skill.clone(),
            sample_count: self.sample_count,
            paths: self.paths.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    /// Parses and validates; files without a `universe` default to 12 layers × 12 heads.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SkillGraphFile = serde_json::from_str(text)?;
        if file.schema != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: file.schema,
                expected: SCHEMA_VERSION,
            });
        }
        let g = Self {
            universe: file.universe.unwrap_or(EdgeUniverse::new(12, 12, false)),
            delta: file.delta,
            skill: file.skill,
            sample_count: file.sample_count,
            paths: file.paths,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Graphviz text; edges carry the largest effect of any path (with effect
    /// above `effect_floor`) running through them.
    pub fn export_dot(&self, effect_floor: f64) -> String {
        let mut edges: BTreeMap<EdgeId, f64> = BTreeMap::new();
        let mut nodes: BTreeSet<CircuitId> = BTreeSet::new();
        for p in self.paths.iter().filter(|p| p.effect > effect_floor) {
            nodes.extend(p.nodes.nodes().iter().copied());
            for e in p.nodes.edges() {
                let slot = edges.entry(e).or_insert(p.effect);
                *slot = slot.max(p.effect);
            }
        }
        let name = |c: &CircuitId| format!("\"{}_{}\"", c.layer, c.index);
        let mut out = String::new();
        let title = self.skill.as_deref().unwrap_or("skill");
        let _ = writeln!(out, "digraph \"{}\" {{", title.replace('"', "'"));
        let _ = writeln!(out, "  rankdir=BT;");
        let _ = writeln!(out, "  node [shape=box];");
        for c in &nodes {
            let _ = writeln!(out, "  {} [label=\"[{}, {}]\"];", name(c), c.layer, c.index);
        }
        for (e, eff) in &edges {
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{:.2}\"];",
                name(&e.sender),
                name(&e.receiver),
                eff
            );
        }
        out.push_str("}\n");
        out
    }
}
