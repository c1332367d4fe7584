//! Directed paths through memory circuits and their lazy enumeration.

use serde::{Deserialize, Serialize};

use super::universe::{EdgeId, EdgeMask, EdgeUniverse};
use crate::circuit::layout::CircuitId;
use crate::error::{Error, Result};

/// Ordered circuit sequence with strictly increasing layers; serialises as `[[l, i], ...]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    nodes: Vec<CircuitId>,
}

impl Path {
    /// Builds a path, checking the node invariants against `universe`.
    pub fn new(nodes: Vec<CircuitId>, universe: &EdgeUniverse) -> Result<Self> {
        let p = Self { nodes };
        p.validate(universe)?;
        Ok(p)
    }

    pub(crate) fn new_unchecked(nodes: Vec<CircuitId>) -> Self {
        Self { nodes }
    }

    pub fn validate(&self, universe: &EdgeUniverse) -> Result<()> {
        if self.nodes.len() < 2 {
            return Err(Error::InvalidPath(format!(
                "a path needs at least 2 nodes, got {}",
                self.nodes.len()
            )));
        }
        for e in self.edges() {
            if !universe.contains(e) {
                return Err(Error::InvalidPath(format!("{e} is not an edge of the universe")));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[CircuitId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first(&self) -> CircuitId {
        self.nodes[0]
    }

    pub fn last(&self) -> CircuitId {
        *self.nodes.last().expect("non-empty path")
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.nodes.windows(2).map(|w| EdgeId::new(w[0], w[1]))
    }

    /// Every consecutive pair is a kept edge of `mask`.
    pub fn is_present(&self, mask: &EdgeMask) -> bool {
        self.edges().all(|e| mask.is_kept_edge(e))
    }

    /// Compact JSON node list, e.g. `[[0,13],[1,6]]`; the key used in CSV files.
    pub fn key(&self) -> String {
        serde_json::to_string(&self.nodes).expect("node list serialises")
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        let nodes: Vec<CircuitId> = serde_json::from_str(key)
            .map_err(|e| Error::InvalidPath(format!("bad path key `{key}`: {e}")))?;
        Ok(Self { nodes })
    }
}

/// Kept-edge adjacency by sender slot, receivers sorted ascending.
#[derive(Clone, Debug)]
pub struct Adjacency {
    universe: EdgeUniverse,
    out: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_mask(mask: &EdgeMask) -> Self {
        let universe = *mask.universe();
        let mut out = vec![Vec::new(); universe.n_nodes()];
        for idx in mask.kept_indices() {
            let e = universe.edge_at(idx);
            out[universe.node_slot(e.sender)].push(universe.node_slot(e.receiver));
        }
        for list in &mut out {
            list.sort_unstable();
        }
        Self { universe, out }
    }

    pub fn successors(&self, c: CircuitId) -> impl Iterator<Item = CircuitId> + '_ {
        self.out[self.universe.node_slot(c)]
            .iter()
            .map(|&s| self.universe.node_at_slot(s))
    }
}

/// Lazy preorder walk yielding every present path of 2..=`max_nodes` nodes
/// in lexicographic order of node sequences.
pub struct PathIter {
    adjacency: Adjacency,
    max_nodes: usize,
    next_start: usize,
    stack: Vec<(usize, usize)>,
}

impl Iterator for PathIter {
    type Item = Path;

    fn next(&mut self) -> Option<Path> {
        loop {
            if self.stack.is_empty() {
                if self.next_start >= self.adjacency.out.len() {
                    return None;
                }
                self.stack.push((self.next_start, 0));
                self.next_start += 1;
                continue;
            }
            let depth = self.stack.len();
            let (slot, pos) = *self.stack.last().expect("non-empty stack");
            let children = &self.adjacency.out[slot];
            if depth < self.max_nodes && pos < children.len() {
                self.stack.last_mut().expect("non-empty stack").1 += 1;
                self.stack.push((children[pos], 0));
                let u = &self.adjacency.universe;
                return Some(Path::new_unchecked(
                    self.stack.iter().map(|&(s, _)| u.node_at_slot(s)).collect(),
                ));
            }
            self.stack.pop();
        }
    }
}

pub fn enumerate_paths(mask: &EdgeMask, max_nodes: usize) -> Result<PathIter> {
    if max_nodes < 2 {
        return Err(Error::InvalidArgument(format!(
            "max_nodes must be at least 2, got {max_nodes}"
        )));
    }
    Ok(PathIter {
        adjacency: Adjacency::from_mask(mask),
        max_nodes,
        next_start: 0,
        stack: Vec::new(),
    })
}
