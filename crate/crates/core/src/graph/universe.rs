//! The prunable-edge universe and masks over it.
//!
//! Edges run from a memory circuit at layer `l1` to a memory circuit at a
//! later layer `l2 ≥ 1`. Edge indices are receiver-major: receivers in
//! ascending `(layer, index)` order, and within a receiver, senders in
//! ascending `(layer, index)` order. All incoming edges of one receiver are
//! therefore a contiguous index range.

use serde::{Deserialize, Serialize};

use crate::circuit::layout::{CircuitId, CircuitLayout};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeUniverse {
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub adjacent_only: bool,
}

fn default_heads() -> usize {
    12
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId {
    pub sender: CircuitId,
    pub receiver: CircuitId,
}

impl EdgeId {
    pub const fn new(sender: CircuitId, receiver: CircuitId) -> Self {
        Self { sender, receiver }
    }

    pub fn to_array(self) -> [usize; 4] {
        [
            self.sender.layer,
            self.sender.index,
            self.receiver.layer,
            self.receiver.index,
        ]
    }

    pub fn from_array([l1, i1, l2, i2]: [usize; 4]) -> Self {
        Self::new(CircuitId::new(l1, i1), CircuitId::new(l2, i2))
    }
}

impl std::fmt::Display for EdgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} -> {}", self.sender, self.receiver)
    }
}

impl EdgeUniverse {
    pub fn new(layers: usize, heads: usize, adjacent_only: bool) -> Self {
        Self {
            layers,
            heads,
            adjacent_only,
        }
    }

    pub fn layout(&self) -> CircuitLayout {
        CircuitLayout::new(self.heads)
    }

    pub fn n_memory(&self) -> usize {
        self.layout().n_memory()
    }

    /// First sender layer feeding receivers at `layer`.
    pub fn first_sender_layer(&self, layer: usize) -> usize {
        if self.adjacent_only {
            layer.saturating_sub(1)
        } else {
            0
        }
    }

    /// Number of sender layers for receivers at `layer`.
    pub fn sender_span(&self, layer: usize) -> usize {
        if layer == 0 {
            0
        } else if self.adjacent_only {
            1
        } else {
            layer
        }
    }

    /// Incoming edges per receiver at `layer`.
    pub fn fan_in(&self, layer: usize) -> usize {
        self.sender_span(layer) * self.n_memory()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        let m = self.n_memory();
        (1..layer.min(self.layers)).map(|l| m * self.fan_in(l)).sum()
    }

    pub fn len(&self) -> usize {
        self.layer_offset(self.layers)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_memory_node(&self, c: CircuitId) -> bool {
        c.layer < self.layers && self.layout().is_memory(c.index)
    }

    pub fn contains(&self, e: EdgeId) -> bool {
        self.is_memory_node(e.sender)
            && self.is_memory_node(e.receiver)
            && e.receiver.layer >= 1
            && e.sender.layer >= self.first_sender_layer(e.receiver.layer)
            && e.sender.layer < e.receiver.layer
    }

    /// Index range of all edges entering `receiver`.
    pub fn receiver_range(&self, receiver: CircuitId) -> std::ops::Range<usize> {
        debug_assert!(self.is_memory_node(receiver) && receiver.layer >= 1);
        let fan = self.fan_in(receiver.layer);
        let start = self.layer_offset(receiver.layer) + (receiver.index - 1) * fan;
        start..start + fan
    }

    pub fn index_of(&self, e: EdgeId) -> Result<usize> {
        if !self.contains(e) {
            return Err(Error::InvalidEdge(format!(
                "{e} is not a prunable edge of this universe"
            )));
        }
        let m = self.n_memory();
        let base = self.receiver_range(e.receiver).start;
        let rel_layer = e.sender.layer - self.first_sender_layer(e.receiver.layer);
        Ok(base + rel_layer * m + (e.sender.index - 1))
    }

    pub fn edge_at(&self, idx: usize) -> EdgeId {
        assert!(idx < self.len(), "edge index {idx} out of range");
        let m = self.n_memory();
        let mut l2 = 1;
        while self.layer_offset(l2 + 1) <= idx {
            l2 += 1;
        }
        let rel = idx - self.layer_offset(l2);
        let fan = self.fan_in(l2);
        let j = rel / fan + 1;
        let within = rel % fan;
        let l1 = self.first_sender_layer(l2) + within / m;
        let i1 = within % m + 1;
        EdgeId::new(CircuitId::new(l1, i1), CircuitId::new(l2, j))
    }

    /// All edges in canonical index order.
    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        let m = self.n_memory();
        (1..self.layers).flat_map(move |l2| {
            let first = self.first_sender_layer(l2);
            (1..=m).flat_map(move |j| {
                (first..l2).flat_map(move |l1| {
                    (1..=m).map(move |i1| EdgeId::new(CircuitId::new(l1, i1), CircuitId::new(l2, j)))
                })
            })
        })
    }

    /// Index of a memory node among all `layers × n_memory` nodes.
    pub fn node_slot(&self, c: CircuitId) -> usize {
        c.layer * self.n_memory() + (c.index - 1)
    }

    pub fn node_at_slot(&self, slot: usize) -> CircuitId {
        CircuitId::new(slot / self.n_memory(), slot % self.n_memory() + 1)
    }

    pub fn n_nodes(&self) -> usize {
        self.layers * self.n_memory()
    }
}

/// Bitset of removed edges.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeMask {
    universe: EdgeUniverse,
    words: Vec<u64>,
}

impl EdgeMask {
    /// Nothing removed.
    pub fn empty(universe: EdgeUniverse) -> Self {
        Self {
            universe,
            words: vec![0; universe.len().div_ceil(64)],
        }
    }

    /// Everything removed.
    pub fn full(universe: EdgeUniverse) -> Self {
        let mut m = Self::empty(universe);
        for i in 0..universe.len() {
            m.remove(i);
        }
        m
    }

    pub fn universe(&self) -> &EdgeUniverse {
        &self.universe
    }

    pub fn is_removed(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn remove(&mut self, idx: usize) {
        assert!(idx < self.universe.len(), "edge index {idx} out of range");
        self.words[idx / 64] |= 1 << (idx % 64);
    }

    pub fn restore(&mut self, idx: usize) {
        assert!(idx < self.universe.len(), "edge index {idx} out of range");
        self.words[idx / 64] &= !(1 << (idx % 64));
    }

    pub fn remove_edge(&mut self, e: EdgeId) -> Result<()> {
        let idx = self.universe.index_of(e)?;
        self.remove(idx);
        Ok(())
    }

    pub fn is_kept_edge(&self, e: EdgeId) -> bool {
        match self.universe.index_of(e) {
            Ok(idx) => !self.is_removed(idx),
            Err(_) => false,
        }
    }

    pub fn removed_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn kept_count(&self) -> usize {
        self.universe.len() - self.removed_count()
    }

    pub fn any_removed_in(&self, range: std::ops::Range<usize>) -> bool {
        range.into_iter().any(|i| self.is_removed(i))
    }

    pub fn removed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.universe.len()).filter(|&i| self.is_removed(i))
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.universe.len()).filter(|&i| !self.is_removed(i))
    }

    fn check_same(&self, other: &EdgeMask) -> Result<()> {
        if self.universe != other.universe {
            return Err(Error::UniverseMismatch(format!(
                "{:?} vs {:?}",
                self.universe, other.universe
            )));
        }
        Ok(())
    }

    /// Number of edges removed in exactly one of the two masks.
    pub fn xor_count(&self, other: &EdgeMask) -> Result<usize> {
        self.check_same(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Removes every edge that `other` removes.
    pub fn union_removed(&mut self, other: &EdgeMask) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpt2_universe_sizes() {
        assert_eq!(EdgeUniverse::new(12, 12, false).len(), 41_250);
        assert_eq!(EdgeUniverse::new(12, 12, true).len(), 6_875);
    }

    #[test]
    fn index_round_trip_and_order() {
        for adjacent in [false, true] {
            let u = EdgeUniverse::new(4, 2, adjacent);
            let edges: Vec<_> = u.edges().collect();
            assert_eq!(edges.len(), u.len());
            for (i, e) in edges.iter().enumerate() {
                assert_eq!(u.index_of(*e).unwrap(), i);
                assert_eq!(u.edge_at(i), *e);
            }
            let mut sorted = edges.clone();
            sorted.sort_by_key(|e| (e.receiver, e.sender));
            assert_eq!(sorted, edges);
        }
    }

    #[test]
    fn rejects_non_prunable_edges() {
        let u = EdgeUniverse::new(12, 12, false);
        let bad = [
            EdgeId::from_array([1, 3, 1, 4]),
            EdgeId::from_array([2, 3, 1, 4]),
            EdgeId::from_array([0, 26, 1, 4]),
            EdgeId::from_array([0, 0, 1, 4]),
            EdgeId::from_array([0, 3, 12, 4]),
        ];
        for e in bad {
            assert!(u.index_of(e).is_err(), "{e}");
        }
        let adj = EdgeUniverse::new(12, 12, true);
        assert!(adj.index_of(EdgeId::from_array([0, 13, 2, 5])).is_err());
        assert!(u.index_of(EdgeId::from_array([0, 13, 2, 5])).is_ok());
    }

    #[test]
    fn mask_counts() {
        let u = EdgeUniverse::new(3, 1, false);
        let mut a = EdgeMask::empty(u);
        let mut b = EdgeMask::empty(u);
        a.remove(0);
        a.remove(5);
        b.remove(5);
        b.remove(7);
        assert_eq!(a.removed_count(), 2);
        assert_eq!(a.xor_count(&b).unwrap(), 2);
        assert_eq!(EdgeMask::full(u).kept_count(), 0);
        let other = EdgeMask::empty(EdgeUniverse::new(3, 1, true));
        assert!(a.xor_count(&other).is_err());
    }
}
