//! Per-layer circuit indexing.
//!
//! With `H` heads a layer has `2H + 5` circuits:
//!
//! | index        | circuit                         |
//! |--------------|---------------------------------|
//! | `0`          | residual pass-through           |
//! | `1..=H`      | attention head `index - 1`      |
//! | `H + 1`      | MLP                             |
//! | `H+2..=2H+1` | head `index - H - 2` then MLP   |
//! | `2H + 2`     | head-synergy compensation       |
//! | `2H + 3`     | residual-synergy compensation   |
//! | `2H + 4`     | bias                            |
//!
//! Indices `1..=2H+1` are the prunable memory circuits. For GPT-2 small
//! (`H = 12`) this gives 29 circuits, 25 of them memory circuits.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CircuitKind {
    Residual,
    Attention { head: usize },
    Mlp,
    AttentionMlp { head: usize },
    HeadSynergy,
    ResidualSynergy,
    Bias,
}

impl CircuitKind {
    pub fn is_memory(self) -> bool {
        matches!(
            self,
            CircuitKind::Attention { .. } | CircuitKind::Mlp | CircuitKind::AttentionMlp { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CircuitLayout {
    pub n_heads: usize,
}

impl CircuitLayout {
    pub const fn new(n_heads: usize) -> Self {
        Self { n_heads }
    }

    pub const fn n_circuits(self) -> usize {
        2 * self.n_heads + 5
    }

    pub const fn n_memory(self) -> usize {
        2 * self.n_heads + 1
    }

    pub const fn attention(self, head: usize) -> usize {
        1 + head
    }

    pub const fn mlp(self) -> usize {
        self.n_heads + 1
    }

    pub const fn attention_mlp(self, head: usize) -> usize {
        self.n_heads + 2 + head
    }

    pub const fn head_synergy(self) -> usize {
        2 * self.n_heads + 2
    }

    pub const fn residual_synergy(self) -> usize {
        2 * self.n_heads + 3
    }

    pub const fn bias(self) -> usize {
        2 * self.n_heads + 4
    }

    pub fn is_memory(self, index: usize) -> bool {
        (1..=self.n_memory()).contains(&index)
    }

    pub fn kind(self, index: usize) -> Option<CircuitKind> {
        let h = self.n_heads;
        Some(match index {
            0 => CircuitKind::Residual,
            i if i <= h => CircuitKind::Attention { head: i - 1 },
            i if i == h + 1 => CircuitKind::Mlp,
            i if i <= 2 * h + 1 => CircuitKind::AttentionMlp { head: i - h - 2 },
            i if i == 2 * h + 2 => CircuitKind::HeadSynergy,
            i if i == 2 * h + 3 => CircuitKind::ResidualSynergy,
            i if i == 2 * h + 4 => CircuitKind::Bias,
            _ => return None,
        })
    }
}

/// `(layer, index)` naming one circuit; serialises as `[layer, index]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct CircuitId {
    pub layer: usize,
    pub index: usize,
}

impl CircuitId {
    pub const fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl From<[usize; 2]> for CircuitId {
    fn from([layer, index]: [usize; 2]) -> Self {
        Self { layer, index }
    }
}

impl From<CircuitId> for [usize; 2] {
    fn from(c: CircuitId) -> Self {
        [c.layer, c.index]
    }
}

impl fmt::Display for CircuitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.layer, self.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpt2_small_layout() {
        let l = CircuitLayout::new(12);
        assert_eq!(l.n_circuits(), 29);
        assert_eq!(l.n_memory(), 25);
        assert_eq!(l.kind(0), Some(CircuitKind::Residual));
        assert_eq!(l.kind(1), Some(CircuitKind::Attention { head: 0 }));
        assert_eq!(l.kind(12), Some(CircuitKind::Attention { head: 11 }));
        assert_eq!(l.kind(13), Some(CircuitKind::Mlp));
        assert_eq!(l.kind(14), Some(CircuitKind::AttentionMlp { head: 0 }));
        assert_eq!(l.kind(25), Some(CircuitKind::AttentionMlp { head: 11 }));
        assert_eq!(l.kind(26), Some(CircuitKind::HeadSynergy));
        assert_eq!(l.kind(27), Some(CircuitKind::ResidualSynergy));
        assert_eq!(l.kind(28), Some(CircuitKind::Bias));
        assert_eq!(l.kind(29), None);
        assert!((1..=25).all(|i| l.is_memory(i)));
        assert!(![0, 26, 27, 28].iter().any(|&i| l.is_memory(i)));
    }

    #[test]
    fn circuit_id_serialises_as_pair() {
        let c = CircuitId::new(0, 13);
        assert_eq!(serde_json::to_string(&c).unwrap(), "[0,13]");
        assert_eq!(serde_json::from_str::<CircuitId>("[1,6]").unwrap(), CircuitId::new(1, 6));
    }
}
