//! Quantitative comparisons of circuit and skill graphs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{masked_forward, AblationStrategy, CircuitId};
use crate::error::{Error, Result};
use crate::graph::{CircuitGraph, EdgeId, EdgeMask, EdgeUniverse, Path, SkillGraph};
use crate::model_io::{ModelParams, TokenSequence};
use crate::scalar::Scalar;

fn same_universe(a: &EdgeUniverse, b: &EdgeUniverse) -> Result<()> {
    if a != b {
        return Err(Error::UniverseMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Percentage Hamming distance between kept-edge sets: `|K1 Δ K2| / (|K1| + |K2|) · 100`.
pub fn hamming_pct_masks(a: &EdgeMask, b: &EdgeMask) -> Result<f64> {
    let diff = a.xor_count(b)?;
    let total = a.kept_count() + b.kept_count();
    Ok(if total == 0 { 0.0 } else { diff as f64 / total as f64 * 100.0 })
}

pub fn hamming_pct(a: &CircuitGraph, b: &CircuitGraph) -> Result<f64> {
    hamming_pct_masks(&a.mask, &b.mask)
}

/// Fraction of edges in `a` that are also in `b`.
pub fn overlap_edges(a: &BTreeSet<EdgeId>, b: &BTreeSet<EdgeId>) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::InvalidArgument("overlap of an empty edge set is undefined".into()));
    }
    Ok(a.intersection(b).count() as f64 / a.len() as f64)
}

/// Overlap of the edge sets induced by the two graphs' paths.
pub fn overlap(a: &SkillGraph, b: &SkillGraph) -> Result<f64> {
    same_universe(&a.universe, &b.universe)?;
    overlap_edges(&a.edge_set(), &b.edge_set())
}

/// Number of paths ending at `node`, summed over `graphs`.
pub fn paths_received(graphs: &[SkillGraph], node: CircuitId) -> usize {
    graphs
        .iter()
        .map(|g| g.paths.iter().filter(|p| p.nodes.last() == node).count())
        .sum()
}

/// `(N⁺ − N⁻) / N⁺` clamped to `[0, 1]`, with `N±` the paths received by
/// `node` in the correct and incorrect graphs.
pub fn absence_rate(correct: &[SkillGraph], incorrect: &[SkillGraph], node: CircuitId) -> Result<f64> {
    let plus = paths_received(correct, node);
    let minus = paths_received(incorrect, node);
    absence_rate_from_counts(plus, minus).map_err(|_| {
        Error::InvalidArgument(format!("node {node} receives no path in the correct graphs"))
    })
}

pub fn absence_rate_from_counts(plus: usize, minus: usize) -> Result<f64> {
    if plus == 0 {
        return Err(Error::InvalidArgument("N+ is zero".into()));
    }
    Ok(((plus as f64 - minus as f64) / plus as f64).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverHistogram {
    pub counts: BTreeMap<CircuitId, usize>,
    pub threshold: usize,
    /// Receivers with at least `threshold` incoming paths, sorted by `(layer, index)`.
    pub key_receivers: Vec<CircuitId>,
}

pub const DEFAULT_KEY_RECEIVER_THRESHOLD: usize = 10;

pub fn receiver_histogram(graph: &SkillGraph, threshold: usize) -> ReceiverHistogram {
    let mut counts = BTreeMap::new();
    for p in &graph.paths {
        *counts.entry(p.nodes.last()).or_insert(0) += 1;
    }
    let key_receivers = counts
        .iter()
        .filter(|&(_, &c)| c >= threshold)
        .map(|(&n, _)| n)
        .collect();
    ReceiverHistogram {
        counts,
        threshold,
        key_receivers,
    }
}

impl ReceiverHistogram {
    /// `layer,index,count,key` rows sorted by node.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "index", "count", "key"])?;
        for (n, c) in &self.counts {
            w.write_record([
                n.layer.to_string(),
                n.index.to_string(),
                c.to_string(),
                (*c >= self.threshold).to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).expect("utf-8 csv"))
    }
}

/// One sample of a removal experiment: its tokens, expected top-1 and pruned graph.
#[derive(Clone, Debug)]
pub struct RemovalSample {
    pub tokens: TokenSequence,
    pub expected: u32,
    pub base: CircuitGraph,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Removal {
    Nothing,
    /// Every edge on any of these paths.
    Paths(Vec<Path>),
    /// `k` distinct edges drawn per sample from the edges its base graph keeps.
    RandomEdges { k: usize, seed: u64 },
    /// Edges of `a` that are not edges of `b`.
    Difference(Box<SkillGraph>, Box<SkillGraph>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalOutcome {
    pub accuracy: f64,
    pub correct: Vec<bool>,
    /// Edges actually removed from each sample's base graph.
    pub removed: Vec<usize>,
}

fn removal_edges(removal: &Removal, base: &EdgeMask, sample: usize) -> Result<Vec<usize>> {
    let u = base.universe();
    let from_set = |edges: BTreeSet<EdgeId>| -> Result<Vec<usize>> {
        edges.into_iter().map(|e| u.index_of(e)).collect()
    };
    match removal {
        Removal::Nothing => Ok(Vec::new()),
        Removal::Paths(paths) => from_set(paths.iter().flat_map(|p| p.edges()).collect()),
        Removal::Difference(a, b) => {
            same_universe(&a.universe, u)?;
            same_universe(&b.universe, u)?;
            let be = b.edge_set();
            from_set(a.edge_set().into_iter().filter(|e| !be.contains(e)).collect())
        }
        Removal::RandomEdges { k, seed } => {
            let kept: Vec<usize> = base.kept_indices().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(crate::circuit::ablation::noise_seed(*seed, sample as u64, 0));
            let mut chosen: Vec<usize> = kept.choose_multiple(&mut rng, (*k).min(kept.len())).copied().collect();
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}

/// Accuracy after deleting the removal's edges from every sample's graph.
pub fn removal_experiment<T: Scalar>(
    params: &ModelParams<T>,
    samples: &[RemovalSample],
    removal: &Removal,
) -> Result<RemovalOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("removal experiment needs samples".into()));
    }
    let results: Vec<(bool, usize)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut mask = s.base.mask.clone();
            let edges = removal_edges(removal, &mask, i)?;
            let mut removed = 0;
            for idx in edges {
                if !mask.is_removed(idx) {
                    mask.remove(idx);
                    removed += 1;
                }
            }
            let (logits, _) = masked_forward(params, &s.tokens, &mask, AblationStrategy::Zero, i as u64)?;
            Ok((logits.argmax() == s.expected, removed))
        })
        .collect::<Result<_>>()?;
    let correct: Vec<bool> = results.iter().map(|r| r.0).collect();
    Ok(RemovalOutcome {
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
        correct,
        removed: results.iter().map(|r| r.1).collect(),
    })
}

/// Double-edge swaps that keep every node's in- and out-degree and stay
/// inside the universe.
pub fn degree_preserving_shuffle(
    edges: &BTreeSet<EdgeId>,
    universe: &EdgeUniverse,
    seed: u64,
    swaps_per_edge: usize,
) -> BTreeSet<EdgeId> {
    let mut list: Vec<EdgeId> = edges.iter().copied().collect();
    let mut set = edges.clone();
    if list.len() < 2 {
        return set;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..swaps_per_edge * list.len() {
        let a = rng.random_range(0..list.len());
        let b = rng.random_range(0..list.len());
        if a == b {
            continue;
        }
        let (ea, eb) = (list[a], list[b]);
        let na = EdgeId::new(ea.sender, eb.receiver);
        let nb = EdgeId::new(eb.sender, ea.receiver);
        if !universe.contains(na) || !universe.contains(nb) || set.contains(&na) || set.contains(&nb) {
            continue;
        }
        set.remove(&ea);
        set.remove(&eb);
        set.insert(na);
        set.insert(nb);
        list[a] = na;
        list[b] = nb;
    }
    set
}
