//! Greedy edge removal producing an irreducible circuit graph.
//!
//! Edges are visited once in the configured order. Each is tentatively
//! ablated on top of the removals accepted so far; the removal is kept when
//! the faithfulness metric still accepts the resulting logits.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{AblationStrategy, CircuitEngine};
use crate::error::{Error, Result};
use crate::graph::{CircuitGraph, EdgeMask, EdgeUniverse};
use crate::model_io::{ModelParams, TokenSequence};
use crate::reference::{forward, LogitsRow};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitDiffMode {
    /// Change of the original top-1 token's logit.
    #[default]
    TopToken,
    /// Largest absolute change over the vocabulary.
    MaxAbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// The ordered top-`n` candidates must equal the reference top-`n`.
    Rank { n: usize },
    LogitDiff {
        tau: f64,
        #[serde(default)]
        mode: LogitDiffMode,
    },
    /// `KL(current ‖ trial)` over the final-position distribution.
    Kl { tau: f64 },
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Rank { n: 1 }
    }
}

impl Metric {
    pub const DEFAULT_LOGIT_TAU: f64 = 0.04;
    pub const DEFAULT_KL_TAU: f64 = 0.005;

    pub fn validate(&self) -> Result<()> {
        match *self {
            Metric::Rank { n: 0 } => Err(Error::InvalidArgument("rank metric needs n >= 1".into())),
            Metric::LogitDiff { tau, .. } | Metric::Kl { tau } if !(tau > 0.0) => {
                Err(Error::InvalidArgument(format!("metric threshold must be > 0, got {tau}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Rank { .. } => "rank",
            Metric::LogitDiff { .. } => "logit_diff",
            Metric::Kl { .. } => "kl",
        }
    }

    /// `(accepted, score)` for a trial; the score is the target's rank for
    /// the rank metric and the measured change otherwise.
    pub fn judge<T: Scalar>(
        &self,
        trial: &LogitsRow<T>,
        current: &LogitsRow<T>,
        reference_top: &[u32],
    ) -> (bool, f64) {
        let target = reference_top[0];
        match *self {
            Metric::Rank { n } => {
                let ok = trial.top_k(n) == reference_top[..n.min(reference_top.len())];
                (ok, trial.rank_of(target) as f64)
            }
            Metric::LogitDiff { tau, mode } => {
                let d = match mode {
                    LogitDiffMode::TopToken => (trial.logit(target).as_f64() - current.logit(target).as_f64()).abs(),
                    LogitDiffMode::MaxAbs => trial
                        .values()
                        .iter()
                        .zip(current.values())
                        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                        .fold(0.0, f64::max),
                };
                (d < tau, d)
            }
            Metric::Kl { tau } => {
                let d = current.kl_divergence(trial);
                (d < tau, d)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchOrder {
    /// Receivers by ascending layer then index; senders ascending.
    #[default]
    BreadthAsc,
    /// Receivers by ascending layer, descending index.
    BreadthDesc,
    /// Receivers by descending layer and index.
    ReverseLayers,
    /// Receivers in a seeded random permutation.
    Random { seed: u64 },
    /// Sender-major: each sender's outgoing edges before the next sender's.
    DepthFirst,
}

impl SearchOrder {
    pub fn name(&self) -> &'static str {
        match self {
            SearchOrder::BreadthAsc => "breadth_asc",
            SearchOrder::BreadthDesc => "breadth_desc",
            SearchOrder::ReverseLayers => "reverse_layers",
            SearchOrder::Random { .. } => "random",
            SearchOrder::DepthFirst => "depth_first",
        }
    }

    /// Visiting order as canonical edge indices.
    pub fn edge_order(&self, universe: &EdgeUniverse) -> Vec<usize> {
        let m = universe.n_memory();
        let receivers_asc: Vec<(usize, usize)> = (1..universe.layers)
            .flat_map(|l| (1..=m).map(move |j| (l, j)))
            .collect();
        let receivers: Vec<(usize, usize)> = match *self {
            SearchOrder::BreadthAsc | SearchOrder::DepthFirst => receivers_asc,
            SearchOrder::BreadthDesc => (1..universe.layers)
                .flat_map(|l| (1..=m).rev().map(move |j| (l, j)))
                .collect(),
            SearchOrder::ReverseLayers => receivers_asc.into_iter().rev().collect(),
            SearchOrder::Random { seed } => {
                let mut r = receivers_asc;
                r.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                r
            }
        };
        if let SearchOrder::DepthFirst = self {
            let mut idx: Vec<usize> = (0..universe.len()).collect();
            idx.sort_by_key(|&i| {
                let e = universe.edge_at(i);
                (e.sender, e.receiver)
            });
            return idx;
        }
        receivers
            .into_iter()
            .flat_map(|(l, j)| universe.receiver_range(crate::circuit::CircuitId::new(l, j)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    #[serde(default)]
    pub ablation: AblationStrategy,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub order: SearchOrder,
    #[serde(default)]
    pub adjacent_only: bool,
    #[serde(default)]
    pub record_trace: bool,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        if let AblationStrategy::Noise { variance, .. } = self.ablation {
            if !(variance >= 0.0 && variance.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {variance}")));
            }
        }
        Ok(())
    }

    pub fn universe<T>(&self, params: &ModelParams<T>) -> EdgeUniverse {
        EdgeUniverse::new(params.config.n_layers, params.config.n_heads, self.adjacent_only)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub edge: usize,
    pub accepted: bool,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub edges_tested: usize,
    pub edges_removed: usize,
    pub deleted_fraction: f64,
    pub target_token: u32,
    /// Top-1 of the pruned graph under the search's ablation.
    pub final_top1: u32,
    pub ablation: String,
    pub metric: String,
    pub order: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceStep>>,
}

fn top_n_for(metric: &Metric) -> usize {
    match *metric {
        Metric::Rank { n } => n,
        _ => 1,
    }
}

/// Runs the greedy search on one token sequence.
pub fn greedy_prune<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &TokenSequence,
    config: &PruneConfig,
    sample_id: u64,
) -> Result<(CircuitGraph, PruneReport)> {
    config.validate()?;
    let start = Instant::now();
    let reference = forward(params, tokens)?;
    let reference_top = reference.top_k(top_n_for(&config.metric));
    let universe = config.universe(params);
    let engine = CircuitEngine::new(params, tokens, universe, config.ablation, sample_id)?;

    let mut mask = EdgeMask::empty(universe);
    let mut acts = engine.run(&mask)?;
    let mut current = engine.logits(&acts.final_residual)?;
    let mut trace = config.record_trace.then(Vec::new);
    let order = config.order.edge_order(&universe);
    for &idx in &order {
        mask.remove(idx);
        let suffix = engine.trial(&acts, &mask, universe.edge_at(idx))?;
        let trial = engine.logits(&suffix.final_residual)?;
        let (accepted, score) = config.metric.judge(&trial, &current, &reference_top);
        if accepted {
            acts.apply(suffix);
            current = trial;
        } else {
            mask.restore(idx);
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceStep {
                edge: idx,
                accepted,
                score,
            });
        }
    }

    let removed = mask.removed_count();
    let report = PruneReport {
        edges_tested: order.len(),
        edges_removed: removed,
        deleted_fraction: if universe.is_empty() { 0.0 } else { removed as f64 / universe.len() as f64 },
        target_token: reference_top[0],
        final_top1: current.argmax(),
        ablation: config.ablation.name().into(),
        metric: config.metric.name().into(),
        order: config.order.name().into(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        trace,
    };
    let mut graph = CircuitGraph::from_mask(mask);
    graph.meta.insert("sample_id".into(), sample_id.into());
    graph.meta.insert("target_token".into(), report.target_token.into());
    graph.meta.insert("config".into(), serde_json::to_value(config)?);
    Ok((graph, report))
}

/// Prunes every sequence independently, in parallel; results keep input order.
pub fn prune_corpus<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &[TokenSequence],
    config: &PruneConfig,
) -> Result<Vec<(CircuitGraph, PruneReport)>> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, t)| greedy_prune(params, t, config, i as u64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub order: String,
    pub mean_deleted_fraction: f64,
    /// Mean count of edges on which the mask differs from the first config.
    pub mean_hamming_to_baseline: f64,
    /// Mean percentage Hamming distance to the first config.
    pub mean_hp_to_baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderComparison {
    pub rows: Vec<OrderRow>,
    /// `pairwise_hp[a][b]`: mean percentage Hamming distance between configs `a` and `b`.
    pub pairwise_hp: Vec<Vec<f64>>,
}

pub fn compare_search_orders<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &[TokenSequence],
    configs: &[PruneConfig],
) -> Result<OrderComparison> {
    if configs.len() < 2 {
        return Err(Error::InvalidArgument("compare at least two configurations".into()));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let u0 = configs[0].universe(params);
    if let Some(c) = configs.iter().find(|c| c.universe(params) != u0) {
        return Err(Error::UniverseMismatch(format!(
            "config {:?} does not share the universe {:?}",
            c.order, u0
        )));
    }
    let runs: Vec<Vec<(CircuitGraph, PruneReport)>> = configs
        .iter()
        .map(|c| prune_corpus(params, corpus, c))
        .collect::<Result<_>>()?;
    let n = corpus.len() as f64;
    let mut pairwise_hp = vec![vec![0.0; configs.len()]; configs.len()];
    for a in 0..configs.len() {
        for b in 0..configs.len() {
            let mut total = 0.0;
            for s in 0..corpus.len() {
                total += crate::analytics::hamming_pct(&runs[a][s].0, &runs[b][s].0)?;
            }
            pairwise_hp[a][b] = total / n;
        }
    }
    let mut rows = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let mut ham = 0.0;
        for s in 0..corpus.len() {
            ham += runs[i][s].0.mask.xor_count(&runs[0][s].0.mask)? as f64;
        }
        rows.push(OrderRow {
            order: c.order.name().into(),
            mean_deleted_fraction: runs[i].iter().map(|r| r.1.deleted_fraction).sum::<f64>() / n,
            mean_hamming_to_baseline: ham / n,
            mean_hp_to_baseline: pairwise_hp[i][0],
        });
    }
    Ok(OrderComparison { rows, pairwise_hp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::masked_forward;
    use crate::model_io::ModelConfig;

    fn toy() -> ModelParams<f64> {
        ModelParams::random(ModelConfig::toy(2, 2, 16, 19), 8, 0.4).unwrap()
    }

    #[test]
    fn orders_are_permutations() {
        let u = EdgeUniverse::new(4, 2, false);
        for order in [
            SearchOrder::BreadthAsc,
            SearchOrder::BreadthDesc,
            SearchOrder::ReverseLayers,
            SearchOrder::Random { seed: 4 },
            SearchOrder::DepthFirst,
        ] {
            let mut o = order.edge_order(&u);
            o.sort_unstable();
            assert_eq!(o, (0..u.len()).collect::<Vec<_>>(), "{order:?}");
        }
        assert_eq!(SearchOrder::BreadthAsc.edge_order(&u), (0..u.len()).collect::<Vec<_>>());
        let df = SearchOrder::DepthFirst.edge_order(&u);
        assert_eq!(u.edge_at(df[0]).sender, crate::circuit::CircuitId::new(0, 1));
        assert_eq!(u.edge_at(df[1]).sender, crate::circuit::CircuitId::new(0, 1));
    }

    #[test]
    fn rank_prune_is_faithful_and_monotone() {
        let p = toy();
        let tokens = TokenSequence::new(vec![4, 7, 1, 12, 12]);
        let config = PruneConfig {
            record_trace: true,
            ..Default::default()
        };
        let (g, report) = greedy_prune(&p, &tokens, &config, 0).unwrap();
        let target = forward(&p, &tokens).unwrap().argmax();
        assert_eq!(report.target_token, target);
        let (logits, _) = masked_forward(&p, &tokens, &g.mask, AblationStrategy::Zero, 0).unwrap();
        assert_eq!(logits.argmax(), target);
        let trace = report.trace.unwrap();
        assert_eq!(trace.len(), g.universe().len());
        assert_eq!(trace.iter().filter(|s| s.accepted).count(), report.edges_removed);
        assert!(trace.iter().filter(|s| s.accepted).all(|s| s.score == 1.0));
        assert!(trace.iter().filter(|s| !s.accepted).all(|s| s.score > 1.0));
    }

    #[test]
    fn deterministic_and_order_comparison() {
        let p = toy();
        let corpus = vec![TokenSequence::new(vec![1, 2, 3]), TokenSequence::new(vec![5, 5])];
        let c = PruneConfig::default();
        let a = greedy_prune(&p, &corpus[0], &c, 0).unwrap();
        let b = greedy_prune(&p, &corpus[0], &c, 0).unwrap();
        assert_eq!(a.0, b.0);
        let configs = [c, PruneConfig { order: SearchOrder::DepthFirst, ..c }, c];
        let cmp = compare_search_orders(&p, &corpus, &configs).unwrap();
        assert_eq!(cmp.rows[0].mean_hamming_to_baseline, 0.0);
        assert_eq!(cmp.pairwise_hp[0][2], 0.0);
        assert_eq!(cmp.pairwise_hp[1][0], cmp.pairwise_hp[0][1]);
        let bad = [c, PruneConfig { adjacent_only: true, ..c }];
        assert!(matches!(compare_search_orders(&p, &corpus, &bad), Err(Error::UniverseMismatch(_))));
    }

    #[test]
    fn continuous_metrics_accept_within_tau() {
        let p = toy();
        let tokens = TokenSequence::new(vec![3, 9, 2]);
        for metric in [
            Metric::LogitDiff { tau: 0.04, mode: LogitDiffMode::TopToken },
            Metric::LogitDiff { tau: 0.04, mode: LogitDiffMode::MaxAbs },
            Metric::Kl { tau: 0.005 },
        ] {
            let config = PruneConfig { metric, record_trace: true, ..Default::default() };
            let (_, report) = greedy_prune(&p, &tokens, &config, 0).unwrap();
            let tau = match metric {
                Metric::LogitDiff { tau, .. } | Metric::Kl { tau } => tau,
                _ => unreachable!(),
            };
            for s in report.trace.unwrap() {
                assert_eq!(s.accepted, s.score < tau);
            }
        }
        assert!(Metric::Kl { tau: 0.0 }.validate().is_err());
        assert!(Metric::Rank { n: 0 }.validate().is_err());
    }
}
