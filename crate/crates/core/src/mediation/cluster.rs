//! Bisection clustering of samples by which high-effect skill paths they exhibit.
//!
//! Each round ranks the candidate paths by skill effect on the current
//! subset, keeps the top fraction, and splits the subset with 2-means on the
//! per-sample binary presence vectors. The split is accepted when the
//! clusters' mean effects differ by at least `min_gap` and both clusters
//! have at least `min_cluster` samples; the high cluster is then split again.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::effects::{skill_presence, EffectTable};
use super::triads::TriadGraphs;
use crate::error::{Error, Result};
use crate::graph::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub top_fraction: f64,
    pub min_gap: f64,
    pub min_cluster: usize,
    pub seed: u64,
    pub max_rounds: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            top_fraction: 0.10,
            min_gap: 0.1,
            min_cluster: 10,
            seed: 0,
            max_rounds: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRound {
    pub n_samples: usize,
    pub n_paths: usize,
    pub high_size: usize,
    pub low_size: usize,
    pub high_mean: f64,
    pub low_mean: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Sample indices of the final high-effect subset, ascending.
    pub high: Vec<usize>,
    /// Everything split off along the way, ascending.
    pub low: Vec<usize>,
    pub rounds: Vec<ClusterRound>,
    /// All presence vectors were identical in the first round.
    pub degenerate: bool,
}

impl ClusterResult {
    /// Number of accepted splits.
    pub fn accepted_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.accepted).count()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// 2-means with k-means++ seeding; returns cluster labels or `None` when a
/// cluster would be empty.
pub fn two_means(points: &[Vec<f64>], seed: u64) -> Option<Vec<usize>> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    let total: f64 = d.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut second = n - 1;
    for (i, &w) in d.iter().enumerate() {
        if target < w {
            second = i;
            break;
        }
        target -= w;
    }
    let mut centers = [points[first].clone(), points[second].clone()];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..100 {
        let next: Vec<usize> = points
            .iter()
            .map(|p| usize::from(sq_dist(p, &centers[1]) < sq_dist(p, &centers[0])))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(p, _)| p).collect();
            if members.is_empty() {
                return None;
            }
            for (j, c) in center.iter_mut().enumerate() {
                *c = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    Some(labels)
}

pub fn bisection_cluster(triads: &[TriadGraphs], table: &EffectTable, config: &ClusterConfig) -> Result<ClusterResult> {
    let candidates: Vec<Path> = table.rows.keys().cloned().collect();
    let presence = skill_presence(triads, &candidates);
    bisection_cluster_presence(&presence, config)
}

/// Clustering on a precomputed `samples × paths` skill-presence matrix.
pub fn bisection_cluster_presence(presence: &[Vec<bool>], config: &ClusterConfig) -> Result<ClusterResult> {
    if presence.len() < 2 {
        return Err(Error::InvalidArgument("bisection clustering needs at least 2 samples".into()));
    }
    let n_paths = presence[0].len();
    let mut current: Vec<usize> = (0..presence.len()).collect();
    let mut low: Vec<usize> = Vec::new();
    let mut rounds = Vec::new();
    let mut degenerate = false;
    for round in 0..config.max_rounds {
        if current.len() < 2 || n_paths == 0 {
            break;
        }
        let mut ranked: Vec<(usize, usize)> = (0..n_paths)
            .map(|p| (current.iter().filter(|&&s| presence[s][p]).count(), p))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let k = ((n_paths as f64 * config.top_fraction).ceil() as usize).clamp(1, n_paths);
        let top: Vec<usize> = ranked[..k].iter().map(|&(_, p)| p).collect();
        let points: Vec<Vec<f64>> = current
            .iter()
            .map(|&s| top.iter().map(|&p| f64::from(u8::from(presence[s][p]))).collect())
            .collect();
        let Some(labels) = two_means(&points, config.seed.wrapping_add(round as u64)) else {
            if round == 0 {
                degenerate = true;
            }
            break;
        };
        let mean_of = |k: usize| {
            let rows: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(p, _)| p).collect();
            rows.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / (rows.len() * top.len()) as f64
        };
        let (m0, m1) = (mean_of(0), mean_of(1));
        let high_label = usize::from(m1 > m0);
        let (high_mean, low_mean) = if high_label == 1 { (m1, m0) } else { (m0, m1) };
        let high: Vec<usize> = current.iter().zip(&labels).filter(|(_, &l)| l == high_label).map(|(&s, _)| s).collect();
        let rest: Vec<usize> = current.iter().zip(&labels).filter(|(_, &l)| l != high_label).map(|(&s, _)| s).collect();
        let accepted = high_mean - low_mean >= config.min_gap
            && high.len() >= config.min_cluster
            && rest.len() >= config.min_cluster;
        rounds.push(ClusterRound {
            n_samples: current.len(),
            n_paths: top.len(),
            high_size: high.len(),
            low_size: rest.len(),
            high_mean,
            low_mean,
            accepted,
        });
        if !accepted {
            break;
        }
        low.extend(rest);
        current = high;
    }
    low.sort_unstable();
    Ok(ClusterResult {
        high: current,
        low,
        rounds,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_are_degenerate() {
        let presence = vec![vec![true, false, true]; 30];
        let r = bisection_cluster_presence(&presence, &ClusterConfig::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.high.len(), 30);
        assert!(r.low.is_empty());
    }

    #[test]
    fn recovers_planted_blobs() {
        // 25 samples exhibit paths 0..10, 15 show nothing; 100 paths in total.
        let mut presence = Vec::new();
        for s in 0..40 {
            presence.push((0..100).map(|p| s < 25 && p < 10).collect::<Vec<bool>>());
        }
        let r = bisection_cluster_presence(&presence, &ClusterConfig::default()).unwrap();
        assert!(!r.degenerate);
        assert_eq!(r.high, (0..25).collect::<Vec<_>>());
        assert_eq!(r.low, (25..40).collect::<Vec<_>>());
        assert_eq!(r.accepted_rounds(), 1);
        assert!(!r.rounds.last().unwrap().accepted || r.rounds.len() == 1);
    }

    #[test]
    fn small_clusters_are_not_split() {
        let mut presence = Vec::new();
        for s in 0..12 {
            presence.push((0..10).map(|p| s < 6 && p < 3).collect::<Vec<bool>>());
        }
        let r = bisection_cluster_presence(&presence, &ClusterConfig::default()).unwrap();
        assert_eq!(r.accepted_rounds(), 0);
        assert_eq!(r.high.len(), 12);
        assert!(bisection_cluster_presence(&presence[..1], &ClusterConfig::default()).is_err());
    }
}
