//! Causal mediation over sample triads: path effects, skill graphs, clustering.

pub mod cluster;
pub mod effects;
pub mod triads;

pub use cluster::{bisection_cluster, bisection_cluster_presence, ClusterConfig, ClusterResult};
pub use effects::{
    compute_effects, default_delta, export_effect_pairs, extract_skill_graph, skill_presence, sweep_threshold,
    sweep_to_csv, Against, EffectCounts, EffectTable, Effects, SweepRow, DEFAULT_MAX_NODES, DEFAULT_PAIR_FLOORS,
};
pub use triads::{
    build_all_triad_graphs, build_triad_graphs, read_triads, write_triads, SampleTriad, TokenizedTriad,
    TriadGraphs, TriadReports,
};
