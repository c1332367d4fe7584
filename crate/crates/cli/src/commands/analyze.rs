use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use skillpath::analytics::{
    absence_rate_from_counts, degree_preserving_shuffle, hamming_pct, overlap, overlap_edges, paths_received,
    receiver_histogram, removal_experiment, Removal, RemovalSample,
};
use skillpath::circuit::CircuitId;
use skillpath::graph::{CircuitGraph, Path as GraphPath, SkillGraph};
use skillpath::mediation::{bisection_cluster, sweep_threshold, sweep_to_csv, ClusterConfig, TokenizedTriad};
use skillpath::Scalar;

use super::{list_samples, load_effects, load_graph, load_triad_graphs, load_triads, to_json_bytes, Model};
use crate::cli::{
    AbsenceArgs, AnalyzeCommand, ClusterArgs, HammingArgs, OverlapArgs, ReceiversArgs, RemovalArgs, ReportArgs,
    SampleRange, SweepArgs,
};
use crate::error::{CliError, CliResult};
use crate::manifest::Ctx;

pub fn run(cmd: &AnalyzeCommand, ctx: &mut Ctx) -> CliResult<()> {
    match cmd {
        AnalyzeCommand::Receivers(a) => receivers(a, ctx),
        AnalyzeCommand::Overlap(a) => overlap_cmd(a, ctx),
        AnalyzeCommand::Hamming(a) => hamming(a, ctx),
        AnalyzeCommand::Absence(a) => absence(a, ctx),
        AnalyzeCommand::Cluster(a) => cluster(a, ctx),
        AnalyzeCommand::Report(a) => report(a, ctx),
        AnalyzeCommand::Removal(_) | AnalyzeCommand::Sweep(_) => unreachable!("model commands are dispatched elsewhere"),
    }
}

fn load_skill(ctx: &mut Ctx, p: &Path) -> CliResult<SkillGraph> {
    Ok(SkillGraph::load(&ctx.input(p)?)?)
}

fn receivers(a: &ReceiversArgs, ctx: &mut Ctx) -> CliResult<()> {
    let g = load_skill(ctx, &a.skill_graph)?;
    let h = receiver_histogram(&g, a.threshold);
    ctx.write("receivers.csv", h.to_csv()?.as_bytes())?;
    let doc = serde_json::json!({
        "threshold": h.threshold,
        "key_receivers": h.key_receivers,
        "counts": h.counts.iter().map(|(n, c)| serde_json::json!({"node": n, "count": c})).collect::<Vec<_>>(),
    });
    ctx.write("receivers.json", &to_json_bytes(&doc)?)?;
    ctx.note("key_receivers", &h.key_receivers);
    let shown: Vec<String> = h.key_receivers.iter().map(|n| n.to_string()).collect();
    println!("key receivers (>= {}): {}", a.threshold, shown.join(" "));
    Ok(())
}

fn overlap_cmd(a: &OverlapArgs, ctx: &mut Ctx) -> CliResult<()> {
    let ga = load_skill(ctx, &a.a)?;
    let gb = load_skill(ctx, &a.b)?;
    let ov = overlap(&ga, &gb)?;
    ctx.seeds.insert("shuffle".into(), a.seed);
    let ea = ga.edge_set();
    let eb = gb.edge_set();
    let shuffled: Vec<f64> = (0..a.shuffles as u64)
        .map(|s| overlap_edges(&ea, &degree_preserving_shuffle(&eb, &gb.universe, a.seed + s, 10)))
        .collect::<skillpath::Result<_>>()?;
    let mean = (!shuffled.is_empty()).then(|| shuffled.iter().sum::<f64>() / shuffled.len() as f64);
    let doc = serde_json::json!({
        "a": a.a, "b": a.b,
        "a_edges": ea.len(), "b_edges": eb.len(),
        "overlap": ov,
        "shuffled": shuffled,
        "shuffled_mean": mean,
    });
    ctx.write("overlap.json", &to_json_bytes(&doc)?)?;
    ctx.note("overlap", ov);
    match mean {
        Some(m) => println!("overlap {ov:.4} (shuffled baseline {m:.4})"),
        None => println!("overlap {ov:.4}"),
    }
    Ok(())
}

fn hamming(a: &HammingArgs, ctx: &mut Ctx) -> CliResult<()> {
    if a.a.len() != a.b.len() {
        return Err(CliError::Config(format!("--a has {} graphs but --b has {}", a.a.len(), a.b.len())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["a", "b", "hamming_pct"]).map_err(|e| CliError::Data(e.to_string()))?;
    let mut values = Vec::new();
    for (pa, pb) in a.a.iter().zip(&a.b) {
        let ga = CircuitGraph::load(&ctx.input(pa)?)?;
        let gb = CircuitGraph::load(&ctx.input(pb)?)?;
        let hp = hamming_pct(&ga, &gb)?;
        w.write_record([pa.display().to_string(), pb.display().to_string(), hp.to_string()])
            .map_err(|e| CliError::Data(e.to_string()))?;
        values.push(hp);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    ctx.write("hamming.csv", &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)?;
    ctx.write("hamming.json", &to_json_bytes(&serde_json::json!({"pairs": values, "mean": mean}))?)?;
    ctx.note("mean_hamming_pct", mean);
    println!("mean hamming distance {mean:.2}% over {} pairs", values.len());
    Ok(())
}

fn parse_node(s: &str) -> CliResult<CircuitId> {
    let bad = || CliError::Config(format!("node `{s}` is not `layer,index`"));
    let (l, i) = s.trim_matches(|c| c == '[' || c == ']').split_once(',').ok_or_else(bad)?;
    Ok(CircuitId::new(l.trim().parse().map_err(|_| bad())?, i.trim().parse().map_err(|_| bad())?))
}

fn absence(a: &AbsenceArgs, ctx: &mut Ctx) -> CliResult<()> {
    let correct: Vec<SkillGraph> = a.correct.iter().map(|p| load_skill(ctx, p)).collect::<CliResult<_>>()?;
    let incorrect: Vec<SkillGraph> = a.incorrect.iter().map(|p| load_skill(ctx, p)).collect::<CliResult<_>>()?;
    let nodes: Vec<CircuitId> = if a.nodes.is_empty() {
        correct
            .iter()
            .flat_map(|g| g.paths.iter().map(|p| p.nodes.last()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        a.nodes.iter().map(|s| parse_node(s)).collect::<CliResult<_>>()?
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "index", "n_plus", "n_minus", "absence_rate"]).map_err(|e| CliError::Data(e.to_string()))?;
    let mut rows = Vec::new();
    for n in nodes {
        let plus = paths_received(&correct, n);
        let minus = paths_received(&incorrect, n);
        let rate = absence_rate_from_counts(plus, minus)
            .map_err(|_| CliError::Data(format!("node {n} receives no path in the correct graphs")))?;
        w.write_record([n.layer.to_string(), n.index.to_string(), plus.to_string(), minus.to_string(), rate.to_string()])
            .map_err(|e| CliError::Data(e.to_string()))?;
        rows.push(serde_json::json!({"node": n, "n_plus": plus, "n_minus": minus, "absence_rate": rate}));
    }
    ctx.write("absence.csv", &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)?;
    ctx.write("absence.json", &to_json_bytes(&rows)?)?;
    ctx.note("nodes", rows.len());
    Ok(())
}

/// Original texts of the selected samples with their pruned graphs.
fn removal_samples<T: Scalar>(
    ctx: &mut Ctx,
    m: &Model<T>,
    triads_path: &Path,
    graphs: &Path,
    range: &SampleRange,
) -> CliResult<Vec<RemovalSample>> {
    let triads = load_triads(ctx, triads_path)?;
    let all = list_samples(graphs)?;
    let ids: Vec<usize> = range.indices(all.len()).map(|k| all[k]).collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= triads.len()) {
        return Err(CliError::Data(format!("graph for sample {bad} has no triad in {}", triads_path.display())));
    }
    let bases: Vec<CircuitGraph> = ids.iter().map(|&i| load_graph(ctx, graphs, i, "ori")).collect::<CliResult<_>>()?;
    ids.par_iter()
        .zip(bases)
        .map(|(&i, base)| {
            let t = TokenizedTriad::from_triad(&triads[i], &m.tokenizer, &m.params)?;
            Ok(RemovalSample {
                tokens: t.text,
                expected: t.expected_output,
                base,
            })
        })
        .collect()
}

fn parse_removal(ctx: &mut Ctx, spec: &str) -> CliResult<Removal> {
    let bad = |why: &str| CliError::Config(format!("removal `{spec}`: {why}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let seed = |s: &str| s.parse::<u64>().map_err(|_| bad("seed is not an integer"));
    match parts.as_slice() {
        ["nothing"] => Ok(Removal::Nothing),
        ["paths", file] => {
            let g = load_skill(ctx, Path::new(file))?;
            Ok(Removal::Paths(g.paths.into_iter().map(|p| p.nodes).collect::<Vec<GraphPath>>()))
        }
        ["random", k, s] => Ok(Removal::RandomEdges {
            k: k.parse().map_err(|_| bad("count is not an integer"))?,
            seed: seed(s)?,
        }),
        ["random-like", file, s] => {
            let g = load_skill(ctx, Path::new(file))?;
            Ok(Removal::RandomEdges {
                k: g.edge_set().len(),
                seed: seed(s)?,
            })
        }
        ["difference", fa, fb] => Ok(Removal::Difference(
            Box::new(load_skill(ctx, Path::new(fa))?),
            Box::new(load_skill(ctx, Path::new(fb))?),
        )),
        _ => Err(bad("expected nothing, paths:FILE, random:K:SEED, random-like:FILE:SEED or difference:A:B")),
    }
}

pub fn removal<T: Scalar>(a: &RemovalArgs, m: &Model<T>, ctx: &mut Ctx) -> CliResult<()> {
    let samples = removal_samples(ctx, m, &a.triads, &a.graphs, &a.range)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["removal", "accuracy", "mean_removed_edges"]).map_err(|e| CliError::Data(e.to_string()))?;
    let mut docs = Vec::new();
    for spec in &a.removals {
        let removal = parse_removal(ctx, spec)?;
        let out = removal_experiment(&m.params, &samples, &removal)?;
        let mean_removed = out.removed.iter().sum::<usize>() as f64 / out.removed.len() as f64;
        w.write_record([spec.clone(), out.accuracy.to_string(), mean_removed.to_string()])
            .map_err(|e| CliError::Data(e.to_string()))?;
        println!("{spec}: accuracy {:.3} (mean {mean_removed:.1} edges removed)", out.accuracy);
        docs.push(serde_json::json!({"removal": spec, "outcome": out}));
    }
    ctx.write("removal.csv", &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)?;
    ctx.write("removal.json", &to_json_bytes(&docs)?)?;
    ctx.note("samples", samples.len());
    Ok(())
}

pub fn sweep<T: Scalar>(a: &SweepArgs, m: &Model<T>, ctx: &mut Ctx) -> CliResult<()> {
    let table = load_effects(ctx, &a.effects)?;
    let holdout = removal_samples(ctx, m, &a.triads, &a.graphs, &a.range)?;
    let deltas: Vec<f64> = if a.deltas.is_empty() { (0..10).map(|k| k as f64 / 10.0).collect() } else { a.deltas.clone() };
    let rows = sweep_threshold(&m.params, &table, &holdout, &deltas)?;
    ctx.write("sweep.csv", sweep_to_csv(&rows)?.as_bytes())?;
    for r in &rows {
        println!("delta {:.2}: {} paths, top-1 {:.3}, KL to G* {:.4}", r.delta, r.path_count, r.top1_accuracy, r.kl_to_g_star);
    }
    Ok(())
}

fn cluster(a: &ClusterArgs, ctx: &mut Ctx) -> CliResult<()> {
    let table = load_effects(ctx, &a.effects)?;
    let all = list_samples(&a.graphs)?;
    let ids: Vec<usize> = a.range.indices(all.len()).map(|k| all[k]).collect();
    let triads = load_triad_graphs(ctx, &a.graphs, &ids)?;
    let cfg = ClusterConfig {
        top_fraction: a.top_fraction,
        min_gap: a.min_gap,
        min_cluster: a.min_cluster,
        seed: a.seed,
        ..ClusterConfig::default()
    };
    ctx.seeds.insert("cluster".into(), a.seed);
    let res = bisection_cluster(&triads, &table, &cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &res.rounds {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    ctx.write("cluster_rounds.csv", &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)?;
    let high: Vec<usize> = res.high.iter().map(|&k| ids[k]).collect();
    let low: Vec<usize> = res.low.iter().map(|&k| ids[k]).collect();
    let doc = serde_json::json!({
        "high": high,
        "low": low,
        "rounds": res.rounds,
        "accepted_rounds": res.accepted_rounds(),
        "degenerate": res.degenerate,
    });
    ctx.write("cluster.json", &to_json_bytes(&doc)?)?;
    println!("{} accepted rounds, final cluster of {} samples", res.accepted_rounds(), high.len());
    Ok(())
}

fn report(a: &ReportArgs, ctx: &mut Ctx) -> CliResult<()> {
    let mut docs = serde_json::Map::new();
    for p in &a.inputs {
        let text = fs::read_to_string(ctx.input(p)?)?;
        let value = if p.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            serde_json::Value::String(text)
        };
        docs.insert(p.display().to_string(), value);
    }
    ctx.write(&a.output, &to_json_bytes(&serde_json::json!({ "documents": docs }))?)?;
    Ok(())
}
