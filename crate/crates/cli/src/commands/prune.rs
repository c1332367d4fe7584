use std::fs;

use rayon::prelude::*;
use serde::Serialize;
use skillpath::graph::CircuitGraph;
use skillpath::mediation::{compute_effects, default_delta, extract_skill_graph, TokenizedTriad};
use skillpath::pruning::{greedy_prune, PruneConfig, PruneReport};
use skillpath::Scalar;

use super::{graph_name, list_samples, load_effects, load_triad_graphs, load_triads, to_json_bytes, universe_sidecar, Model, MEMBERS};
use crate::cli::{Members, MediateArgs, PruneArgs, SkillGraphArgs};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{write_atomic, Ctx};

/// A finished graph on disk matching this sample and configuration.
fn resumable(ctx: &Ctx, sample_id: u64, member: &str, idx: usize, config: &serde_json::Value) -> Option<PruneReport> {
    let g = CircuitGraph::load(&ctx.out_path(&format!("graphs/{}", graph_name(idx, member)))).ok()?;
    if g.meta.get("config") != Some(config) || g.meta.get("sample_id") != Some(&sample_id.into()) {
        return None;
    }
    let text = fs::read_to_string(ctx.out_path(&format!("reports/{}", graph_name(idx, member)))).ok()?;
    serde_json::from_str(&text).ok()
}

#[derive(Serialize)]
struct MemberSummary {
    member: String,
    samples: usize,
    mean_deleted_fraction: f64,
    faithful: usize,
}

#[derive(Serialize)]
struct PruneSummary {
    config: PruneConfig,
    samples: Vec<usize>,
    members: Vec<MemberSummary>,
}

pub fn prune<T: Scalar>(a: &PruneArgs, cfg: &RunConfig, m: &Model<T>, ctx: &mut Ctx) -> CliResult<()> {
    let config = cfg.prune_config()?;
    ctx.seeds.insert("prune".into(), cfg.prune.seed);
    let triads = load_triads(ctx, &a.triads)?;
    let ids: Vec<usize> = a.range.indices(triads.len()).collect();
    let members: &[&str] = match a.members {
        Members::Ori => &MEMBERS[..1],
        Members::Triad => &MEMBERS,
    };
    let tokenized: Vec<TokenizedTriad> = ids
        .par_iter()
        .map(|&i| TokenizedTriad::from_triad(&triads[i], &m.tokenizer, &m.params))
        .collect::<skillpath::Result<_>>()?;
    let config_json = serde_json::to_value(config)?;
    let jobs: Vec<(usize, usize, usize)> = ids
        .iter()
        .enumerate()
        .flat_map(|(k, &i)| (0..members.len()).map(move |mi| (k, i, mi)))
        .collect();
    let results: Vec<(PruneReport, bool)> = jobs
        .par_iter()
        .map(|&(k, i, mi)| -> CliResult<(PruneReport, bool)> {
            let member = members[mi];
            let sample_id = (i as u64) * 3 + mi as u64;
            if let Some(r) = resumable(ctx, sample_id, member, i, &config_json) {
                return Ok((r, true));
            }
            let t = &tokenized[k];
            let seq = [&t.text, &t.background, &t.self_text][mi];
            let (graph, report) = greedy_prune(&m.params, seq, &config, sample_id)?;
            // The report goes first so a present graph implies a complete pair.
            write_atomic(&ctx.out_path(&format!("reports/{}", graph_name(i, member))), &to_json_bytes(&report)?)?;
            write_atomic(&ctx.out_path(&format!("graphs/{}", graph_name(i, member))), graph.to_json()?.as_bytes())?;
            eprintln!(
                "sample {i} {member}: removed {}/{} edges in {:.1}s",
                report.edges_removed, report.edges_tested, report.wall_time_secs
            );
            Ok((report, false))
        })
        .collect::<CliResult<_>>()?;
    for &(_, i, mi) in &jobs {
        ctx.record_output(&format!("graphs/{}", graph_name(i, members[mi])))?;
        ctx.record_output(&format!("reports/{}", graph_name(i, members[mi])))?;
    }
    let resumed = results.iter().filter(|r| r.1).count();
    let fresh: Vec<f64> = results.iter().filter(|r| !r.1).map(|r| r.0.wall_time_secs).collect();
    if !fresh.is_empty() {
        ctx.timings.insert("mean_prune_secs".into(), fresh.iter().sum::<f64>() / fresh.len() as f64);
    }
    let summaries: Vec<MemberSummary> = members
        .iter()
        .enumerate()
        .map(|(mi, name)| {
            let rs: Vec<&PruneReport> = jobs.iter().zip(&results).filter(|(j, _)| j.2 == mi).map(|(_, r)| &r.0).collect();
            MemberSummary {
                member: name.to_string(),
                samples: rs.len(),
                mean_deleted_fraction: if rs.is_empty() { 0.0 } else { rs.iter().map(|r| r.deleted_fraction).sum::<f64>() / rs.len() as f64 },
                faithful: rs.iter().filter(|r| r.final_top1 == r.target_token).count(),
            }
        })
        .collect();
    for s in &summaries {
        println!(
            "{}: {} samples, mean deleted fraction {:.4}, faithful {}/{}",
            s.member, s.samples, s.mean_deleted_fraction, s.faithful, s.samples
        );
    }
    ctx.note("resumed", resumed);
    ctx.note("mean_deleted_fraction_ori", summaries[0].mean_deleted_fraction);
    let summary = PruneSummary {
        config,
        samples: ids,
        members: summaries,
    };
    ctx.write("prune_summary.json", &to_json_bytes(&summary)?)?;
    Ok(())
}

pub fn mediate(a: &MediateArgs, cfg: &RunConfig, ctx: &mut Ctx) -> CliResult<()> {
    let all = list_samples(&a.graphs)?;
    let ids: Vec<usize> = a.range.indices(all.len()).map(|k| all[k]).collect();
    let triads = load_triad_graphs(ctx, &a.graphs, &ids)?;
    let max_nodes = a.max_nodes.unwrap_or(cfg.mediation.max_nodes);
    let table = compute_effects(&triads, max_nodes)?;
    ctx.write("effects.csv", table.to_csv()?.as_bytes())?;
    let side = serde_json::json!({
        "universe": table.universe,
        "n_all": table.n_all,
        "max_nodes": max_nodes,
        "samples": ids,
    });
    let side_name = universe_sidecar(std::path::Path::new("effects.csv"));
    ctx.write(&side_name.to_string_lossy(), &to_json_bytes(&side)?)?;
    ctx.note("paths", table.len());
    println!("{} candidate paths over {} samples", table.len(), table.n_all);
    Ok(())
}

pub fn skill_graph(a: &SkillGraphArgs, cfg: &RunConfig, ctx: &mut Ctx) -> CliResult<()> {
    let table = load_effects(ctx, &a.effects)?;
    let delta = a
        .delta
        .or(cfg.mediation.delta)
        .or_else(|| a.skill.as_deref().and_then(default_delta))
        .ok_or_else(|| CliError::Config("no threshold: pass --delta, set mediation.delta or name a known --skill".into()))?;
    let mut g = extract_skill_graph(&table, delta)?;
    g.skill = a.skill.clone();
    ctx.write(&a.output, g.to_json()?.as_bytes())?;
    ctx.note("delta", delta);
    ctx.note("paths", g.len());
    ctx.note("edges", g.edge_set().len());
    println!("delta {delta}: {} paths, {} edges", g.len(), g.edge_set().len());
    Ok(())
}
