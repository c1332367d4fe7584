use rayon::prelude::*;
use skillpath::graph::SkillGraph;
use skillpath::mediation::{export_effect_pairs, Against};
use skillpath::model_io::TokenSequence;
use skillpath::reference::forward;
use skillpath::Scalar;

use super::{load_effects, load_triads, to_json_bytes, Model, MEMBERS};
use crate::cli::{AgainstKind, CandidatesArgs, DotArgs, EffectsExportArgs, ExportCommand, PairsArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Ctx;

pub fn run(cmd: &ExportCommand, ctx: &mut Ctx) -> CliResult<()> {
    match cmd {
        ExportCommand::Dot(a) => dot(a, ctx),
        ExportCommand::Effects(a) => effects(a, ctx),
        ExportCommand::Pairs(a) => pairs(a, ctx),
        ExportCommand::Candidates(_) => unreachable!("model commands are dispatched elsewhere"),
    }
}

fn dot(a: &DotArgs, ctx: &mut Ctx) -> CliResult<()> {
    let g = SkillGraph::load(&ctx.input(&a.skill_graph)?)?;
    ctx.write(&a.output, g.export_dot(a.floor).as_bytes())?;
    Ok(())
}

fn effects(a: &EffectsExportArgs, ctx: &mut Ctx) -> CliResult<()> {
    let table = load_effects(ctx, &a.effects)?;
    let rows: Vec<serde_json::Value> = table
        .iter_effects()
        .map(|(p, e)| {
            serde_json::json!({
                "path": p,
                "eff_ori": e.eff_ori,
                "eff_bkg": e.eff_bkg,
                "eff_slf": e.eff_slf,
                "eff_skill": e.eff_skill,
            })
        })
        .collect();
    let doc = serde_json::json!({ "universe": table.universe, "n_all": table.n_all, "paths": rows });
    ctx.write(&a.output, &to_json_bytes(&doc)?)?;
    Ok(())
}

fn pairs(a: &PairsArgs, ctx: &mut Ctx) -> CliResult<()> {
    let table = load_effects(ctx, &a.effects)?;
    let (against, name) = match a.against {
        AgainstKind::Bkg => (Against::Bkg, "pairs_bkg.csv"),
        AgainstKind::Slf => (Against::Slf, "pairs_slf.csv"),
    };
    ctx.write(name, export_effect_pairs(&table, against, &a.floors)?.as_bytes())?;
    Ok(())
}

/// `sample,member,skill,token_1..k,logit_1..k` for every triad member.
pub fn candidates<T: Scalar>(a: &CandidatesArgs, m: &Model<T>, ctx: &mut Ctx) -> CliResult<()> {
    if a.k == 0 {
        return Err(CliError::Config("--k must be positive".into()));
    }
    let triads = load_triads(ctx, &a.triads)?;
    let rows: Vec<Vec<String>> = triads
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, t)| {
            let tag = t.skill_tag.clone();
            [&t.text, &t.background_text, &t.self_text]
                .into_iter()
                .enumerate()
                .map(move |(mi, text)| (i, mi, tag.clone(), text.clone()))
        })
        .map(|(i, mi, tag, text)| -> CliResult<Vec<String>> {
            let logits = forward(&m.params, &TokenSequence::new(m.tokenizer.encode(&text)?))?;
            let top = logits.top_k(a.k);
            let mut row = vec![i.to_string(), MEMBERS[mi].to_string(), tag];
            row.extend(top.iter().map(|t| t.to_string()));
            row.extend(top.iter().map(|&t| logits.logit(t).as_f64().to_string()));
            Ok(row)
        })
        .collect::<CliResult<_>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample".to_string(), "member".into(), "skill".into()];
    header.extend((1..=a.k).map(|j| format!("token_{j}")));
    header.extend((1..=a.k).map(|j| format!("logit_{j}")));
    w.write_record(&header).map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    ctx.write(&a.output, &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)?;
    Ok(())
}
