mod analyze;
mod data;
mod export;
mod prune;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use skillpath::graph::{CircuitGraph, EdgeUniverse};
use skillpath::mediation::{EffectTable, SampleTriad, TriadGraphs};
use skillpath::model_io::{load_params, Gpt2Tokenizer, ModelParams, ParamManifest};
use skillpath::Scalar;

use crate::cli::{AnalyzeCommand, Command, ExportCommand};
use crate::config::{Precision, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{Ctx, Invocation};

pub const MEMBERS: [&str; 3] = ["ori", "bkg", "slf"];

/// Runs one command against `ctx`, writing outputs and the manifest.
pub fn execute(inv: &Invocation, mut ctx: Ctx) -> CliResult<(crate::manifest::Manifest, Option<String>)> {
    let cfg = &inv.config;
    match &inv.command {
        Command::CheckDecomp(_) | Command::GenData(_) | Command::Prune(_) => match cfg.model.precision {
            Precision::F32 => with_model::<f32>(inv, &mut ctx)?,
            Precision::F64 => with_model::<f64>(inv, &mut ctx)?,
        },
        Command::Analyze(AnalyzeCommand::Removal(_) | AnalyzeCommand::Sweep(_))
        | Command::Export(ExportCommand::Candidates(_)) => match cfg.model.precision {
            Precision::F32 => with_model::<f32>(inv, &mut ctx)?,
            Precision::F64 => with_model::<f64>(inv, &mut ctx)?,
        },
        Command::Mediate(a) => prune::mediate(a, cfg, &mut ctx)?,
        Command::SkillGraph(a) => prune::skill_graph(a, cfg, &mut ctx)?,
        Command::Analyze(a) => analyze::run(a, &mut ctx)?,
        Command::Export(e) => export::run(e, &mut ctx)?,
        Command::MakeToy(a) => data::make_toy(a, &mut ctx)?,
        Command::Replay(_) => return Err(CliError::Config("replay cannot be nested".into())),
    }
    let failure = ctx.failure.take();
    let manifest = ctx.finish(&inv.command.name(), inv.clone())?;
    Ok((manifest, failure))
}

fn with_model<T: Scalar>(inv: &Invocation, ctx: &mut Ctx) -> CliResult<()> {
    let cfg = &inv.config;
    let model = Model::<T>::load(cfg, ctx)?;
    match &inv.command {
        Command::CheckDecomp(a) => data::check_decomp(a, &model, ctx),
        Command::GenData(a) => data::gen_data(a, cfg, &model, ctx),
        Command::Prune(a) => prune::prune(a, cfg, &model, ctx),
        Command::Analyze(AnalyzeCommand::Removal(a)) => analyze::removal(a, &model, ctx),
        Command::Analyze(AnalyzeCommand::Sweep(a)) => analyze::sweep(a, &model, ctx),
        Command::Export(ExportCommand::Candidates(a)) => export::candidates(a, &model, ctx),
        _ => unreachable!("command does not use a model"),
    }
}

pub struct Model<T> {
    pub params: ModelParams<T>,
    pub tokenizer: Gpt2Tokenizer,
}

impl<T: Scalar> Model<T> {
    fn load(cfg: &RunConfig, ctx: &mut Ctx) -> CliResult<Self> {
        let ckpt = cfg
            .model
            .checkpoint
            .clone()
            .ok_or_else(|| CliError::Config("no checkpoint given (--model or [model].checkpoint)".into()))?;
        let manifest = match &cfg.model.param_manifest {
            Some(p) => Some(ParamManifest::from_file(&ctx.input(p)?)?),
            None => None,
        };
        let (params, report) = load_params::<T>(&ctx.input(&ckpt)?, manifest.as_ref())?;
        if !report.unexpected.is_empty() {
            eprintln!("warning: ignoring {} unexpected tensors", report.unexpected.len());
        }
        let tok_dir = cfg
            .model
            .tokenizer
            .clone()
            .unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
        ctx.input(&tok_dir.join("vocab.json"))?;
        ctx.input(&tok_dir.join("merges.txt"))?;
        let tokenizer = Gpt2Tokenizer::from_dir(&tok_dir)?;
        if tokenizer.vocab_size() > params.config.vocab_size {
            return Err(CliError::Data(format!(
                "tokenizer has {} entries but the model vocabulary is {}",
                tokenizer.vocab_size(),
                params.config.vocab_size
            )));
        }
        Ok(Self { params, tokenizer })
    }
}

pub fn to_json_bytes(v: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn load_triads(ctx: &mut Ctx, path: &Path) -> CliResult<Vec<SampleTriad>> {
    Ok(skillpath::mediation::read_triads(&ctx.input(path)?)?)
}

/// Accepts either a `prune` output directory or its `graphs/` subdirectory.
pub fn graphs_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("graphs");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

pub fn graph_name(sample: usize, member: &str) -> String {
    format!("{sample:05}_{member}.json")
}

/// Sample ids with an `_ori` graph, ascending.
pub fn list_samples(dir: &Path) -> CliResult<Vec<usize>> {
    let dir = graphs_dir(dir);
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_ori.json").and_then(|s| s.parse::<usize>().ok()) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(CliError::Data(format!("no pruned graphs in {}", dir.display())));
    }
    Ok(ids)
}

pub fn load_graph(ctx: &mut Ctx, dir: &Path, sample: usize, member: &str) -> CliResult<CircuitGraph> {
    let p = graphs_dir(dir).join(graph_name(sample, member));
    Ok(CircuitGraph::load(&ctx.input(&p)?)?)
}

pub fn load_triad_graphs(ctx: &mut Ctx, dir: &Path, ids: &[usize]) -> CliResult<Vec<TriadGraphs>> {
    ids.iter()
        .map(|&i| {
            Ok(TriadGraphs {
                ori: load_graph(ctx, dir, i, "ori")?,
                bkg: load_graph(ctx, dir, i, "bkg")?,
                slf: load_graph(ctx, dir, i, "slf")?,
            })
        })
        .collect()
}

/// Universe sidecar written next to an effects CSV.
pub fn universe_sidecar(effects: &Path) -> PathBuf {
    effects.with_extension("universe.json")
}

pub fn load_effects(ctx: &mut Ctx, path: &Path) -> CliResult<EffectTable> {
    let side = universe_sidecar(path);
    let universe: EdgeUniverse = if side.is_file() {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(ctx.input(&side)?)?)?;
        serde_json::from_value(v["universe"].clone())?
    } else {
        EdgeUniverse::new(12, 12, false)
    };
    Ok(EffectTable::load(&ctx.input(path)?, universe)?)
}
