use rayon::prelude::*;
use serde::Serialize;
use skillpath::circuit::{dump::write_dump, masked_forward, AblationStrategy};
use skillpath::datagen::{gen_icl, gen_idt, gen_pvt, read_lines, read_tsv_pairs, GenOptions, IclTemplate, IdtBackground};
use skillpath::graph::{EdgeMask, EdgeUniverse};
use skillpath::model_io::{params_to_bytes, ModelConfig, ModelParams, TokenSequence};
use skillpath::reference::forward;
use skillpath::Scalar;

use super::{to_json_bytes, Model};
use crate::cli::{CheckDecompArgs, GenDataArgs, MakeToyArgs, SkillKind, Variant};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Ctx;

#[derive(Serialize)]
struct PromptCheck {
    index: usize,
    n_tokens: usize,
    max_abs_error: f64,
    argmax_reference: u32,
    argmax_graph: u32,
}

#[derive(Serialize)]
struct DecompReport {
    n_prompts: usize,
    tol: f64,
    max_abs_logit_error: f64,
    argmax_match_rate: f64,
    passed: bool,
    prompts: Vec<PromptCheck>,
}

pub fn check_decomp<T: Scalar>(a: &CheckDecompArgs, m: &Model<T>, ctx: &mut Ctx) -> CliResult<()> {
    let lines = read_lines(&ctx.input(&a.prompts)?)?;
    if lines.is_empty() {
        return Err(CliError::Data(format!("{} has no prompts", a.prompts.display())));
    }
    let c = &m.params.config;
    let max = a.max_tokens.min(c.n_ctx).max(1);
    let seqs: Vec<TokenSequence> = lines
        .iter()
        .map(|l| {
            let mut ids = m.tokenizer.encode(l)?;
            ids.truncate(max);
            Ok(TokenSequence::new(ids))
        })
        .collect::<CliResult<_>>()?;
    let universe = EdgeUniverse::new(c.n_layers, c.n_heads, false);
    let full = EdgeMask::empty(universe);
    let checks: Vec<PromptCheck> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let reference = forward(&m.params, s)?;
            let (graph, _) = masked_forward(&m.params, s, &full, AblationStrategy::Zero, i as u64)?;
            let err = reference
                .values()
                .iter()
                .zip(graph.values())
                .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
                .fold(0.0, f64::max);
            Ok(PromptCheck {
                index: i,
                n_tokens: s.len(),
                max_abs_error: err,
                argmax_reference: reference.argmax(),
                argmax_graph: graph.argmax(),
            })
        })
        .collect::<skillpath::Result<_>>()?;
    let max_err = checks.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
    let matches = checks.iter().filter(|c| c.argmax_graph == c.argmax_reference).count();
    let rate = matches as f64 / checks.len() as f64;
    let passed = rate == 1.0 && max_err <= a.tol;
    if a.dump {
        let (_, acts) = masked_forward(&m.params, &seqs[0], &full, AblationStrategy::Zero, 0)?;
        write_dump(&acts, &ctx.out_path("circuits_0"))?;
        ctx.record_output("circuits_0.bin")?;
        ctx.record_output("circuits_0.json")?;
    }
    ctx.note("max_abs_logit_error", max_err);
    ctx.note("argmax_match_rate", rate);
    ctx.note("passed", passed);
    let report = DecompReport {
        n_prompts: checks.len(),
        tol: a.tol,
        max_abs_logit_error: max_err,
        argmax_match_rate: rate,
        passed,
        prompts: checks,
    };
    ctx.write("check_decomp.json", &to_json_bytes(&report)?)?;
    println!("prompts: {}  max |logit error|: {max_err:.3e}  argmax match: {:.1}%", report.n_prompts, rate * 100.0);
    if !passed {
        ctx.failure = Some(format!("decomposition check failed (error {max_err:.3e}, match {rate:.3})"));
    }
    Ok(())
}

pub fn gen_data<T: Scalar>(a: &GenDataArgs, cfg: &RunConfig, m: &Model<T>, ctx: &mut Ctx) -> CliResult<()> {
    let seed = cfg.run.seed;
    ctx.seeds.insert("data".into(), seed);
    let opts = GenOptions {
        n: a.n,
        seed,
        allow_partial: a.allow_partial,
    };
    let corpus = ctx.input(&a.corpus)?;
    let triads = match a.skill {
        SkillKind::Pvt => gen_pvt(&m.tokenizer, &m.params, &read_lines(&corpus)?, &opts)?,
        SkillKind::Idt => {
            let v = match a.variant {
                Variant::Bkg1 => IdtBackground::Bkg1,
                Variant::Bkg2 => IdtBackground::Bkg2,
                Variant::Bkg3 => IdtBackground::Bkg3,
                Variant::Bkg4 => IdtBackground::Bkg4,
            };
            gen_idt(&m.tokenizer, &m.params, &read_lines(&corpus)?, v, &opts)?
        }
        SkillKind::Icl => {
            let template = IclTemplate::parse(&a.template)?;
            gen_icl(&m.tokenizer, &m.params, &read_tsv_pairs(&corpus)?, &template, &opts)?
        }
    };
    let mut out = Vec::new();
    for t in &triads {
        serde_json::to_writer(&mut out, t)?;
        out.push(b'\n');
    }
    ctx.write(&a.output, &out)?;
    ctx.note("samples", triads.len());
    println!("wrote {} triads to {}", triads.len(), ctx.out_path(&a.output).display());
    Ok(())
}

pub fn make_toy(a: &MakeToyArgs, ctx: &mut Ctx) -> CliResult<()> {
    let config = ModelConfig {
        n_layers: a.layers,
        n_heads: a.heads,
        d_model: a.d_model,
        d_mlp: 4 * a.d_model,
        vocab_size: a.vocab,
        n_ctx: a.n_ctx,
        layer_norm_eps: 1e-5,
    };
    ctx.seeds.insert("weights".into(), a.seed);
    let params = ModelParams::<f32>::random(config, a.seed, a.scale)?;
    ctx.write(&a.output, &params_to_bytes(&params)?)?;
    Ok(())
}
