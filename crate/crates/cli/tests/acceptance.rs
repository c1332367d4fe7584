//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria that need the pretrained 12-layer checkpoint read it from
//! `SKILLPATH_GPT2_DIR` (holding `model.safetensors`, `vocab.json` and
//! `merges.txt`). Without it they are reported as FAIL (blocked) and do not
//! affect the exit status. `SKILLPATH_ACCEPT_WORK` keeps their intermediate
//! outputs so interrupted pruning runs resume, and `SKILLPATH_ACCEPT_CORPUS`
//! replaces the bundled sentence corpus.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde_json::Value;
use skillpath::analytics::{absence_rate, hamming_pct, overlap};
use skillpath::circuit::{decompose_layer, masked_forward, AblationStrategy, CircuitId};
use skillpath::graph::{enumerate_paths, CircuitGraph, EdgeMask, EdgeUniverse, SkillGraph};
use skillpath::model_io::{ModelConfig, ModelParams, TokenSequence};
use skillpath::pruning::{greedy_prune, Metric, PruneConfig, SearchOrder};
use skillpath::reference::forward_with_states;

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;
use oracle::*;

const ORACLE_TOL: f64 = 1e-5;
const SPOT_TOL: f64 = 1e-9;
const LOSSLESS_TOL: f64 = 1e-2;
const LOSSLESS_SECS: f64 = 300.0;
const DELETED_TARGET: f64 = 0.69;
const DELETED_TOL: f64 = 0.15;
const REMOVAL_SKILL_MAX: f64 = 0.20;
const REMOVAL_RANDOM_MIN: f64 = 0.35;
const PVT_STRATA_MIN: f64 = 0.80;
const INCLUSIVE_MARGIN: f64 = 0.2;

type Outcome = Result<String, String>;

fn core_fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn skillpath(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_skillpath"))
        .current_dir(cwd)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`skillpath {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Position after the (sub)command name in `--out-dir DIR command [kind] ...`.
fn split_at(args: &[&str]) -> usize {
    if matches!(args[2], "analyze" | "export") {
        4
    } else {
        3
    }
}

fn read_json(p: &Path) -> Result<Value, String> {
    let s = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&s).map_err(|e| format!("{}: {e}", p.display()))
}

fn num(v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("expected a number, found {v}"))
}

// ---------------------------------------------------------------------------
// Toy-model oracle

fn random_tokens(seed: u64, vocab: u32) -> Vec<u32> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

fn toy_oracle() -> Outcome {
    let mut worst_circuit = 0.0f64;
    let mut worst_mask = 0.0f64;
    let mut masks = 0;
    let mut path_sets = 0;
    let mut traces = 0;
    for seed in 0..4u64 {
        let p = ModelParams::<f64>::random(ModelConfig::toy(2, 2, 16, 31), 100 + seed, 0.4).map_err(|e| e.to_string())?;
        let o = Oracle { p: &p };
        let t = random_tokens(seed, 31);
        let trace = forward_with_states(&p, &TokenSequence::new(t.clone())).map_err(|e| e.to_string())?;
        for l in 0..2 {
            let x = &trace.residuals[l];
            let xo = from_matrix(x);
            let lib = decompose_layer(&p, l, x).map_err(|e| e.to_string())?;
            let want = o.layer(l, &xo, &vec![xo.clone(); 5]);
            for (c, w) in lib[1..].iter().zip(&want) {
                let got = from_matrix(c);
                worst_circuit = worst_circuit.max(max_diff(&got.concat(), &w.concat()));
            }
            let total = lib.iter().fold(zeros(x.rows(), x.cols()), |a, b| add(&a, &from_matrix(b)));
            worst_circuit = worst_circuit.max(max_diff(&total.concat(), &from_matrix(&trace.residuals[l + 1]).concat()));
        }
        for adjacent in [false, true] {
            let u = EdgeUniverse::new(2, 2, adjacent);
            for (k, keep) in [1.0, 0.8, 0.5, 0.2, 0.0].into_iter().enumerate() {
                let removed = random_mask(u, seed * 10 + k as u64, keep);
                let mut mask = EdgeMask::empty(u);
                for &i in &removed {
                    mask.remove(i);
                }
                for (strategy, mean) in [(AblationStrategy::Zero, false), (AblationStrategy::Mean, true)] {
                    let (lib, _) =
                        masked_forward(&p, &TokenSequence::new(t.clone()), &mask, strategy, 0).map_err(|e| e.to_string())?;
                    worst_mask = worst_mask.max(max_diff(&o.masked_logits(&t, &u, &removed, mean), lib.values()));
                    masks += 1;
                }
                for max_nodes in 2..=3 {
                    let got: Vec<Vec<CircuitId>> =
                        enumerate_paths(&mask, max_nodes).map_err(|e| e.to_string())?.map(|p| p.nodes().to_vec()).collect();
                    if got != brute_paths(&mask, max_nodes) {
                        return Err(format!("path enumeration differs (seed {seed}, keep {keep}, max {max_nodes})"));
                    }
                    path_sets += 1;
                }
            }
            for order in [SearchOrder::BreadthAsc, SearchOrder::ReverseLayers, SearchOrder::DepthFirst, SearchOrder::Random { seed }] {
                let cfg = PruneConfig {
                    metric: Metric::Rank { n: 1 },
                    order,
                    adjacent_only: adjacent,
                    record_trace: true,
                    ..Default::default()
                };
                let (g, report) = greedy_prune(&p, &TokenSequence::new(t.clone()), &cfg, 0).map_err(|e| e.to_string())?;
                let (removed, decisions) = replay(&p, &t, &order.edge_order(&u), u);
                let lib: BTreeSet<usize> = g.mask.removed_indices().collect();
                let steps: Vec<bool> = report.trace.unwrap_or_default().iter().map(|s| s.accepted).collect();
                if lib != removed || steps != decisions {
                    return Err(format!("greedy trace differs (seed {seed}, {})", order.name()));
                }
                traces += 1;
            }
        }
    }
    if worst_circuit > ORACLE_TOL || worst_mask > ORACLE_TOL {
        return Err(format!("circuit error {worst_circuit:.2e}, masked-forward error {worst_mask:.2e} (tol {ORACLE_TOL:.0e})"));
    }
    Ok(format!(
        "circuits {worst_circuit:.1e}, {masks} masked forwards {worst_mask:.1e}, {path_sets} path sets and {traces} greedy traces identical"
    ))
}

// ---------------------------------------------------------------------------
// Metric invariants on the published graphs

fn metric_invariants(work: &Path) -> Outcome {
    let skill = |rel: &str| SkillGraph::load(&core_fixture(rel)).map_err(|e| e.to_string());
    let pvt = skill("pvt_skill_graph.json")?;
    let idt = skill("reconstructed/idt_overlap.json")?;
    let icl = skill("reconstructed/icl1_overlap.json")?;
    let ov_idt = overlap(&idt, &pvt).map_err(|e| e.to_string())?;
    let ov_icl = overlap(&icl, &pvt).map_err(|e| e.to_string())?;
    let ga = CircuitGraph::load(&core_fixture("reconstructed/g_star_bkg2.json")).map_err(|e| e.to_string())?;
    let gb = CircuitGraph::load(&core_fixture("reconstructed/g_star_bkg3.json")).map_err(|e| e.to_string())?;
    let ham = hamming_pct(&ga, &gb).map_err(|e| e.to_string())?;
    let correct = (0..4).map(|k| skill(&format!("reconstructed/idt_correct_{k}.json"))).collect::<Result<Vec<_>, _>>()?;
    let incorrect = (0..3).map(|k| skill(&format!("reconstructed/idt_incorrect_{k}.json"))).collect::<Result<Vec<_>, _>>()?;
    let absence = absence_rate(&correct, &incorrect, CircuitId::new(2, 18)).map_err(|e| e.to_string())?;

    // The same numbers through the command-line exporters.
    let f = |rel: &str| core_fixture(rel).to_string_lossy().into_owned();
    skillpath(work, &["--out-dir", "ov", "analyze", "overlap", "--a", &f("reconstructed/idt_overlap.json"), "--b", &f("pvt_skill_graph.json")])?;
    skillpath(work, &["--out-dir", "ham", "analyze", "hamming", "--a", &f("reconstructed/g_star_bkg2.json"), "--b", &f("reconstructed/g_star_bkg3.json")])?;
    let mut args = vec!["--out-dir".to_string(), "abs".into(), "analyze".into(), "absence".into(), "--correct".into()];
    args.extend((0..4).map(|k| f(&format!("reconstructed/idt_correct_{k}.json"))));
    args.push("--incorrect".into());
    args.extend((0..3).map(|k| f(&format!("reconstructed/idt_incorrect_{k}.json"))));
    args.extend(["--nodes".into(), "2,18".into()]);
    skillpath(work, &args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let cli_ov = num(&read_json(&work.join("ov/overlap.json"))?["overlap"])?;
    let cli_ham = num(&read_json(&work.join("ham/hamming.json"))?["mean"])?;
    let cli_abs = num(&read_json(&work.join("abs/absence.json"))?[0]["absence_rate"])?;

    let checks = [
        ("overlap IDT/PVT", ov_idt, 0.74),
        ("overlap ICL1/PVT", ov_icl, 0.81),
        ("hamming Bkg2/Bkg3 %", ham, 6.42),
        ("absence rate [2,18]", absence, 0.37),
        ("cli overlap", cli_ov, 0.74),
        ("cli hamming %", cli_ham, 6.42),
        ("cli absence rate", cli_abs, 0.37),
    ];
    for (name, got, want) in checks {
        if (got - want).abs() > SPOT_TOL {
            return Err(format!("{name}: {got} != {want}"));
        }
    }
    Ok(format!("overlap {ov_idt:.2}/{ov_icl:.2}, hamming {ham:.2}%, absence {absence:.2}; library and exporters agree"))
}

// ---------------------------------------------------------------------------
// Determinism

fn determinism(work: &Path) -> Outcome {
    for f in ["vocab.json", "merges.txt"] {
        std::fs::copy(core_fixture(&format!("gpt2/{f}")), work.join(f)).map_err(|e| e.to_string())?;
    }
    let sentences = core_fixture("corpus/sentences.txt").to_string_lossy().into_owned();
    let sentiment = core_fixture("corpus/sentiment.tsv").to_string_lossy().into_owned();
    let pvt = core_fixture("pvt_skill_graph.json").to_string_lossy().into_owned();
    let idt = core_fixture("reconstructed/idt_overlap.json").to_string_lossy().into_owned();
    let correct = core_fixture("reconstructed/idt_correct_0.json").to_string_lossy().into_owned();
    let incorrect = core_fixture("reconstructed/idt_incorrect_0.json").to_string_lossy().into_owned();
    let model = ["--model", "m/model.safetensors", "--tokenizer", "."];
    let with_model = |rest: &[&str]| -> Vec<String> {
        let at = split_at(rest);
        let mut v: Vec<String> = rest[..at].iter().map(|s| s.to_string()).collect();
        v.extend(model.iter().map(|s| s.to_string()));
        v.extend(rest[at..].iter().map(|s| s.to_string()));
        v
    };
    let plain = |rest: &[&str]| rest.iter().map(|s| s.to_string()).collect::<Vec<String>>();
    let runs: Vec<Vec<String>> = vec![
        plain(&["--out-dir", "m", "make-toy", "--seed", "3"]),
        with_model(&["--out-dir", "c", "check-decomp", "--dump", "--prompts", &sentences, "--max-tokens", "12"]),
        with_model(&["--out-dir", "dp", "gen-data", "--skill", "pvt", "--corpus", &sentences, "--n", "4", "--seed", "1"]),
        with_model(&["--out-dir", "di", "gen-data", "--skill", "idt", "--variant", "bkg2", "--corpus", &sentences, "--n", "3", "--allow-partial"]),
        with_model(&["--out-dir", "dc", "gen-data", "--skill", "icl", "--corpus", &sentiment, "--n", "3", "--allow-partial"]),
        with_model(&["--out-dir", "p", "prune", "--triads", "dp/triads.jsonl", "--ablation", "mean"]),
        with_model(&["--out-dir", "pn", "prune", "--triads", "dp/triads.jsonl", "--ablation", "noise", "--prune-seed", "9", "--adjacent-only", "--members", "ori", "--take", "2"]),
        plain(&["--out-dir", "e", "mediate", "--graphs", "p", "--max-nodes", "3"]),
        plain(&["--out-dir", "s", "skill-graph", "--effects", "e/effects.csv", "--delta", "0", "--skill", "pvt"]),
        plain(&["--out-dir", "a", "analyze", "receivers", "--skill-graph", "s/skill_graph.json", "--threshold", "1"]),
        plain(&["--out-dir", "a", "analyze", "overlap", "--a", &idt, "--b", &pvt, "--shuffles", "3", "--seed", "4"]),
        plain(&["--out-dir", "a", "analyze", "hamming", "--a", "p/graphs/00000_ori.json", "--b", "p/graphs/00001_ori.json"]),
        plain(&["--out-dir", "a", "analyze", "absence", "--correct", &correct, "--incorrect", &incorrect, "--nodes", "2,18"]),
        with_model(&["--out-dir", "a", "analyze", "removal", "--triads", "dp/triads.jsonl", "--graphs", "p", "--remove", "nothing", "random:3:1", "random-like:s/skill_graph.json:2"]),
        with_model(&["--out-dir", "a", "analyze", "sweep", "--effects", "e/effects.csv", "--triads", "dp/triads.jsonl", "--graphs", "p", "--deltas", "0,0.3,0.6"]),
        plain(&["--out-dir", "a", "analyze", "cluster", "--graphs", "p", "--effects", "e/effects.csv"]),
        plain(&["--out-dir", "a", "analyze", "report", "--inputs", "a/overlap.json", "a/hamming.json"]),
        plain(&["--out-dir", "x", "export", "dot", "--skill-graph", &pvt, "--floor", "0.7"]),
        plain(&["--out-dir", "x", "export", "effects", "--effects", "e/effects.csv"]),
        plain(&["--out-dir", "x", "export", "pairs", "--effects", "e/effects.csv", "--against", "slf"]),
        with_model(&["--out-dir", "x", "export", "candidates", "--triads", "dp/triads.jsonl", "--k", "3"]),
    ];
    let mut manifests = Vec::new();
    for args in &runs {
        skillpath(work, &args.iter().map(String::as_str).collect::<Vec<_>>())?;
        let dir = &args[1];
        let name = match args[2].as_str() {
            "analyze" | "export" => format!("{}-{}", args[2], args[3]),
            other => other.to_string(),
        };
        manifests.push(format!("{dir}/{name}.manifest.json"));
    }
    let mut files = 0;
    for (k, m) in manifests.iter().enumerate() {
        let out = format!("replay/{k:02}");
        // A different worker count must not change anything.
        skillpath(work, &["--threads", "3", "--out-dir", &out, "replay", "--manifest", m])?;
        let check = read_json(&work.join(&out).join("replay_check.json"))?;
        if check["identical"] != Value::Bool(true) {
            return Err(format!("{m} did not replay identically"));
        }
        files += check["files"].as_array().map_or(0, Vec::len);
    }
    Ok(format!("{} commands replayed, {files} output files byte-identical", manifests.len()))
}

// ---------------------------------------------------------------------------
// Pretrained-model criteria

struct Gpt2 {
    dir: PathBuf,
    work: PathBuf,
    corpus: PathBuf,
}

impl Gpt2 {
    fn locate(scratch: &Path) -> Option<Gpt2> {
        let dir = PathBuf::from(std::env::var_os("SKILLPATH_GPT2_DIR")?);
        let work = std::env::var_os("SKILLPATH_ACCEPT_WORK").map_or_else(|| scratch.join("gpt2"), PathBuf::from);
        let corpus = std::env::var_os("SKILLPATH_ACCEPT_CORPUS").map_or_else(|| core_fixture("corpus/sentences.txt"), PathBuf::from);
        std::fs::create_dir_all(&work).ok()?;
        Some(Gpt2 { dir, work, corpus })
    }

    fn run(&self, args: &[&str]) -> Result<(), String> {
        let model = self.dir.join("model.safetensors").to_string_lossy().into_owned();
        let tok = self.dir.to_string_lossy().into_owned();
        let at = split_at(args);
        let mut v: Vec<&str> = args[..at].to_vec();
        v.extend(["--model", &model, "--tokenizer", &tok]);
        v.extend(&args[at..]);
        skillpath(&self.work, &v)
    }

    fn plain(&self, args: &[&str]) -> Result<(), String> {
        skillpath(&self.work, args)
    }

    /// gen-data, prune, mediate and skill-graph for one skill; returns the triad count.
    fn pipeline(&self, skill: &str, extra: &[&str], delta: &str, discover: usize) -> Result<usize, String> {
        let dir = skill.to_string();
        let corpus = self.corpus.to_string_lossy().into_owned();
        let mut gen = vec!["--out-dir", &dir, "gen-data", "--skill", skill, "--corpus", &corpus, "--n", "100", "--seed", "0", "--allow-partial"];
        gen.extend(extra);
        self.run(&gen)?;
        let triads = format!("{dir}/triads.jsonl");
        let n = std::fs::read_to_string(self.work.join(&triads)).map_err(|e| e.to_string())?.lines().count();
        self.run(&["--out-dir", &format!("{dir}/prune"), "prune", "--triads", &triads])?;
        let take = discover.to_string();
        self.plain(&["--out-dir", &format!("{dir}/effects"), "mediate", "--graphs", &format!("{dir}/prune"), "--take", &take])?;
        self.plain(&[
            "--out-dir", &format!("{dir}/skill"), "skill-graph", "--effects", &format!("{dir}/effects/effects.csv"),
            "--delta", delta, "--skill", skill,
        ])?;
        Ok(n)
    }
}

fn lossless(g: &Gpt2) -> Outcome {
    let lines: Vec<String> = std::fs::read_to_string(core_fixture("corpus/sentences.txt"))
        .map_err(|e| e.to_string())?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    let prompts: Vec<String> = (0..100)
        .map(|k| {
            let words: Vec<&str> = lines[k % lines.len()].split_whitespace().collect();
            words[..words.len().min(1 + k * 7 % 25)].join(" ")
        })
        .collect();
    std::fs::write(g.work.join("prompts.txt"), prompts.join("\n") + "\n").map_err(|e| e.to_string())?;
    let t = Instant::now();
    g.run(&["--out-dir", "lossless", "check-decomp", "--prompts", "prompts.txt", "--max-tokens", "30", "--tol", &LOSSLESS_TOL.to_string()])
        .ok();
    let secs = t.elapsed().as_secs_f64();
    let r = read_json(&g.work.join("lossless/check_decomp.json"))?;
    let err = num(&r["max_abs_logit_error"])?;
    let rate = num(&r["argmax_match_rate"])?;
    let n = r["n_prompts"].as_u64().unwrap_or(0);
    let msg = format!("{n} prompts, max error {err:.2e}, argmax match {:.1}%, {secs:.0}s", rate * 100.0);
    if n == 100 && err <= LOSSLESS_TOL && rate == 1.0 && secs < LOSSLESS_SECS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn faithfulness(g: &Gpt2) -> Outcome {
    let mut fracs = Vec::new();
    let mut faithful = 0;
    for i in 0..20 {
        let r = read_json(&g.work.join(format!("pvt/prune/reports/{i:05}_ori.json")))?;
        fracs.push(num(&r["deleted_fraction"])?);
        faithful += usize::from(r["final_top1"] == r["target_token"]);
    }
    let mean = fracs.iter().sum::<f64>() / fracs.len() as f64;
    let msg = format!("{faithful}/20 keep the top-1, mean deleted fraction {mean:.3} (target {DELETED_TARGET}±{DELETED_TOL})");
    if faithful == 20 && (mean - DELETED_TARGET).abs() <= DELETED_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn removal(g: &Gpt2, n: usize) -> Outcome {
    g.run(&[
        "--out-dir", "removal", "analyze", "removal", "--triads", "pvt/triads.jsonl", "--graphs", "pvt/prune",
        "--skip", "50", "--remove", "paths:pvt/skill/skill_graph.json", "random-like:pvt/skill/skill_graph.json:1",
    ])?;
    let r = read_json(&g.work.join("removal/removal.json"))?;
    let skill = num(&r[0]["outcome"]["accuracy"])?;
    let random = num(&r[1]["outcome"]["accuracy"])?;
    let msg = format!("{n} triads, held-out accuracy {skill:.2} without skill paths, {random:.2} without random edges");
    if n == 100 && skill <= REMOVAL_SKILL_MAX && random >= REMOVAL_RANDOM_MIN {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn key_layers(g: &Gpt2, skill: &str) -> Result<Vec<usize>, String> {
    let out = format!("{skill}/receivers");
    g.plain(&["--out-dir", &out, "analyze", "receivers", "--skill-graph", &format!("{skill}/skill/skill_graph.json"), "--threshold", "10"])?;
    let r = read_json(&g.work.join(out).join("receivers.json"))?;
    r["key_receivers"]
        .as_array()
        .ok_or("missing key_receivers")?
        .iter()
        .map(|n| n[0].as_u64().map(|l| l as usize).ok_or_else(|| format!("bad node {n}")))
        .collect()
}

fn stratification(g: &Gpt2, n_pvt: usize, n_idt: usize) -> Outcome {
    let pvt = key_layers(g, "pvt")?;
    let idt = key_layers(g, "idt")?;
    let low = pvt.iter().filter(|&&l| matches!(l, 1 | 2 | 11)).count();
    let share = if pvt.is_empty() { 0.0 } else { low as f64 / pvt.len() as f64 };
    let high_idt = idt.iter().filter(|&&l| l > 6 && l != 11).count();
    let msg = format!(
        "PVT: {low}/{} key receivers in layers 1, 2, 11; IDT: {high_idt}/{} above layer 6 outside layer 11",
        pvt.len(),
        idt.len()
    );
    if n_pvt == 100 && n_idt == 100 && !pvt.is_empty() && share >= PVT_STRATA_MIN && high_idt == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn inclusiveness(g: &Gpt2) -> Outcome {
    g.plain(&[
        "--out-dir", "inclusive", "analyze", "overlap", "--a", "idt/skill/skill_graph.json", "--b", "pvt/skill/skill_graph.json",
        "--shuffles", "20", "--seed", "0",
    ])?;
    let r = read_json(&g.work.join("inclusive/overlap.json"))?;
    let ov = num(&r["overlap"])?;
    let sh = num(&r["shuffled_mean"])?;
    let msg = format!("overlap {ov:.3} vs {sh:.3} against shuffled PVT graphs");
    if ov - sh >= INCLUSIVE_MARGIN {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------

fn report(name: &str, outcome: &Outcome) {
    match outcome {
        Ok(m) => println!("PASS {name}: {m}"),
        Err(m) => println!("FAIL {name}: {m}"),
    }
}

fn main() {
    let scratch = tempfile::tempdir().expect("tempdir");
    let sub = |n: &str| {
        let p = scratch.path().join(n);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let mut attainable_failed = false;
    for (name, outcome) in [
        ("toy-model oracle equivalence", toy_oracle()),
        ("metric invariants", metric_invariants(&sub("metrics"))),
        ("determinism", determinism(&sub("determinism"))),
    ] {
        report(name, &outcome);
        attainable_failed |= outcome.is_err();
    }

    let gpt2_names = [
        "lossless decomposition",
        "pruning faithfulness",
        "removal experiment",
        "stratification",
        "inclusiveness",
    ];
    match Gpt2::locate(scratch.path()) {
        None => {
            for name in gpt2_names {
                println!("FAIL {name}: blocked, SKILLPATH_GPT2_DIR is not set (no pretrained checkpoint available)");
            }
        }
        Some(g) => {
            report(gpt2_names[0], &lossless(&g));
            let pvt = g.pipeline("pvt", &[], "0.6", 50);
            let idt = g.pipeline("idt", &["--variant", "bkg1"], "0.7", usize::MAX);
            match (&pvt, &idt) {
                (Ok(np), Ok(ni)) => {
                    report(gpt2_names[1], &faithfulness(&g));
                    report(gpt2_names[2], &removal(&g, *np));
                    report(gpt2_names[3], &stratification(&g, *np, *ni));
                    report(gpt2_names[4], &inclusiveness(&g));
                }
                _ => {
                    let e = pvt.err().or(idt.err()).unwrap_or_default();
                    for name in &gpt2_names[1..] {
                        println!("FAIL {name}: pipeline failed: {e}");
                    }
                }
            }
        }
    }
    if attainable_failed {
        std::process::exit(1);
    }
}
