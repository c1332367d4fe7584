use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use skillpath::datagen::{
    gen_icl, gen_idt, gen_pvt, is_within_word, read_lines, read_tsv_pairs, split_words, GenOptions, IclTemplate,
    IdtBackground,
};
use skillpath::mediation::TokenizedTriad;
use skillpath::model_io::{Gpt2Tokenizer, ModelConfig, ModelParams};
use skillpath::Error;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn tokenizer() -> &'static Gpt2Tokenizer {
    static TOK: OnceLock<Gpt2Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| Gpt2Tokenizer::from_dir(&fixtures().join("gpt2")).unwrap())
}

/// Small random model over the full GPT-2 vocabulary.
fn model() -> &'static ModelParams<f32> {
    static M: OnceLock<ModelParams<f32>> = OnceLock::new();
    M.get_or_init(|| ModelParams::random(ModelConfig::toy(1, 2, 16, 50257), 5, 0.3).unwrap())
}

fn lines() -> Vec<String> {
    read_lines(&fixtures().join("corpus/sentences.txt")).unwrap()
}

#[test]
fn pvt_samples_are_adjacent_pairs() {
    let tok = tokenizer();
    let out = gen_pvt(tok, model(), &lines(), &GenOptions::new(40, 1)).unwrap();
    assert_eq!(out.len(), 40);
    let mut within = 0;
    for t in &out {
        assert_eq!(format!("{}{}", t.background_text, t.self_text), t.text);
        assert_eq!(tok.encode(&t.text).unwrap().len(), 2);
        assert_eq!(tok.encode(&t.background_text).unwrap().len(), 1);
        assert_eq!(tok.encode(&t.self_text).unwrap().len(), 1);
        within += usize::from(is_within_word(&t.background_text, &t.self_text));
        TokenizedTriad::from_triad(t, tok, model()).unwrap();
    }
    // Half within-word when the corpus has enough of them.
    assert!((10..=20).contains(&within), "{within}");
    let again = gen_pvt(tok, model(), &lines(), &GenOptions::new(40, 1)).unwrap();
    assert_eq!(again, out);
}

#[test]
fn pvt_edge_cases() {
    let tok = tokenizer();
    assert!(gen_pvt(tok, model(), &lines(), &GenOptions::new(0, 1)).unwrap().is_empty());
    let few = vec!["a b".to_string()];
    match gen_pvt(tok, model(), &few, &GenOptions::new(5, 0)) {
        Err(Error::CorpusExhausted { wanted: 5, produced: 1 }) => {}
        other => panic!("{other:?}"),
    }
    let partial = GenOptions { allow_partial: true, ..GenOptions::new(5, 0) };
    assert_eq!(gen_pvt(tok, model(), &few, &partial).unwrap().len(), 1);
}

#[test]
fn pvt_known_example() {
    let tok = tokenizer();
    let line = vec![" that most".to_string()];
    let out = gen_pvt(tok, model(), &line, &GenOptions::new(1, 0)).unwrap();
    assert_eq!(out[0].text, " that most");
    assert_eq!(out[0].background_text, " that");
    assert_eq!(out[0].self_text, " most");
}

#[test]
fn idt_known_example_and_variants() {
    let tok = tokenizer();
    let line = vec!["chinese lesson 1.2: chinese".to_string()];
    let ids = tok.encode(&line[0]).unwrap();
    let words: Vec<String> = split_words(tok, &ids).unwrap().into_iter().map(|w| w.text).collect();
    assert_eq!(words.first().unwrap(), "chinese");
    assert_eq!(words.last().unwrap(), "chinese");
    let run = |v| gen_idt(tok, model(), &line, v, &GenOptions::new(1, 0)).unwrap().remove(0);
    let b1 = run(IdtBackground::Bkg1);
    assert_eq!(b1.text, "chinese lesson 1.2: chinese");
    assert_eq!(b1.self_text, " chinese");
    assert!(b1.background_text.starts_with("chinese lesson 1.2:"));
    let a1: BTreeSet<u32> = tok.encode("chinese").unwrap().into_iter().chain(tok.encode(" chinese").unwrap()).collect();
    let last = *tok.encode(&b1.background_text).unwrap().last().unwrap();
    assert!(!a1.contains(&last));
    assert_eq!(run(IdtBackground::Bkg2).background_text, "chinese lesson 1.2:");
    assert_eq!(run(IdtBackground::Bkg3).background_text, " lesson 1.2: chinese");
    let b4 = run(IdtBackground::Bkg4).background_text;
    assert!(b4.starts_with("chinese") && b4.ends_with(" 1.2: chinese") && !b4.contains("lesson"), "{b4}");
}

#[test]
fn idt_corpus_samples_hold_invariants() {
    let tok = tokenizer();
    let opts = GenOptions { allow_partial: true, ..GenOptions::new(100, 3) };
    let out = gen_idt(tok, model(), &lines(), IdtBackground::Bkg1, &opts).unwrap();
    assert!(out.len() >= 8, "{}", out.len());
    for t in &out {
        let ids = tok.encode(&t.text).unwrap();
        assert!(ids.len() <= 30);
        assert!(t.text.ends_with(&t.self_text));
        let a2 = t.self_text.trim();
        assert!(t.text[..t.text.len() - t.self_text.len()].contains(a2));
        TokenizedTriad::from_triad(t, tok, model()).unwrap();
    }
    assert!(gen_idt(tok, model(), &["no repeats here at all".to_string()], IdtBackground::Bkg1, &GenOptions::new(1, 0)).is_err());
}

/// Random model whose final layernorm ignores its input and points at `target`.
fn always(target: u32) -> ModelParams<f32> {
    let mut p = model().clone();
    let row: Vec<f32> = p.token_embedding.row(target as usize).iter().map(|v| v * 10.0).collect();
    p.token_embedding.row_mut(target as usize).copy_from_slice(&row);
    p.ln_f.weight.fill(0.0);
    p.ln_f.bias.copy_from_slice(&row);
    p
}

#[test]
fn icl_samples_follow_template_and_filter() {
    let tok = tokenizer();
    let pairs = read_tsv_pairs(&fixtures().join("corpus/sentiment.tsv")).unwrap();
    let template = IclTemplate::parse("{text} Sentiment: {label}").unwrap();
    let positive = tok.encode(" positive").unwrap()[0];
    let p = always(positive);
    let out = gen_icl(tok, &p, &pairs, &template, &GenOptions::new(6, 2)).unwrap();
    assert_eq!(out.len(), 6);
    for t in &out {
        assert_eq!(t.self_text, " Sentiment:");
        assert_eq!(t.output.as_deref(), Some(" positive"));
        let lines: Vec<&str> = t.text.split('\n').collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], t.background_text);
        assert!(t.background_text.ends_with(" Sentiment:"));
        let l0 = lines[0].rsplit(' ').next().unwrap();
        let l1 = lines[1].rsplit(' ').next().unwrap();
        assert_ne!(l0, l1);
        let query = t.background_text.trim_end_matches(" Sentiment:");
        assert!(pairs.iter().any(|(q, l)| q == query && l == "positive"));
        TokenizedTriad::from_triad(t, tok, &p).unwrap();
    }
    let one_label: Vec<(String, String)> = pairs.iter().filter(|(_, l)| l == "positive").cloned().collect();
    assert!(gen_icl(tok, &p, &one_label, &template, &GenOptions::new(1, 0)).is_err());
    // A model that never answers " positive" cannot fill a positive-only quota.
    let negative = tok.encode(" negative").unwrap()[0];
    let q = always(negative);
    let out = gen_icl(tok, &q, &pairs, &template, &GenOptions { allow_partial: true, ..GenOptions::new(50, 2) }).unwrap();
    assert!(out.iter().all(|t| t.output.as_deref() == Some(" negative")));
}

#[test]
fn icl_compose_matches_known_layout() {
    let t = IclTemplate::parse("{text} Sentiment: {label}").unwrap();
    let s = t.compose(&[("great", "positive"), ("awful", "negative")], "fine");
    assert_eq!(s, "great Sentiment: positive\nawful Sentiment: negative\nfine Sentiment:");
}
