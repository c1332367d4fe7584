//! Triad construction for the previous-token, induction and in-context-learning skills.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mediation::SampleTriad;
use crate::model_io::{Gpt2Tokenizer, ModelParams, TokenSequence};
use crate::reference::{forward, greedy_continue};
use crate::scalar::Scalar;

pub const IDT_MAX_TOKENS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenOptions {
    pub n: usize,
    pub seed: u64,
    /// Return what could be produced instead of failing when the corpus runs out.
    pub allow_partial: bool,
}

impl GenOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            allow_partial: false,
        }
    }

    fn finish(&self, mut out: Vec<SampleTriad>) -> Result<Vec<SampleTriad>> {
        if out.len() < self.n && !self.allow_partial {
            return Err(Error::CorpusExhausted {
                wanted: self.n,
                produced: out.len(),
            });
        }
        out.truncate(self.n);
        Ok(out)
    }
}

/// Non-empty lines of a UTF-8 text file.
pub fn read_lines(path: &FsPath) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// `text<TAB>label` rows.
pub fn read_tsv_pairs(path: &FsPath) -> Result<Vec<(String, String)>> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let (t, lab) = l
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format(format!("{}:{}: expected text<TAB>label", path.display(), i + 1)))?;
            Ok((t.to_string(), lab.trim().to_string()))
        })
        .collect()
}

fn top1<T: Scalar>(params: &ModelParams<T>, ids: &[u32]) -> Result<u32> {
    Ok(forward(params, &TokenSequence::new(ids.to_vec()))?.argmax())
}

fn alnum_start(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_alphanumeric)
}

fn alnum_end(s: &str) -> bool {
    s.chars().last().is_some_and(char::is_alphanumeric)
}

/// Two tokens form one word when the second continues the first without a space.
pub fn is_within_word(first: &str, second: &str) -> bool {
    alnum_end(first) && alnum_start(second)
}

// ---------------------------------------------------------------- PVT

/// Two-token samples: background is the first token, self the second.
/// Half are within-word pairs where the corpus allows it.
pub fn gen_pvt<T: Scalar>(
    tokenizer: &Gpt2Tokenizer,
    params: &ModelParams<T>,
    lines: &[String],
    opts: &GenOptions,
) -> Result<Vec<SampleTriad>> {
    if opts.n == 0 {
        return Ok(Vec::new());
    }
    let mut seen = BTreeSet::new();
    let mut within = Vec::new();
    let mut cross = Vec::new();
    for line in lines {
        let ids = tokenizer.encode(line)?;
        for w in ids.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !seen.insert((a, b)) {
                continue;
            }
            let (sa, sb) = (tokenizer.token_str(a)?, tokenizer.token_str(b)?);
            let text = format!("{sa}{sb}");
            if text.contains('\n') || sa.trim().is_empty() || sb.trim().is_empty() {
                continue;
            }
            // Each part must survive a round trip through the tokenizer.
            if tokenizer.encode(&text)? != [a, b] || tokenizer.encode(&sa)? != [a] || tokenizer.encode(&sb)? != [b] {
                continue;
            }
            if is_within_word(&sa, &sb) {
                within.push((a, b, text, sa, sb));
            } else {
                cross.push((a, b, text, sa, sb));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    within.shuffle(&mut rng);
    cross.shuffle(&mut rng);
    let half = opts.n / 2;
    let take_within = half.max(opts.n.saturating_sub(cross.len())).min(within.len());
    let take_cross = (opts.n - take_within).min(cross.len());
    let chosen: Vec<_> = within.into_iter().take(take_within).chain(cross.into_iter().take(take_cross)).collect();
    let out = chosen
        .into_par_iter()
        .map(|(a, b, text, sa, sb)| {
            let out = top1(params, &[a, b])?;
            Ok(SampleTriad {
                text,
                background_text: sa,
                self_text: sb,
                output: Some(tokenizer.token_str(out)?),
                skill_tag: "pvt".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    opts.finish(out)
}

// ---------------------------------------------------------------- IDT

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdtBackground {
    /// Replace A2 with the model's best token other than A1/A2.
    #[default]
    Bkg1,
    /// Delete A2.
    Bkg2,
    /// Delete A1.
    Bkg3,
    /// Replace B with the model's best token other than B.
    Bkg4,
}

/// Token span `[start, end)` forming one word, with its trimmed surface form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Groups tokens into words: a token continues the previous word when it
/// starts alphanumerically without a leading space and the previous token
/// ends alphanumerically.
pub fn split_words(tokenizer: &Gpt2Tokenizer, ids: &[u32]) -> Result<Vec<Word>> {
    let mut words: Vec<Word> = Vec::new();
    let mut prev = String::new();
    for (i, &id) in ids.iter().enumerate() {
        let s = tokenizer.token_str(id)?;
        if i > 0 && is_within_word(&prev, &s) {
            let w = words.last_mut().expect("word in progress");
            w.end = i + 1;
            w.text.push_str(s.trim());
        } else {
            words.push(Word {
                start: i,
                end: i + 1,
                text: s.trim().to_string(),
            });
        }
        prev = s;
    }
    Ok(words)
}

/// Earliest `A1 B ... A2` match: word indices `(a1, a2)` with `a2 ≥ a1 + 2`
/// and A2 ending within `max_tokens`.
pub fn find_induction(words: &[Word], max_tokens: usize) -> Option<(usize, usize)> {
    for (j, w2) in words.iter().enumerate() {
        if w2.end > max_tokens {
            break;
        }
        if !w2.text.chars().any(char::is_alphabetic) {
            continue;
        }
        if let Some(i) = (0..j.saturating_sub(1)).find(|&i| words[i].text == w2.text) {
            return Some((i, j));
        }
    }
    None
}

fn idt_sample<T: Scalar>(
    tokenizer: &Gpt2Tokenizer,
    params: &ModelParams<T>,
    line: &str,
    variant: IdtBackground,
) -> Result<Option<SampleTriad>> {
    let ids = tokenizer.encode(line)?;
    if ids.len() > params.config.n_ctx {
        return Ok(None);
    }
    let words = split_words(tokenizer, &ids)?;
    let Some((a1, a2)) = find_induction(&words, IDT_MAX_TOKENS) else {
        return Ok(None);
    };
    let (w1, w2) = (&words[a1], &words[a2]);
    let sample = &ids[..w2.end];
    let prefix = &ids[..w2.start];
    let a1_ids = &ids[w1.start..w1.end];
    let a2_ids = &ids[w2.start..w2.end];
    let background_ids: Vec<u32> = match variant {
        IdtBackground::Bkg1 => {
            let banned: BTreeSet<u32> = a1_ids.iter().chain(a2_ids).copied().collect();
            let cont = greedy_continue(params, &TokenSequence::new(prefix.to_vec()), 1, &banned)?;
            cont.ids().to_vec()
        }
        IdtBackground::Bkg2 => prefix.to_vec(),
        IdtBackground::Bkg3 => ids[..w1.start].iter().chain(&ids[w1.end..w2.end]).copied().collect(),
        IdtBackground::Bkg4 => {
            let b = &words[a1 + 1];
            let banned: BTreeSet<u32> = ids[b.start..b.end].iter().copied().collect();
            let c = greedy_continue(params, &TokenSequence::new(ids[..b.start].to_vec()), 1, &banned)?;
            let c = *c.ids().last().expect("one generated token");
            ids[..b.start].iter().copied().chain([c]).chain(ids[b.end..w2.end].iter().copied()).collect()
        }
    };
    let background_text = tokenizer.decode(&background_ids)?;
    if background_text.trim().is_empty() {
        return Ok(None);
    }
    if variant == IdtBackground::Bkg1 {
        // The replacement must still differ from A1 once the text is re-tokenized.
        let re = tokenizer.encode(&background_text)?;
        if re.last().is_none_or(|last| a1_ids.contains(last) || a2_ids.contains(last)) {
            return Ok(None);
        }
    }
    let text = tokenizer.decode(sample)?;
    if tokenizer.encode(&text)? != sample {
        return Ok(None);
    }
    let out = top1(params, sample)?;
    Ok(Some(SampleTriad {
        text,
        background_text,
        self_text: tokenizer.decode(a2_ids)?,
        output: Some(tokenizer.token_str(out)?),
        skill_tag: "idt".into(),
    }))
}

/// Induction samples `... A1 B ... A2` of at most 30 tokens, one per line at most.
pub fn gen_idt<T: Scalar>(
    tokenizer: &Gpt2Tokenizer,
    params: &ModelParams<T>,
    lines: &[String],
    variant: IdtBackground,
    opts: &GenOptions,
) -> Result<Vec<SampleTriad>> {
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let mut out = Vec::new();
    for chunk in order.chunks(64) {
        if out.len() >= opts.n {
            break;
        }
        let got: Vec<Option<SampleTriad>> = chunk
            .par_iter()
            .map(|&i| idt_sample(tokenizer, params, &lines[i], variant))
            .collect::<Result<_>>()?;
        out.extend(got.into_iter().flatten());
    }
    opts.finish(out)
}

// ---------------------------------------------------------------- ICL

/// A demonstration template such as `"{text} Sentiment: {label}"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IclTemplate {
    before: String,
    between: String,
    after: String,
    pub separator: String,
}

impl IclTemplate {
    pub fn parse(spec: &str) -> Result<Self> {
        let (before, rest) = spec
            .split_once("{text}")
            .ok_or_else(|| Error::Template(format!("`{spec}` has no {{text}} placeholder")))?;
        let (between, after) = rest
            .split_once("{label}")
            .ok_or_else(|| Error::Template(format!("`{spec}` has no {{label}} placeholder after {{text}}")))?;
        if between.trim().is_empty() {
            return Err(Error::Template(format!("`{spec}` has no label prompt between {{text}} and {{label}}")));
        }
        if after.contains("{text}") || after.contains("{label}") || before.contains("{label}") {
            return Err(Error::Template(format!("`{spec}` repeats a placeholder")));
        }
        Ok(Self {
            before: before.into(),
            between: between.into(),
            after: after.into(),
            separator: "\n".into(),
        })
    }

    pub fn demo(&self, text: &str, label: &str) -> String {
        format!("{}{}{}{}{}", self.before, text, self.between, label, self.after)
    }

    /// The demonstration cut right after the label prompt.
    pub fn query(&self, text: &str) -> String {
        format!("{}{}{}", self.before, text, self.between.trim_end())
    }

    /// Demonstrations then the query, one per line.
    pub fn compose(&self, demos: &[(&str, &str)], query_text: &str) -> String {
        let mut parts: Vec<String> = demos.iter().map(|(t, l)| self.demo(t, l)).collect();
        parts.push(self.query(query_text));
        parts.join(&self.separator)
    }

    /// Label prompt with a single leading space, e.g. `" Sentiment:"`.
    pub fn label_prompt(&self) -> String {
        format!(" {}", self.between.trim())
    }
}

/// Two demonstrations with different labels followed by a query; only
/// samples the model answers with the query's label are kept.
pub fn gen_icl<T: Scalar>(
    tokenizer: &Gpt2Tokenizer,
    params: &ModelParams<T>,
    pairs: &[(String, String)],
    template: &IclTemplate,
    opts: &GenOptions,
) -> Result<Vec<SampleTriad>> {
    let labels: BTreeSet<&str> = pairs.iter().map(|(_, l)| l.as_str()).collect();
    if labels.len() < 2 {
        return Err(Error::InvalidArgument("ICL generation needs at least two distinct labels".into()));
    }
    if opts.n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut queries: Vec<usize> = (0..pairs.len()).collect();
    queries.shuffle(&mut rng);
    let candidates: Vec<(usize, usize, usize)> = queries
        .into_iter()
        .filter_map(|q| {
            for _ in 0..64 {
                let d1 = rng.random_range(0..pairs.len());
                let d2 = rng.random_range(0..pairs.len());
                if d1 != q && d2 != q && d1 != d2 && pairs[d1].1 != pairs[d2].1 {
                    return Some((q, d1, d2));
                }
            }
            None
        })
        .collect();
    let build = |&(q, d1, d2): &(usize, usize, usize)| -> Result<Option<SampleTriad>> {
        let query = template.query(&pairs[q].0);
        let demos = [(pairs[d1].0.as_str(), pairs[d1].1.as_str()), (pairs[d2].0.as_str(), pairs[d2].1.as_str())];
        let text = template.compose(&demos, &pairs[q].0);
        let ids = tokenizer.encode(&text)?;
        if ids.len() > params.config.n_ctx {
            return Ok(None);
        }
        let want = tokenizer.encode(&format!(" {}", pairs[q].1))?;
        let out = top1(params, &ids)?;
        if want.first() != Some(&out) {
            return Ok(None);
        }
        Ok(Some(SampleTriad {
            text,
            background_text: query,
            self_text: template.label_prompt(),
            output: Some(tokenizer.token_str(out)?),
            skill_tag: "icl".into(),
        }))
    };
    let mut out = Vec::new();
    for chunk in candidates.chunks(32) {
        if out.len() >= opts.n {
            break;
        }
        let got: Vec<Option<SampleTriad>> = chunk.par_iter().map(build).collect::<Result<_>>()?;
        out.extend(got.into_iter().flatten());
    }
    opts.finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parts() {
        let t = IclTemplate::parse("{text} Sentiment: {label}").unwrap();
        assert_eq!(t.demo("great film", "positive"), "great film Sentiment: positive");
        assert_eq!(t.query("dull"), "dull Sentiment:");
        assert_eq!(t.label_prompt(), " Sentiment:");
        let qa = IclTemplate::parse("{text} A: {label}").unwrap();
        assert_eq!(qa.label_prompt(), " A:");
        assert!(IclTemplate::parse("{label} then {text}").is_err());
        assert!(IclTemplate::parse("{text}{label}").is_err());
        assert!(IclTemplate::parse("no placeholders").is_err());
    }

    #[test]
    fn within_word_rule() {
        assert!(is_within_word("ch", "inese"));
        assert!(!is_within_word(" that", " most"));
        assert!(!is_within_word("1", "."));
        assert!(!is_within_word(":", " chinese"));
    }

    #[test]
    fn induction_match_needs_a_gap_word() {
        let w = |s: usize, t: &str| Word { start: s, end: s + 1, text: t.into() };
        assert_eq!(find_induction(&[w(0, "a"), w(1, "b"), w(2, "a")], 30), Some((0, 2)));
        assert_eq!(find_induction(&[w(0, "a"), w(1, "a")], 30), None);
        assert_eq!(find_induction(&[w(0, "."), w(1, "b"), w(2, ".")], 30), None);
        assert_eq!(find_induction(&[w(0, "a"), w(1, "b"), w(40, "a")], 30), None);
    }
}
