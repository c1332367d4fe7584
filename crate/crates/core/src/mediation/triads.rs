//! Sample triads and their pruned graphs.
//!
//! Triad corpora are JSONL, one object per line:
//!
//! ```json
//! {"text": " that most", "background_text": " that", "self_text": " most",
//!  "output": " of", "skill_tag": "pvt"}
//! ```
//!
//! `output` is optional; when present it must match the model's top-1.

use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CircuitGraph;
use crate::model_io::{Gpt2Tokenizer, ModelParams, TokenSequence};
use crate::pruning::{greedy_prune, PruneConfig, PruneReport};
use crate::reference::forward;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTriad {
    pub text: String,
    pub background_text: String,
    pub self_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub skill_tag: String,
}

impl SampleTriad {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("text", &self.text),
            ("background_text", &self.background_text),
            ("self_text", &self.self_text),
        ] {
            if t.is_empty() {
                return Err(Error::Format(format!("triad field `{name}` is empty")));
            }
        }
        Ok(())
    }
}

pub fn read_triads(path: &FsPath) -> Result<Vec<SampleTriad>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let t: SampleTriad = serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            t.validate()?;
            Ok(t)
        })
        .collect()
}

pub fn write_triads(path: &FsPath, triads: &[SampleTriad]) -> Result<()> {
    let mut out = Vec::new();
    for t in triads {
        serde_json::to_writer(&mut out, t)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// A triad as token sequences with the verified top-1 of the original text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedTriad {
    pub text: TokenSequence,
    pub background: TokenSequence,
    pub self_text: TokenSequence,
    pub expected_output: u32,
}

impl TokenizedTriad {
    /// Tokenizes and recomputes the expected output with the reference model.
    pub fn from_triad<T: Scalar>(
        triad: &SampleTriad,
        tokenizer: &Gpt2Tokenizer,
        params: &ModelParams<T>,
    ) -> Result<Self> {
        triad.validate()?;
        let enc = |s: &str| -> Result<TokenSequence> {
            let seq = TokenSequence::new(tokenizer.encode(s)?);
            seq.check_input(&params.config)?;
            Ok(seq)
        };
        let text = enc(&triad.text)?;
        let expected_output = forward(params, &text)?.argmax();
        if let Some(out) = &triad.output {
            let shown = tokenizer.decode(&[expected_output])?;
            if &shown != out {
                return Err(Error::Format(format!(
                    "triad {:?}: recorded output {:?} but the model predicts {:?}",
                    triad.text, out, shown
                )));
            }
        }
        Ok(Self {
            text,
            background: enc(&triad.background_text)?,
            self_text: enc(&triad.self_text)?,
            expected_output,
        })
    }

    pub fn from_ids<T: Scalar>(
        params: &ModelParams<T>,
        text: Vec<u32>,
        background: Vec<u32>,
        self_text: Vec<u32>,
    ) -> Result<Self> {
        let text = TokenSequence::new(text);
        let expected_output = forward(params, &text)?.argmax();
        Ok(Self {
            text,
            background: TokenSequence::new(background),
            self_text: TokenSequence::new(self_text),
            expected_output,
        })
    }
}

/// Pruned graphs of the three triad members.
#[derive(Clone, Debug, PartialEq)]
pub struct TriadGraphs {
    pub ori: CircuitGraph,
    pub bkg: CircuitGraph,
    pub slf: CircuitGraph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriadReports {
    pub ori: PruneReport,
    pub bkg: PruneReport,
    pub slf: PruneReport,
}

/// Three independent searches; each preserves its own text's top-1.
pub fn build_triad_graphs<T: Scalar>(
    params: &ModelParams<T>,
    triad: &TokenizedTriad,
    config: &PruneConfig,
    sample_id: u64,
) -> Result<(TriadGraphs, TriadReports)> {
    let base = sample_id.wrapping_mul(3);
    let (ori, r_ori) = greedy_prune(params, &triad.text, config, base)?;
    let (bkg, r_bkg) = greedy_prune(params, &triad.background, config, base + 1)?;
    let (slf, r_slf) = greedy_prune(params, &triad.self_text, config, base + 2)?;
    Ok((
        TriadGraphs { ori, bkg, slf },
        TriadReports {
            ori: r_ori,
            bkg: r_bkg,
            slf: r_slf,
        },
    ))
}

pub fn build_all_triad_graphs<T: Scalar>(
    params: &ModelParams<T>,
    triads: &[TokenizedTriad],
    config: &PruneConfig,
) -> Result<Vec<(TriadGraphs, TriadReports)>> {
    triads
        .par_iter()
        .enumerate()
        .map(|(i, t)| build_triad_graphs(params, t, config, i as u64))
        .collect()
}
