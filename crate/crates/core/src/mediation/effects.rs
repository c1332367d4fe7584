//! Path effects over triad populations and skill-graph extraction.
//!
//! For a candidate path `P` and `N` triads, `eff_ori(P)` is the fraction of
//! triads whose original-text graph contains `P` (likewise `eff_bkg`,
//! `eff_slf`), and `eff_skill(P)` the fraction where `P` is present in the
//! original graph and absent from both the background and self graphs of
//! the same triad.
//!
//! Effect CSV columns: `path,eff_ori,eff_bkg,eff_slf,eff_skill,n_all`, with
//! `path` a JSON node list such as `[[0,13],[1,6]]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::triads::TriadGraphs;
use crate::analytics::RemovalSample;
use crate::circuit::{masked_forward, AblationStrategy};
use crate::error::{Error, Result};
use crate::graph::{enumerate_paths, EdgeMask, EdgeUniverse, Path, SkillGraph, SkillPath};
use crate::model_io::ModelParams;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_NODES: usize = 4;
pub const DEFAULT_DELTA_PVT: f64 = 0.6;
pub const DEFAULT_DELTA_IDT: f64 = 0.7;
pub const DEFAULT_DELTA_ICL: f64 = 0.8;

/// Default threshold for a skill tag, if it names one of the known skills.
pub fn default_delta(skill: &str) -> Option<f64> {
    match skill.to_ascii_lowercase().as_str() {
        "pvt" => Some(DEFAULT_DELTA_PVT),
        "idt" => Some(DEFAULT_DELTA_IDT),
        s if s.starts_with("icl") => Some(DEFAULT_DELTA_ICL),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectCounts {
    pub ori: usize,
    pub bkg: usize,
    pub slf: usize,
    pub skill: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    pub eff_ori: f64,
    pub eff_bkg: f64,
    pub eff_slf: f64,
    pub eff_skill: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectTable {
    pub universe: EdgeUniverse,
    pub n_all: usize,
    pub rows: BTreeMap<Path, EffectCounts>,
}

impl EffectTable {
    pub fn effects(&self, path: &Path) -> Option<Effects> {
        self.rows.get(path).map(|c| self.to_effects(c))
    }

    fn to_effects(&self, c: &EffectCounts) -> Effects {
        let n = self.n_all.max(1) as f64;
        Effects {
            eff_ori: c.ori as f64 / n,
            eff_bkg: c.bkg as f64 / n,
            eff_slf: c.slf as f64 / n,
            eff_skill: c.skill as f64 / n,
        }
    }

    pub fn iter_effects(&self) -> impl Iterator<Item = (&Path, Effects)> + '_ {
        self.rows.iter().map(|(p, c)| (p, self.to_effects(c)))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sums counts path-wise. Paths missing from one table count as zero
    /// there, which is exact for `ori` and `skill` counts (a path absent
    /// from a table's candidates is absent from all of its original graphs).
    pub fn merge(&self, other: &EffectTable) -> Result<EffectTable> {
        if self.universe != other.universe {
            return Err(Error::UniverseMismatch(format!("{:?} vs {:?}", self.universe, other.universe)));
        }
        let mut rows = self.rows.clone();
        for (p, c) in &other.rows {
            let r = rows.entry(p.clone()).or_default();
            r.ori += c.ori;
            r.bkg += c.bkg;
            r.slf += c.slf;
            r.skill += c.skill;
        }
        Ok(EffectTable {
            universe: self.universe,
            n_all: self.n_all + other.n_all,
            rows,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "eff_ori", "eff_bkg", "eff_slf", "eff_skill", "n_all"])?;
        for (p, e) in self.iter_effects() {
            w.write_record([
                p.key(),
                e.eff_ori.to_string(),
                e.eff_bkg.to_string(),
                e.eff_slf.to_string(),
                e.eff_skill.to_string(),
                self.n_all.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).expect("utf-8 csv"))
    }

    /// Parses the CSV written by [`Self::to_csv`]; counts are recovered from
    /// the effects and `n_all`.
    pub fn from_csv(text: &str, universe: EdgeUniverse) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            path: String,
            eff_ori: f64,
            eff_bkg: f64,
            eff_slf: f64,
            eff_skill: f64,
            n_all: usize,
        }
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows = BTreeMap::new();
        let mut n_all: Option<usize> = None;
        for rec in rdr.deserialize() {
            let r: Row = rec?;
            if *n_all.get_or_insert(r.n_all) != r.n_all {
                return Err(Error::Format("inconsistent n_all column".into()));
            }
            let path = Path::parse_key(&r.path)?;
            path.validate(&universe)?;
            let count = |e: f64| -> Result<usize> {
                let c = e * r.n_all as f64;
                if !(0.0..=r.n_all as f64 + 1e-9).contains(&c) {
                    return Err(Error::Format(format!("effect {e} outside [0, 1] for {}", r.path)));
                }
                Ok(c.round() as usize)
            };
            let counts = EffectCounts {
                ori: count(r.eff_ori)?,
                bkg: count(r.eff_bkg)?,
                slf: count(r.eff_slf)?,
                skill: count(r.eff_skill)?,
            };
            if counts.skill > counts.ori {
                return Err(Error::Format(format!("eff_skill exceeds eff_ori for {}", r.path)));
            }
            rows.insert(path, counts);
        }
        Ok(Self {
            universe,
            n_all: n_all.unwrap_or(0),
            rows,
        })
    }

    pub fn load(path: &FsPath, universe: EdgeUniverse) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, universe)
    }
}

/// Effect counts over triads; candidates are the paths of up to `max_nodes`
/// nodes present in any original-text graph.
pub fn compute_effects(triads: &[TriadGraphs], max_nodes: usize) -> Result<EffectTable> {
    let first = triads
        .first()
        .ok_or_else(|| Error::InvalidArgument("compute_effects needs at least one triad".into()))?;
    let universe = *first.ori.universe();
    for t in triads {
        for g in [&t.ori, &t.bkg, &t.slf] {
            if g.universe() != &universe {
                return Err(Error::UniverseMismatch(format!("{:?} vs {:?}", g.universe(), universe)));
            }
        }
    }
    // Per-sample partial counts, reduced in sample order.
    let partial: Vec<Vec<(Path, bool)>> = triads
        .par_iter()
        .map(|t| -> Result<Vec<(Path, bool)>> {
            Ok(enumerate_paths(&t.ori.mask, max_nodes)?
                .map(|p| {
                    let skill = !p.is_present(&t.bkg.mask) && !p.is_present(&t.slf.mask);
                    (p, skill)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rows: BTreeMap<Path, EffectCounts> = BTreeMap::new();
    for sample in partial {
        for (p, skill) in sample {
            let c = rows.entry(p).or_default();
            c.ori += 1;
            c.skill += usize::from(skill);
        }
    }
    let masks: Vec<(&EdgeMask, &EdgeMask)> = triads.iter().map(|t| (&t.bkg.mask, &t.slf.mask)).collect();
    let others: Vec<(usize, usize)> = rows
        .par_iter()
        .map(|(p, _)| {
            masks.iter().fold((0, 0), |(b, s), (bm, sm)| {
                (b + usize::from(p.is_present(bm)), s + usize::from(p.is_present(sm)))
            })
        })
        .collect();
    for (c, (b, s)) in rows.values_mut().zip(others) {
        c.bkg = b;
        c.slf = s;
    }
    Ok(EffectTable {
        universe,
        n_all: triads.len(),
        rows,
    })
}

/// Paths whose skill effect exceeds `delta`, in path order.
pub fn extract_skill_graph(table: &EffectTable, delta: f64) -> Result<SkillGraph> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta must lie in [0, 1), got {delta}")));
    }
    let mut g = SkillGraph::empty(table.universe, delta);
    g.sample_count = Some(table.n_all);
    g.paths = table
        .iter_effects()
        .filter(|(_, e)| e.eff_skill > delta)
        .map(|(p, e)| SkillPath {
            nodes: p.clone(),
            effect: e.eff_skill,
        })
        .collect();
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub path_count: usize,
    pub edge_count: usize,
    pub top1_accuracy: f64,
    /// Mean `KL(G* ‖ G^S)` over the holdout.
    pub kl_to_g_star: f64,
    /// Mean `KL(G ‖ G^S)` over the holdout.
    pub kl_to_g: f64,
}

/// Evaluates the skill graph at each threshold on held-out samples, where
/// only the skill graph's edges are kept.
pub fn sweep_threshold<T: Scalar>(
    params: &ModelParams<T>,
    table: &EffectTable,
    holdout: &[RemovalSample],
    deltas: &[f64],
) -> Result<Vec<SweepRow>> {
    if holdout.is_empty() {
        return Err(Error::InvalidArgument("sweep needs a nonempty holdout".into()));
    }
    let complete = EdgeMask::empty(table.universe);
    let baselines: Vec<_> = holdout
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let full = masked_forward(params, &s.tokens, &complete, AblationStrategy::Zero, i as u64)?.0;
            let star = masked_forward(params, &s.tokens, &s.base.mask, AblationStrategy::Zero, i as u64)?.0;
            Ok((full, star))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let g = extract_skill_graph(table, delta)?;
        let mask = g.to_mask();
        let evals: Vec<(bool, f64, f64)> = holdout
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let logits = masked_forward(params, &s.tokens, &mask, AblationStrategy::Zero, i as u64)?.0;
                let (full, star) = &baselines[i];
                Ok((logits.argmax() == s.expected, star.kl_divergence(&logits), full.kl_divergence(&logits)))
            })
            .collect::<Result<_>>()?;
        let n = evals.len() as f64;
        rows.push(SweepRow {
            delta,
            path_count: g.len(),
            edge_count: g.edge_set().len(),
            top1_accuracy: evals.iter().filter(|e| e.0).count() as f64 / n,
            kl_to_g_star: evals.iter().map(|e| e.1).sum::<f64>() / n,
            kl_to_g: evals.iter().map(|e| e.2).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["delta", "path_count", "edge_count", "top1_accuracy", "kl_to_g_star", "kl_to_g"])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).expect("utf-8 csv"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Against {
    Bkg,
    Slf,
}

pub const DEFAULT_PAIR_FLOORS: [f64; 4] = [0.2, 0.3, 0.4, 0.5];

/// `floor,path,eff_ori,eff_other` rows for every path with `eff_ori > floor`.
pub fn export_effect_pairs(table: &EffectTable, against: Against, floors: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let other = match against {
        Against::Bkg => "eff_bkg",
        Against::Slf => "eff_slf",
    };
    w.write_record(["floor", "path", "eff_ori", other])?;
    for &floor in floors {
        for (p, e) in table.iter_effects().filter(|(_, e)| e.eff_ori > floor) {
            let o = match against {
                Against::Bkg => e.eff_bkg,
                Against::Slf => e.eff_slf,
            };
            w.write_record([floor.to_string(), p.key(), e.eff_ori.to_string(), o.to_string()])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).expect("utf-8 csv"))
}

/// Per-sample skill presence (present in original, absent in background and self).
pub fn skill_presence(triads: &[TriadGraphs], paths: &[Path]) -> Vec<Vec<bool>> {
    triads
        .par_iter()
        .map(|t| {
            paths
                .iter()
                .map(|p| p.is_present(&t.ori.mask) && !p.is_present(&t.bkg.mask) && !p.is_present(&t.slf.mask))
                .collect()
        })
        .collect()
}

/// Distinct edges used by a set of paths.
pub fn path_edge_count(paths: &[Path]) -> usize {
    paths.iter().flat_map(|p| p.edges()).collect::<BTreeSet<_>>().len()
}
