//! Corpus and per-slice evaluation reports.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::bleu::{corpus_bleu, BleuConfig};
use super::plain::strip_plain_text;
use super::structure::parse_structure_tree;
use super::ted::{PostOrder, TedWorkspace};
use crate::Error;

/// One evaluated document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub context_length: usize,
    pub layout_nodes: usize,
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu: f64,
    pub bleu_pt: f64,
    pub steds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub context_length: usize,
    pub layout_nodes: usize,
    pub steds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceScores {
    pub name: String,
    pub count: usize,
    /// Absent for empty slices.
    pub scores: Option<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: Scores,
    pub slices: Vec<SliceScores>,
    pub samples: Vec<SampleRow>,
    pub provenance: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceSpec {
    All,
    /// Context length in `(lo, hi]`; `hi = None` is unbounded. The first
    /// bucket also takes length 0 so buckets partition any corpus.
    ContextLength { lo: usize, hi: Option<usize> },
    /// The `k` documents with the fewest structure nodes (ties by id).
    SimplestLayout { k: usize },
    /// The `k` documents with the most structure nodes (ties by id).
    MostComplexLayout { k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub name: String,
    pub spec: SliceSpec,
}

impl Slice {
    pub fn new(name: &str, spec: SliceSpec) -> Self {
        Self { name: name.into(), spec }
    }

    /// Indices of `samples` in this slice, ascending.
    pub fn members(&self, samples: &[EvalSample]) -> Vec<usize> {
        match self.spec {
            SliceSpec::All => (0..samples.len()).collect(),
            SliceSpec::ContextLength { lo, hi } => (0..samples.len())
                .filter(|&i| {
                    let c = samples[i].context_length;
                    (c > lo || (lo == 0 && c == 0)) && hi.is_none_or(|h| c <= h)
                })
                .collect(),
            SliceSpec::SimplestLayout { k } | SliceSpec::MostComplexLayout { k } => {
                let mut order: Vec<usize> = (0..samples.len()).collect();
                let most = matches!(self.spec, SliceSpec::MostComplexLayout { .. });
                order.sort_by(|&a, &b| {
                    let (na, nb) = (samples[a].layout_nodes, samples[b].layout_nodes);
                    let by_nodes = if most { nb.cmp(&na) } else { na.cmp(&nb) };
                    by_nodes.then_with(|| samples[a].id.cmp(&samples[b].id))
                });
                order.truncate(k);
                order.sort_unstable();
                order
            }
        }
    }
}

pub const CONTEXT_BUCKETS: [(usize, Option<usize>); 4] = [(0, Some(250)), (250, Some(500)), (500, Some(750)), (750, None)];

pub fn context_slices() -> Vec<Slice> {
    CONTEXT_BUCKETS
        .iter()
        .map(|&(lo, hi)| {
            let name = match hi {
                Some(h) => alloc::format!("context ({lo},{h}]"),
                None => alloc::format!("context ({lo},inf)"),
            };
            Slice::new(&name, SliceSpec::ContextLength { lo, hi })
        })
        .collect()
}

pub fn layout_slices(k: usize) -> Vec<Slice> {
    alloc::vec![
        Slice::new(&alloc::format!("simple layout (fewest {k})"), SliceSpec::SimplestLayout { k }),
        Slice::new(&alloc::format!("complex layout (most {k})"), SliceSpec::MostComplexLayout { k }),
    ]
}

pub fn default_slices(layout_k: usize) -> Vec<Slice> {
    let mut s = context_slices();
    s.extend(layout_slices(layout_k));
    s
}

pub fn bleu_pt<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R], cfg: &BleuConfig) -> Result<f64, Error> {
    let h: Vec<String> = hypotheses.iter().map(|s| strip_plain_text(s.as_ref())).collect();
    let r: Vec<String> = references.iter().map(|s| strip_plain_text(s.as_ref())).collect();
    corpus_bleu(&h, &r, cfg)
}

fn scores_for(samples: &[EvalSample], members: &[usize], steds: &[f64], cfg: &BleuConfig) -> Result<Option<Scores>, Error> {
    if members.is_empty() {
        return Ok(None);
    }
    let hyps: Vec<&str> = members.iter().map(|&i| samples[i].hypothesis.as_str()).collect();
    let refs: Vec<&str> = members.iter().map(|&i| samples[i].reference.as_str()).collect();
    let mean_steds = members.iter().map(|&i| steds[i]).sum::<f64>() / members.len() as f64;
    Ok(Some(Scores { bleu: corpus_bleu(&hyps, &refs, cfg)?, bleu_pt: bleu_pt(&hyps, &refs, cfg)?, steds: mean_steds }))
}

/// Scores the corpus and every slice. Corpus STEDS is the mean of the
/// per-document similarities.
pub fn slice_report(samples: &[EvalSample], slices: &[Slice], cfg: &BleuConfig) -> Result<EvalReport, Error> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one sample".into()));
    }
    let mut ws = TedWorkspace::new();
    let steds: Vec<f64> = samples
        .iter()
        .map(|s| {
            let a = parse_structure_tree(&s.hypothesis);
            let b = parse_structure_tree(&s.reference);
            let d = ws.distance(&PostOrder::new(&a), &PostOrder::new(&b));
            1.0 - d as f64 / a.size().max(b.size()) as f64
        })
        .collect();
    let all: Vec<usize> = (0..samples.len()).collect();
    let corpus = scores_for(samples, &all, &steds, cfg)?.expect("non-empty");
    let mut out = Vec::with_capacity(slices.len());
    for slice in slices {
        let members = slice.members(samples);
        out.push(SliceScores { name: slice.name.clone(), count: members.len(), scores: scores_for(samples, &members, &steds, cfg)? });
    }
    let rows = samples
        .iter()
        .zip(&steds)
        .map(|(s, &st)| SampleRow { id: s.id.clone(), context_length: s.context_length, layout_nodes: s.layout_nodes, steds: st })
        .collect();
    Ok(EvalReport { corpus, slices: out, samples: rows, provenance: BTreeMap::new() })
}
