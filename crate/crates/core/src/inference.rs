//! Decoding: beam search over an abstract step function, and the two
//! translation paths (student only, or teacher states as decoder memory).

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::image::RasterImage;
use crate::model::Model;
use crate::synthdoc::SourceText;
use crate::teacher::{ModalityMask, Teacher};
use crate::tensor::log_softmax;
use crate::vocab::{Vocab, BOS, EOS};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub width: usize,
    /// Generated tokens allowed, EOS included.
    pub max_len: usize,
    /// Finished hypotheses are ranked by `log p / len^length_penalty`.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { width: 4, max_len: 256, length_penalty: 1.0 }
    }
}

impl BeamConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self { width: 1, max_len, length_penalty: 1.0 }
    }

    pub fn validate(&self, max_positions: usize) -> Result<(), Error> {
        if self.width == 0 || self.max_len == 0 || !self.length_penalty.is_finite() {
            return Err(Error::InvalidConfig("beam width and max length must be positive".into()));
        }
        if self.max_len > max_positions {
            return Err(Error::TooLong { len: self.max_len, max: max_positions });
        }
        Ok(())
    }

    pub fn normalized(&self, log_prob: f64, len: usize) -> f64 {
        if self.length_penalty == 0.0 {
            log_prob
        } else {
            log_prob / libm::pow(len.max(1) as f64, self.length_penalty)
        }
    }
}

/// A decoded sequence without BOS; finished ones end with EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub score: f64,
    pub truncated: bool,
}

struct Live<S> {
    tokens: Vec<u32>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

/// Higher score first, then the lexicographically smaller sequence.
fn rank(a_score: f64, a: &[u32], b_score: f64, b: &[u32]) -> Ordering {
    b_score.partial_cmp(&a_score).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
}

fn better(cand: &Hypothesis, best: &Option<Hypothesis>) -> bool {
    best.as_ref().is_none_or(|b| rank(cand.score, &cand.tokens, b.score, &b.tokens) == Ordering::Less)
}

/// Beam search. `step(state, token)` feeds `token` and returns next-token
/// log-probabilities; it is first called with BOS on `init`.
///
/// Each round keeps the `width` best one-token extensions of all live
/// hypotheses by raw log-probability (ties: smaller token sequence); those
/// ending in EOS are finished and scored with length normalisation. If no
/// hypothesis finishes within `max_len`, the best truncated one is returned.
pub fn beam_search<S: Clone>(
    init: S,
    mut step: impl FnMut(&mut S, u32) -> Result<Vec<f64>, Error>,
    cfg: &BeamConfig,
) -> Result<Hypothesis, Error> {
    if cfg.width == 0 || cfg.max_len == 0 {
        return Err(Error::InvalidConfig("beam width and max length must be positive".into()));
    }
    let mut state = init;
    let next = step(&mut state, BOS)?;
    let mut live = alloc::vec![Live { tokens: Vec::new(), log_prob: 0.0, state, next }];
    let mut finished: Option<Hypothesis> = None;
    let mut truncated: Option<Hypothesis> = None;
    while !live.is_empty() {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (b, h) in live.iter().enumerate() {
            for (tok, &lp) in h.next.iter().enumerate() {
                if lp.is_finite() {
                    cands.push((h.log_prob + lp, b, tok as u32));
                }
            }
        }
        if cands.is_empty() {
            return Err(Error::NonFinite("beam search step distribution"));
        }
        let key = |c: &(f64, usize, u32)| (c.0, &live[c.1].tokens, c.2);
        cands.sort_by(|x, y| {
            let (sx, tx, vx) = key(x);
            let (sy, ty, vy) = key(y);
            sy.partial_cmp(&sx).unwrap_or(Ordering::Equal).then_with(|| tx.cmp(ty)).then_with(|| vx.cmp(&vy))
        });
        cands.truncate(cfg.width);
        let mut next_live = Vec::with_capacity(cands.len());
        for (lp, b, tok) in cands {
            let parent = &live[b];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let len = tokens.len();
            if tok == EOS {
                let h = Hypothesis { score: cfg.normalized(lp, len), tokens, log_prob: lp, truncated: false };
                if better(&h, &finished) {
                    finished = Some(h);
                }
            } else if len >= cfg.max_len {
                let h = Hypothesis { score: cfg.normalized(lp, len), tokens, log_prob: lp, truncated: true };
                if better(&h, &truncated) {
                    truncated = Some(h);
                }
            } else {
                let mut state = parent.state.clone();
                let next = step(&mut state, tok)?;
                next_live.push(Live { tokens, log_prob: lp, state, next });
            }
        }
        live = next_live;
    }
    Ok(finished.or(truncated).expect("beam search produced a hypothesis"))
}

/// Argmax rollout (lowest token id on ties) for reference.
pub fn greedy_decode<S>(
    mut state: S,
    mut step: impl FnMut(&mut S, u32) -> Result<Vec<f64>, Error>,
    max_len: usize,
) -> Result<Hypothesis, Error> {
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut tok = BOS;
    while tokens.len() < max_len {
        let lp = step(&mut state, tok)?;
        let (best, &best_lp) = lp
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
                Some((_, bv)) if *bv >= *v => acc,
                _ => Some((i, v)),
            })
            .ok_or(Error::NonFinite("greedy step distribution"))?;
        tok = best as u32;
        log_prob += best_lp;
        tokens.push(tok);
        if tok == EOS {
            let score = log_prob / tokens.len() as f64;
            return Ok(Hypothesis { tokens, log_prob, score, truncated: false });
        }
    }
    let score = log_prob / tokens.len().max(1) as f64;
    Ok(Hypothesis { tokens, log_prob, score, truncated: true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub markdown: String,
    /// Generated ids without BOS (EOS kept when present).
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub truncated: bool,
}

impl TranslationResult {
    fn from_hypothesis(h: Hypothesis, vocab: &Vocab) -> Self {
        Self { markdown: vocab.decode(&h.tokens), tokens: h.tokens, log_prob: h.log_prob, truncated: h.truncated }
    }
}

fn decode_with(model: &Model, memories: [crate::tensor::Matrix; 2], beam: &BeamConfig, vocab: &Vocab) -> Result<TranslationResult, Error> {
    beam.validate(model.config().decoder.max_positions)?;
    let cache = model.start_decoding(&memories);
    let h = beam_search(cache, |c, tok| Ok(log_softmax(&model.decode_next(c, tok)?)), beam)?;
    Ok(TranslationResult::from_hypothesis(h, vocab))
}

/// Teacher-free translation: the decoder reads the student's own `H_align`
/// and `H_image`.
pub fn translate(model: &Model, image: &RasterImage, beam: &BeamConfig, vocab: &Vocab) -> Result<TranslationResult, Error> {
    let inputs = model.inputs(image)?;
    let memories = model.memories(&inputs, None)?;
    decode_with(model, memories, beam, vocab)
}

/// Greedy argmax rollout over the student's memories.
pub fn translate_greedy(model: &Model, image: &RasterImage, max_len: usize, vocab: &Vocab) -> Result<TranslationResult, Error> {
    BeamConfig::greedy(max_len).validate(model.config().decoder.max_positions)?;
    let inputs = model.inputs(image)?;
    let memories = model.memories(&inputs, None)?;
    let cache = model.start_decoding(&memories);
    let h = greedy_decode(cache, |c, tok| Ok(log_softmax(&model.decode_next(c, tok)?)), max_len)?;
    Ok(TranslationResult::from_hypothesis(h, vocab))
}

/// Translation with the teacher's full-mask hidden states in place of
/// `H_align`.
pub fn translate_with_teacher(
    model: &Model,
    teacher: &Teacher,
    image: &RasterImage,
    source: Option<&SourceText>,
    beam: &BeamConfig,
    vocab: &Vocab,
) -> Result<TranslationResult, Error> {
    let source = source.ok_or_else(|| Error::InvalidConfig("teacher-assisted translation needs the source text".into()))?;
    let rep = teacher.encode_mix(image, source, ModalityMask::FULL)?;
    let inputs = model.inputs(image)?;
    let memories = model.memories(&inputs, Some(&rep.hidden))?;
    decode_with(model, memories, beam, vocab)
}
