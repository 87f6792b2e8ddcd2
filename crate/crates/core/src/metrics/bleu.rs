//! Corpus-level BLEU.
//!
//! Tokens are whitespace-separated chunks further split so that every
//! punctuation character stands alone (`_` counts as a word character).
//! Clipped n-gram matches and hypothesis n-gram totals are summed over the
//! corpus before forming precisions. An order whose hypothesis side has no
//! n-grams at all is left out of the geometric mean; an order with n-grams
//! but no matches gets `ε / total` when smoothing is on, 0 otherwise.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_order: usize,
    /// Floor for zero match counts; `None` disables smoothing.
    pub smoothing: Option<f64>,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self { max_order: 4, smoothing: Some(0.1) }
    }
}

/// Sufficient statistics of one or more hypothesis/reference pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(max_order: usize) -> Self {
        Self { matches: alloc::vec![0; max_order], totals: alloc::vec![0; max_order], hyp_len: 0, ref_len: 0 }
    }

    pub fn add_pair(&mut self, hypothesis: &str, reference: &str) {
        let h = tokenize(hypothesis);
        let r = tokenize(reference);
        self.hyp_len += h.len();
        self.ref_len += r.len();
        for n in 1..=self.matches.len() {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            self.totals[n - 1] += h.len().saturating_sub(n - 1);
            self.matches[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }

    pub fn score(&self, smoothing: Option<f64>) -> f64 {
        if self.hyp_len == 0 {
            return if self.ref_len == 0 { 100.0 } else { 0.0 };
        }
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                continue;
            }
            let p = if m > 0 {
                m as f64 / t as f64
            } else {
                match smoothing {
                    Some(eps) => eps / t as f64,
                    None => return 0.0,
                }
            };
            log_sum += libm::log(p);
            orders += 1;
        }
        let bp = if self.hyp_len < self.ref_len { libm::exp(1.0 - self.ref_len as f64 / self.hyp_len as f64) } else { 1.0 };
        100.0 * bp * libm::exp(log_sum / orders as f64)
    }
}

pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            if c.is_alphanumeric() || c == '_' {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> BTreeMap<&'t [&'a str], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU in `[0, 100]` over aligned hypothesis/reference lists.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R], cfg: &BleuConfig) -> Result<f64, Error> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch { expected: references.len(), found: hypotheses.len() });
    }
    if hypotheses.is_empty() {
        return Err(Error::InvalidConfig("BLEU needs at least one hypothesis/reference pair".into()));
    }
    let mut stats = BleuStats::new(cfg.max_order);
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add_pair(h.as_ref(), r.as_ref());
    }
    Ok(stats.score(cfg.smoothing))
}
