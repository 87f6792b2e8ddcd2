//! Seeded synthetic corpus generation.
//!
//! Each sample draws from its own ChaCha stream `(seed, index)`, so samples
//! can be produced in any order with identical results. Documents are
//! written in a canonical form: single spaces between tokens, formula and
//! table delimiters as separate tokens, blocks separated by blank lines.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::render::{render_document, RenderConfig};
use super::translate::translate_source;
use super::{measure_context_length, measure_layout_complexity};
use crate::image::RasterImage;
use crate::vocab::{Vocab, MATH_TOKENS};
use crate::Error;

/// Smallest lexicon the word sampler accepts.
pub const MIN_VOCAB: usize = 2;

/// Relative weights of block kinds after the opening heading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutMix {
    pub heading: f64,
    pub paragraph: f64,
    pub list: f64,
    pub table: f64,
    pub display_formula: f64,
    /// Probability that a paragraph carries an inline formula span.
    pub inline_formula: f64,
}

impl Default for LayoutMix {
    fn default() -> Self {
        Self { heading: 1.0, paragraph: 3.0, list: 1.5, table: 1.0, display_formula: 0.5, inline_formula: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub seed: u64,
    pub samples: usize,
    /// Train, valid and test fractions; must sum to 1.
    pub split: [f64; 3],
    /// Number of lexicon entries (distinct source words).
    pub vocab_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub layout: LayoutMix,
    pub render: RenderConfig,
    /// Redraws of a document that does not fit the page before giving up.
    pub max_attempts: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 100,
            split: [0.8, 0.1, 0.1],
            vocab_size: 200,
            min_words: 20,
            max_words: 60,
            layout: LayoutMix::default(),
            render: RenderConfig::default(),
            max_attempts: 50,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        if self.split.iter().any(|r| !r.is_finite() || *r < 0.0) || libm::fabs(self.split.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios {:?} must be non-negative and sum to 1", self.split)));
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(Error::VocabularyTooSmall { size: self.vocab_size, min: MIN_VOCAB });
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::InvalidConfig("need 1 <= min_words <= max_words".into()));
        }
        let l = &self.layout;
        let weights = [l.heading, l.paragraph, l.list, l.table, l.display_formula];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || l.paragraph + l.list + l.table + l.heading <= 0.0 {
            return Err(Error::InvalidConfig("layout weights must be non-negative with some word-bearing block".into()));
        }
        if !(0.0..=1.0).contains(&l.inline_formula) || self.max_attempts == 0 {
            return Err(Error::InvalidConfig("inline_formula must lie in [0,1] and max_attempts >= 1".into()));
        }
        self.render.validate()
    }
}

/// Source-language token ids of a document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceText {
    pub tokens: Vec<u32>,
}

impl SourceText {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentSample {
    pub id: String,
    pub image: RasterImage,
    pub source: SourceText,
    pub source_markdown: String,
    pub reference_markdown: String,
    pub context_length: usize,
    pub layout_nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub samples: Vec<String>,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub config: GenerationConfig,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// A generated corpus with its lexicon and vocabularies.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub lexicon: Lexicon,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
    pub samples: Vec<DocumentSample>,
}

impl Corpus {
    pub fn sample(&self, id: &str) -> Option<&DocumentSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples of a split in manifest order.
    pub fn split(&self, split: Split) -> Vec<&DocumentSample> {
        let index: alloc::collections::BTreeMap<&str, &DocumentSample> = self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        self.manifest.split(split).iter().filter_map(|id| index.get(id.as_str()).copied()).collect()
    }
}

pub fn sample_id(index: usize) -> String {
    format!("doc{index:05}")
}

pub fn build_lexicon(cfg: &GenerationConfig) -> Result<Lexicon, Error> {
    Lexicon::generate(cfg.vocab_size, cfg.seed)
}

pub fn source_vocab(lexicon: &Lexicon) -> Vocab {
    Vocab::with_words(lexicon.source_words().iter().map(String::as_str))
}

pub fn target_vocab(lexicon: &Lexicon) -> Vocab {
    Vocab::with_words(lexicon.target_words().iter().map(String::as_str))
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Deterministic train/valid/test assignment.
pub fn assign_splits(ids: &[String], ratios: [f64; 3], seed: u64) -> [Vec<String>; 3] {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut rng = sample_rng(seed, usize::MAX - 1);
    order.shuffle(&mut rng);
    let n = ids.len();
    let n_train = (libm::round(ratios[0] * n as f64) as usize).min(n);
    let n_valid = (libm::round(ratios[1] * n as f64) as usize).min(n - n_train);
    let take = |range: core::ops::Range<usize>| {
        let mut v: Vec<usize> = order[range].to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| ids[i].clone()).collect::<Vec<_>>()
    };
    let train = take(0..n_train);
    let valid = take(n_train..n_train + n_valid);
    let test = take(n_train + n_valid..n);
    [train, valid, test]
}

/// Generates one document; the word count is exact.
pub fn generate_markdown(rng: &mut ChaCha8Rng, words: usize, lexicon: &Lexicon, mix: &LayoutMix) -> String {
    let vocab = lexicon.source_words();
    let word = |rng: &mut ChaCha8Rng| vocab[rng.random_range(0..vocab.len())].as_str();
    let mut blocks: Vec<String> = Vec::new();
    let mut left = words;
    let mut level = 1usize;
    // documents open with a title
    let n = left.min(rng.random_range(1..=3));
    blocks.push(format!("# {}", join((0..n).map(|_| word(rng)))));
    left -= n;
    let weights = [mix.heading, mix.paragraph, mix.list, mix.table, mix.display_formula];
    let total: f64 = weights.iter().sum();
    let mut last_display = false;
    while left > 0 {
        let mut u = rng.random::<f64>() * total;
        let mut kind = 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                kind = k;
                break;
            }
            u -= w;
        }
        match kind {
            0 => {
                level = rng.random_range(1..=(level + 1).min(3));
                let n = left.min(rng.random_range(1..=3));
                let marks = "#".repeat(level);
                blocks.push(format!("{marks} {}", join((0..n).map(|_| word(rng)))));
                left -= n;
            }
            2 => {
                let items = rng.random_range(2..=4);
                let mut lines = Vec::new();
                for _ in 0..items {
                    if left == 0 {
                        break;
                    }
                    let n = left.min(rng.random_range(1..=4));
                    lines.push(format!("- {}", join((0..n).map(|_| word(rng)))));
                    left -= n;
                }
                blocks.push(lines.join("\n"));
            }
            3 => {
                let cols = rng.random_range(2..=3);
                let rows = rng.random_range(1..=3);
                let mut lines = Vec::new();
                'rows: for _ in 0..rows {
                    let mut cells = Vec::new();
                    for _ in 0..cols {
                        if left == 0 {
                            break;
                        }
                        cells.push(word(rng));
                        left -= 1;
                    }
                    if cells.is_empty() {
                        break 'rows;
                    }
                    lines.push(format!("| {} |", cells.join(" | ")));
                }
                blocks.push(lines.join("\n"));
            }
            4 if !last_display => {
                blocks.push(format!("$$ {} $$", formula(rng)));
                last_display = true;
                continue;
            }
            _ => {
                let n = left.min(rng.random_range(3..=12));
                let mut toks: Vec<String> = (0..n).map(|_| String::from(word(rng))).collect();
                if rng.random::<f64>() < mix.inline_formula {
                    let at = rng.random_range(0..=toks.len());
                    toks.insert(at, format!("$ {} $", formula(rng)));
                }
                blocks.push(toks.join(" "));
                left -= n;
            }
        }
        last_display = false;
    }
    blocks.join("\n\n")
}

fn join<'a>(words: impl Iterator<Item = &'a str>) -> String {
    words.collect::<Vec<_>>().join(" ")
}

fn formula(rng: &mut ChaCha8Rng) -> String {
    const OPERANDS: &[&str] = &["a", "b", "c", "n", "x", "y", "z", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
    const OPERATORS: &[&str] = &["+", "=", "^"];
    debug_assert!(OPERANDS.iter().chain(OPERATORS).all(|t| MATH_TOKENS.contains(t)));
    let terms = rng.random_range(2..=4);
    let mut out = Vec::new();
    for i in 0..terms {
        if i > 0 {
            out.push(OPERATORS[rng.random_range(0..OPERATORS.len())]);
        }
        if rng.random::<f64>() < 0.15 {
            out.extend(["(", OPERANDS[rng.random_range(0..OPERANDS.len())], ")"]);
        } else {
            out.push(OPERANDS[rng.random_range(0..OPERANDS.len())]);
        }
    }
    out.join(" ")
}

/// Generates sample `index` of the corpus described by `cfg`.
pub fn generate_sample(cfg: &GenerationConfig, lexicon: &Lexicon, vocab: &Vocab, index: usize) -> Result<DocumentSample, Error> {
    let mut rng = sample_rng(cfg.seed, index);
    let mut render = cfg.render.clone();
    render.jitter_seed = cfg.render.jitter_seed ^ rng.random::<u64>();
    let mut last_err = None;
    for _ in 0..cfg.max_attempts {
        let words = rng.random_range(cfg.min_words..=cfg.max_words);
        let md = generate_markdown(&mut rng, words, lexicon, &cfg.layout);
        match render_document(&md, &render) {
            Ok(image) => {
                debug_assert_eq!(measure_context_length(&md), words);
                return Ok(DocumentSample {
                    id: sample_id(index),
                    image,
                    source: SourceText::new(vocab.encode(&md)),
                    reference_markdown: translate_source(&md, lexicon),
                    context_length: measure_context_length(&md),
                    layout_nodes: measure_layout_complexity(&md),
                    source_markdown: md,
                });
            }
            Err(e @ Error::PageOverflow { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("max_attempts >= 1"))
}

pub fn generate_corpus(cfg: &GenerationConfig) -> Result<Corpus, Error> {
    cfg.validate()?;
    let lexicon = build_lexicon(cfg)?;
    let src_vocab = source_vocab(&lexicon);
    let samples = (0..cfg.samples).map(|i| generate_sample(cfg, &lexicon, &src_vocab, i)).collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let [train, valid, test] = assign_splits(&ids, cfg.split, cfg.seed);
    Ok(Corpus {
        manifest: CorpusManifest { seed: cfg.seed, samples: ids, train, valid, test, config: cfg.clone() },
        target_vocab: target_vocab(&lexicon),
        source_vocab: src_vocab,
        lexicon,
        samples,
    })
}
