//! Frozen mix-modality teacher.
//!
//! A randomly initialised, never-updated transformer encoder reads the
//! prompt `[system][image marker][image patches][user][source text]`,
//! right-padded to a fixed length, and returns its last hidden states.
//! A masked modality contributes one learned placeholder row instead of
//! its token block.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::image::RasterImage;
use crate::nn::{Builder, EncoderStack, Linear, StackConfig};
use crate::params::{Group, Init, ParamId, ParamStore};
use crate::synthdoc::SourceText;
use crate::tensor::Matrix;
use crate::Error;

pub const SYSTEM_PROMPT_LEN: usize = 4;
pub const USER_PROMPT_LEN: usize = 3;
/// Token ids reserved above the source vocabulary for the prompt.
pub const RESERVED_PROMPT_IDS: usize = SYSTEM_PROMPT_LEN + 1 + USER_PROMPT_LEN;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub seed: u64,
    /// Output rows (`l_MLLM`).
    pub seq_len: usize,
    /// Hidden width (`d_MLLM`).
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub image_h: usize,
    pub image_w: usize,
    /// Size of the source vocabulary; prompt ids follow it.
    pub source_vocab: usize,
    /// Zero every output row that is not a source-text position.
    #[serde(default)]
    pub text_positions_only: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            seq_len: 256,
            width: 128,
            depth: 8,
            heads: 4,
            ffn_mult: 8,
            patch_h: 28,
            patch_w: 28,
            image_h: 224,
            image_w: 168,
            source_vocab: 256,
            text_positions_only: false,
        }
    }
}

impl TeacherConfig {
    pub fn patches(&self) -> usize {
        (self.image_h / self.patch_h) * (self.image_w / self.patch_w)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w * crate::image::CHANNELS
    }

    /// Rows taken by the prompt and the image block.
    pub fn overhead(&self, use_image: bool) -> usize {
        SYSTEM_PROMPT_LEN + 1 + USER_PROMPT_LEN + if use_image { self.patches() } else { 1 }
    }

    pub fn validate(&self) -> Result<(), Error> {
        StackConfig { width: self.width, layers: self.depth, heads: self.heads, ffn_mult: self.ffn_mult }.validate("teacher")?;
        if self.depth == 0 || self.source_vocab == 0 {
            return Err(Error::InvalidConfig("teacher depth and source vocabulary must be positive".into()));
        }
        if self.patch_h == 0 || self.patch_w == 0 || !self.image_h.is_multiple_of(self.patch_h) || !self.image_w.is_multiple_of(self.patch_w) {
            return Err(Error::InvalidConfig("teacher patches must tile the page".into()));
        }
        if self.seq_len < self.overhead(true) + 1 {
            return Err(Error::InvalidConfig(alloc::format!(
                "teacher sequence length {} cannot hold the {}-row prompt plus text",
                self.seq_len,
                self.overhead(true)
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub use_image: bool,
    pub use_text: bool,
}

impl ModalityMask {
    pub const FULL: Self = Self { use_image: true, use_text: true };

    pub fn new(use_image: bool, use_text: bool) -> Result<Self, Error> {
        let m = Self { use_image, use_text };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !self.use_image && !self.use_text {
            return Err(Error::EmptyModalityMask);
        }
        Ok(())
    }
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: Vec<u32>,
    pub image_marker: u32,
    pub user: Vec<u32>,
}

impl PromptTemplate {
    fn for_vocab(source_vocab: usize) -> Self {
        let base = source_vocab as u32;
        Self {
            system: (0..SYSTEM_PROMPT_LEN as u32).map(|i| base + i).collect(),
            image_marker: base + SYSTEM_PROMPT_LEN as u32,
            user: (0..USER_PROMPT_LEN as u32).map(|i| base + SYSTEM_PROMPT_LEN as u32 + 1 + i).collect(),
        }
    }
}

static BUILDS: AtomicUsize = AtomicUsize::new(0);
static FORWARDS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide counts of teacher constructions and forward passes, so
/// callers can check that a code path never touches the teacher.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TeacherActivity {
    pub builds: usize,
    pub forwards: usize,
}

pub fn teacher_activity() -> TeacherActivity {
    TeacherActivity { builds: BUILDS.load(Ordering::SeqCst), forwards: FORWARDS.load(Ordering::SeqCst) }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherRepresentation {
    pub hidden: Matrix,
    /// Source tokens dropped to fit the sequence length.
    pub truncated: usize,
}

#[derive(Clone, Debug)]
pub struct Teacher {
    cfg: TeacherConfig,
    prompt: PromptTemplate,
    params: ParamStore,
    patch_embed: Linear,
    tok_emb: ParamId,
    pos_emb: ParamId,
    image_placeholder: ParamId,
    text_placeholder: ParamId,
    pad: ParamId,
    stack: EncoderStack,
}

impl Teacher {
    pub fn build(cfg: &TeacherConfig) -> Result<Self, Error> {
        cfg.validate()?;
        BUILDS.fetch_add(1, Ordering::SeqCst);
        let mut store = ParamStore::new();
        let g = Group::Teacher;
        let mut b = Builder { store: &mut store, init: Init::new(ChaCha8Rng::seed_from_u64(cfg.seed)) };
        let patch_embed = Linear::new(&mut b, "teacher.patch_embed", g, cfg.patch_dim(), cfg.width);
        let tok_emb = b.normal("teacher.tok_emb", g, cfg.source_vocab + RESERVED_PROMPT_IDS, cfg.width, 1.0);
        let pos_emb = b.normal("teacher.pos_emb", g, cfg.seq_len, cfg.width, 0.1);
        let image_placeholder = b.normal("teacher.image_placeholder", g, 1, cfg.width, 1.0);
        let text_placeholder = b.normal("teacher.text_placeholder", g, 1, cfg.width, 1.0);
        let pad = b.normal("teacher.pad", g, 1, cfg.width, 1.0);
        let stack_cfg = StackConfig { width: cfg.width, layers: cfg.depth, heads: cfg.heads, ffn_mult: cfg.ffn_mult };
        let stack = EncoderStack::new(&mut b, "teacher.stack", g, &stack_cfg);
        Ok(Self {
            cfg: cfg.clone(),
            prompt: PromptTemplate::for_vocab(cfg.source_vocab),
            params: store,
            patch_embed,
            tok_emb,
            pos_emb,
            image_placeholder,
            text_placeholder,
            pad,
            stack,
        })
    }

    /// Rebuilds a teacher from its configuration and stored parameters.
    pub fn from_parts(cfg: &TeacherConfig, params: &ParamStore) -> Result<Self, Error> {
        let mut t = Self::build(cfg)?;
        t.params.load_values(params)?;
        Ok(t)
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.cfg
    }

    pub fn prompt(&self) -> &PromptTemplate {
        &self.prompt
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.cfg.seq_len, self.cfg.width)
    }

    /// `H_MLLM` for one page and its source text.
    pub fn encode_mix(&self, image: &RasterImage, source: &SourceText, mask: ModalityMask) -> Result<TeacherRepresentation, Error> {
        mask.validate()?;
        FORWARDS.fetch_add(1, Ordering::SeqCst);
        let cfg = &self.cfg;
        if (image.height(), image.width()) != (cfg.image_h, cfg.image_w) {
            return Err(Error::ShapeMismatch {
                what: "teacher image",
                expected: (cfg.image_h, cfg.image_w),
                found: (image.height(), image.width()),
            });
        }
        if let Some(&bad) = source.tokens.iter().find(|&&t| t as usize >= cfg.source_vocab) {
            return Err(Error::TokenOutOfRange(bad));
        }
        let p = &self.params;
        let emb = p.get(self.tok_emb);
        let width = cfg.width;
        let mut x = Matrix::zeros(0, width);
        for &id in &self.prompt.system {
            x.push_row(emb.row(id as usize));
        }
        x.push_row(emb.row(self.prompt.image_marker as usize));
        if mask.use_image {
            let mut ink = image.patches(cfg.patch_h, cfg.patch_w)?;
            ink.as_mut_slice().iter_mut().for_each(|v| *v = 1.0 - *v);
            let patches = self.patch_embed.apply(p, &ink);
            for r in 0..patches.rows() {
                x.push_row(patches.row(r));
            }
        } else {
            x.push_row(p.get(self.image_placeholder).row(0));
        }
        for &id in &self.prompt.user {
            x.push_row(emb.row(id as usize));
        }
        let text_start = x.rows();
        let room = cfg.seq_len - text_start;
        let mut truncated = 0;
        let mut text_rows = 0;
        if mask.use_text {
            let keep = source.tokens.len().min(room);
            truncated = source.tokens.len() - keep;
            if truncated > 0 {
                log::warn!("teacher input truncated: dropped {truncated} of {} source tokens", source.tokens.len());
            }
            for &id in &source.tokens[..keep] {
                x.push_row(emb.row(id as usize));
            }
            text_rows = keep;
        } else {
            x.push_row(p.get(self.text_placeholder).row(0));
        }
        while x.rows() < cfg.seq_len {
            x.push_row(p.get(self.pad).row(0));
        }
        x.add_assign(p.get(self.pos_emb));
        let mut hidden = self.stack.apply(p, &x);
        if cfg.text_positions_only {
            for r in 0..hidden.rows() {
                if r < text_start || r >= text_start + text_rows {
                    hidden.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        if !hidden.is_finite() {
            return Err(Error::NonFinite("teacher hidden states"));
        }
        Ok(TeacherRepresentation { hidden, truncated })
    }
}
