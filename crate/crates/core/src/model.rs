//! The trainable student.
//!
//! Two patch-transformer encoders read the page: the alignment branch
//! (followed by `FFN_dim` over features and `FFN_length` over positions)
//! yields `H_align` with the teacher's shape, the image branch yields
//! `H_image`. Bridge networks lift both to the decoder width; every
//! decoder layer attends to the bridged `H_align` first and to the bridged
//! `H_image` second.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::image::RasterImage;
use crate::loss::{AlignLossKind, TransReduction};
use crate::nn::{Builder, Decoder, DecoderCache, DecoderConfig, EncoderStack, Linear, Mlp, StackConfig};
use crate::params::{Group, Init, ParamId, ParamStore};
use crate::tensor::{softmax_in_place, Matrix};
use crate::Error;

/// Patch-transformer encoder geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
}

impl EncoderConfig {
    pub fn stack(&self) -> StackConfig {
        StackConfig { width: self.width, layers: self.layers, heads: self.heads, ffn_mult: self.ffn_mult }
    }

    pub fn patches(&self, image_h: usize, image_w: usize) -> usize {
        (image_h / self.patch_h) * (image_w / self.patch_w)
    }
}

/// Which student variant is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Full,
    /// No separate alignment encoder: the projections read `H_image`.
    NoAlignmentEncoder,
    /// No alignment branch: the decoder reads the teacher's hidden states.
    TeacherOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub align_encoder: EncoderConfig,
    pub image_encoder: EncoderConfig,
    /// Teacher output rows (`l_MLLM`).
    pub teacher_len: usize,
    /// Teacher output width (`d_MLLM`).
    pub teacher_width: usize,
    pub ffn_dim_hidden: usize,
    pub ffn_length_hidden: usize,
    pub bridge_hidden: usize,
    pub decoder: DecoderConfig,
    pub target_vocab: usize,
    #[serde(default)]
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let enc = EncoderConfig { patch_h: 32, patch_w: 24, width: 64, layers: 2, heads: 4, ffn_mult: 4 };
        Self {
            image_h: 224,
            image_w: 168,
            align_encoder: enc,
            image_encoder: enc,
            teacher_len: 256,
            teacher_width: 128,
            ffn_dim_hidden: 128,
            ffn_length_hidden: 128,
            bridge_hidden: 128,
            decoder: DecoderConfig { width: 128, layers: 4, heads: 4, ffn_mult: 4, max_positions: 256 },
            target_vocab: 256,
            architecture: Architecture::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        for (what, e) in [("alignment encoder", &self.align_encoder), ("image encoder", &self.image_encoder)] {
            e.stack().validate(what)?;
            if e.patch_h == 0 || e.patch_w == 0 || !self.image_h.is_multiple_of(e.patch_h) || !self.image_w.is_multiple_of(e.patch_w) {
                return Err(Error::InvalidConfig(alloc::format!("{what}: patches must tile the page")));
            }
        }
        self.decoder.stack().validate("decoder")?;
        let dims = [
            self.teacher_len,
            self.teacher_width,
            self.ffn_dim_hidden,
            self.ffn_length_hidden,
            self.bridge_hidden,
            self.decoder.max_positions,
        ];
        if dims.contains(&0) || self.target_vocab < 5 {
            return Err(Error::InvalidConfig("model dimensions must be positive and the vocabulary must hold the specials".into()));
        }
        Ok(())
    }

    /// Rows of the alignment-branch features (`l_Swin`).
    pub fn align_len(&self) -> usize {
        match self.architecture {
            Architecture::NoAlignmentEncoder => self.image_encoder.patches(self.image_h, self.image_w),
            _ => self.align_encoder.patches(self.image_h, self.image_w),
        }
    }

    fn align_width(&self) -> usize {
        match self.architecture {
            Architecture::NoAlignmentEncoder => self.image_encoder.width,
            _ => self.align_encoder.width,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PatchEncoder {
    pub cfg: EncoderConfig,
    pub embed: Linear,
    pub pos: ParamId,
    pub stack: EncoderStack,
}

impl PatchEncoder {
    fn new(b: &mut Builder<'_>, name: &str, group: Group, cfg: &EncoderConfig, image_h: usize, image_w: usize) -> Self {
        let dim = cfg.patch_h * cfg.patch_w * crate::image::CHANNELS;
        Self {
            cfg: *cfg,
            embed: Linear::new(b, &alloc::format!("{name}.patch_embed"), group, dim, cfg.width),
            pos: b.normal(&alloc::format!("{name}.pos_emb"), group, cfg.patches(image_h, image_w), cfg.width, 0.1),
            stack: EncoderStack::new(b, &alloc::format!("{name}.stack"), group, &cfg.stack()),
        }
    }

    /// Ink patches (`1 - pixel`), one row per tile.
    pub fn input(&self, image: &RasterImage) -> Result<Matrix, Error> {
        let mut m = image.patches(self.cfg.patch_h, self.cfg.patch_w)?;
        m.as_mut_slice().iter_mut().for_each(|v| *v = 1.0 - *v);
        Ok(m)
    }

    fn tape(&self, t: &mut Tape<'_>, ink: Var) -> Var {
        let x = self.embed.tape(t, ink);
        let pos = t.param(self.pos);
        let x = t.add(x, pos);
        self.stack.tape(t, x)
    }

    fn apply(&self, p: &ParamStore, ink: &Matrix) -> Matrix {
        let mut x = self.embed.apply(p, ink);
        x.add_assign(p.get(self.pos));
        self.stack.apply(p, &x)
    }
}

/// `FFN_length(FFN_dim(H)ᵀ)ᵀ`.
#[derive(Clone, Debug)]
pub struct AlignProjection {
    pub ffn_dim: Mlp,
    pub ffn_length: Mlp,
}

impl AlignProjection {
    fn tape(&self, t: &mut Tape<'_>, h: Var) -> Var {
        let x = self.ffn_dim.tape(t, h);
        let xt = t.transpose(x);
        let y = self.ffn_length.tape(t, xt);
        t.transpose(y)
    }

    fn apply(&self, p: &ParamStore, h: &Matrix) -> Matrix {
        let x = self.ffn_dim.apply(p, h).transpose();
        self.ffn_length.apply(p, &x).transpose()
    }
}

#[derive(Clone, Debug)]
pub struct Student {
    pub cfg: ModelConfig,
    pub align_encoder: Option<PatchEncoder>,
    pub projection: Option<AlignProjection>,
    pub image_encoder: PatchEncoder,
    pub bridge_mix: Mlp,
    pub bridge_image: Mlp,
    pub decoder: Decoder,
}

/// A student structure together with its parameters (`θ`).
#[derive(Clone, Debug)]
pub struct Model {
    pub student: Student,
    pub params: ParamStore,
}

/// Forward-pass outputs recorded on a tape.
pub struct TapeOutputs {
    /// `H_align`, absent for the teacher-output variant.
    pub h_align: Option<Var>,
    pub align_loss: Option<Var>,
    pub trans_loss: Var,
    pub logits: Var,
}

impl Model {
    /// Seeded initialisation of every student parameter.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, Error> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder { store: &mut params, init: Init::new(ChaCha8Rng::seed_from_u64(seed)) };
        let (h, w) = (cfg.image_h, cfg.image_w);
        let align_encoder = match cfg.architecture {
            Architecture::Full => Some(PatchEncoder::new(&mut b, "align_encoder", Group::AlignEncoder, &cfg.align_encoder, h, w)),
            _ => None,
        };
        let projection = match cfg.architecture {
            Architecture::TeacherOutput => None,
            _ => Some(AlignProjection {
                ffn_dim: Mlp::new(&mut b, "align_encoder.ffn_dim", Group::AlignEncoder, cfg.align_width(), cfg.ffn_dim_hidden, cfg.teacher_width),
                ffn_length: Mlp::new(
                    &mut b,
                    "align_encoder.ffn_length",
                    Group::AlignEncoder,
                    cfg.align_len(),
                    cfg.ffn_length_hidden,
                    cfg.teacher_len,
                ),
            }),
        };
        let image_encoder = PatchEncoder::new(&mut b, "image_encoder", Group::ImageEncoder, &cfg.image_encoder, h, w);
        let dw = cfg.decoder.width;
        let bridge_mix = Mlp::new(&mut b, "bridge.mix", Group::Bridge, cfg.teacher_width, cfg.bridge_hidden, dw);
        let bridge_image = Mlp::new(&mut b, "bridge.image", Group::Bridge, cfg.image_encoder.width, cfg.bridge_hidden, dw);
        let decoder = Decoder::new(&mut b, &cfg.decoder, cfg.target_vocab, 2);
        let student = Student { cfg: cfg.clone(), align_encoder, projection, image_encoder, bridge_mix, bridge_image, decoder };
        Ok(Self { student, params })
    }

    /// Rebuilds a model from its configuration and stored parameters.
    pub fn from_parts(cfg: &ModelConfig, params: &ParamStore) -> Result<Self, Error> {
        let mut m = Self::new(cfg, 0)?;
        m.params.load_values(params)?;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.student.cfg
    }

    pub fn param_counts(&self) -> BTreeMap<Group, usize> {
        Group::STUDENT.iter().map(|&g| (g, self.params.count_group(g))).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_image(&self, image: &RasterImage) -> Result<(), Error> {
        let cfg = &self.student.cfg;
        if (image.height(), image.width()) != (cfg.image_h, cfg.image_w) {
            return Err(Error::ShapeMismatch {
                what: "page image",
                expected: (cfg.image_h, cfg.image_w),
                found: (image.height(), image.width()),
            });
        }
        Ok(())
    }

    /// Encoder inputs for a page: ink patches for the alignment encoder (if
    /// any) and the image encoder.
    pub fn inputs(&self, image: &RasterImage) -> Result<EncoderInputs, Error> {
        self.check_image(image)?;
        let s = &self.student;
        let align = match &s.align_encoder {
            Some(e) if e.cfg.patch_h != s.image_encoder.cfg.patch_h || e.cfg.patch_w != s.image_encoder.cfg.patch_w => Some(e.input(image)?),
            _ => None,
        };
        Ok(EncoderInputs { image: s.image_encoder.input(image)?, align })
    }

    /// `H_align`, shaped like the teacher output (`l_MLLM × d_MLLM`).
    pub fn encode_align(&self, image: &RasterImage) -> Result<Matrix, Error> {
        let inputs = self.inputs(image)?;
        self.encode_align_from(&inputs)
    }

    pub fn encode_align_from(&self, inputs: &EncoderInputs) -> Result<Matrix, Error> {
        let s = &self.student;
        let p = &self.params;
        let proj = s.projection.as_ref().ok_or_else(|| Error::InvalidConfig("this variant has no alignment branch".into()))?;
        let feats = match &s.align_encoder {
            Some(e) => e.apply(p, inputs.align.as_ref().unwrap_or(&inputs.image)),
            None => s.image_encoder.apply(p, &inputs.image),
        };
        Ok(proj.apply(p, &feats))
    }

    /// `H_image` (`l_Image × d_Image`).
    pub fn encode_image(&self, image: &RasterImage) -> Result<Matrix, Error> {
        let inputs = self.inputs(image)?;
        Ok(self.student.image_encoder.apply(&self.params, &inputs.image))
    }

    /// Bridged decoder memories `[mix, image]` from the page alone, or with
    /// `mix_override` (teacher hidden states) replacing `H_align`.
    pub fn memories(&self, inputs: &EncoderInputs, mix_override: Option<&Matrix>) -> Result<[Matrix; 2], Error> {
        let s = &self.student;
        let p = &self.params;
        let h_image = s.image_encoder.apply(p, &inputs.image);
        let mix = match mix_override {
            Some(m) => {
                self.check_teacher_shape(m)?;
                m.clone()
            }
            None => {
                if s.cfg.architecture == Architecture::TeacherOutput {
                    return Err(Error::InvalidConfig("the teacher-output variant needs teacher hidden states".into()));
                }
                let feats = match &s.align_encoder {
                    Some(e) => e.apply(p, inputs.align.as_ref().unwrap_or(&inputs.image)),
                    None => h_image.clone(),
                };
                s.projection.as_ref().expect("alignment branch").apply(p, &feats)
            }
        };
        Ok([s.bridge_mix.apply(p, &mix), s.bridge_image.apply(p, &h_image)])
    }

    fn check_teacher_shape(&self, m: &Matrix) -> Result<(), Error> {
        let cfg = &self.student.cfg;
        if m.shape() != (cfg.teacher_len, cfg.teacher_width) {
            return Err(Error::ShapeMismatch { what: "teacher hidden states", expected: (cfg.teacher_len, cfg.teacher_width), found: m.shape() });
        }
        Ok(())
    }

    /// Next-token distribution after `prefix` (which starts with BOS),
    /// given `H_align` and `H_image`.
    pub fn decode_step(&self, prefix: &[u32], h_align: &Matrix, h_image: &Matrix) -> Result<Vec<f64>, Error> {
        if prefix.is_empty() {
            return Err(Error::InvalidConfig("decoding prefix must contain BOS".into()));
        }
        self.check_teacher_shape(h_align)?;
        let s = &self.student;
        let p = &self.params;
        let mix = s.bridge_mix.apply(p, h_align);
        let img = s.bridge_image.apply(p, h_image);
        let mut cache = s.decoder.start(p, &[&mix, &img]);
        let mut logits = Vec::new();
        for &tok in prefix {
            logits = s.decoder.step(p, &mut cache, tok)?;
        }
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Starts incremental decoding over bridged memories.
    pub fn start_decoding(&self, memories: &[Matrix; 2]) -> DecoderCache {
        self.student.decoder.start(&self.params, &[&memories[0], &memories[1]])
    }

    /// Feeds one token; returns next-token logits.
    pub fn decode_next(&self, cache: &mut DecoderCache, token: u32) -> Result<Vec<f64>, Error> {
        self.student.decoder.step(&self.params, cache, token)
    }

    /// Records the forward pass of one training example on `t`.
    ///
    /// `target` is the full `BOS … EOS` sequence; the decoder reads all but
    /// the last token and predicts all but the first. `teacher` is the
    /// alignment target (or the decoder memory for the teacher-output
    /// variant); without it no alignment loss is recorded.
    pub fn tape_forward<'a>(
        &'a self,
        t: &mut Tape<'a>,
        inputs: &'a EncoderInputs,
        teacher: Option<&'a Matrix>,
        target: &[u32],
        align_kind: AlignLossKind,
        reduction: TransReduction,
    ) -> Result<TapeOutputs, Error> {
        if target.len() < 2 {
            return Err(Error::InvalidConfig("target needs at least BOS and EOS".into()));
        }
        let s = &self.student;
        let image_in = t.input_ref(&inputs.image);
        let h_image = s.image_encoder.tape(t, image_in);
        let (h_align, mix) = match s.cfg.architecture {
            Architecture::TeacherOutput => {
                let m = teacher.ok_or_else(|| Error::InvalidConfig("the teacher-output variant needs teacher hidden states".into()))?;
                self.check_teacher_shape(m)?;
                let tv = t.input_ref(m);
                (None, tv)
            }
            _ => {
                let feats = match &s.align_encoder {
                    Some(e) => {
                        let x = match &inputs.align {
                            Some(a) => t.input_ref(a),
                            None => image_in,
                        };
                        e.tape(t, x)
                    }
                    None => h_image,
                };
                let h = s.projection.as_ref().expect("alignment branch").tape(t, feats);
                (Some(h), h)
            }
        };
        let align_loss = match (h_align, teacher) {
            (Some(h), Some(m)) => Some(t.align_loss(m, h, align_kind)?),
            _ => None,
        };
        let mix_mem = s.bridge_mix.tape(t, mix);
        let img_mem = s.bridge_image.tape(t, h_image);
        let logits = s.decoder.tape(t, &target[..target.len() - 1], &[mix_mem, img_mem])?;
        let trans_loss = t.cross_entropy(logits, &target[1..], reduction);
        Ok(TapeOutputs { h_align, align_loss, trans_loss, logits })
    }
}

/// Per-page encoder inputs; `align` is present only when the alignment
/// encoder uses a different patch grid from the image encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInputs {
    pub image: Matrix,
    pub align: Option<Matrix>,
}

/// Toy text-to-text translator whose decoder warm-starts the student:
/// embedded source tokens through a transformer stack, read by a decoder
/// with a single cross-attention block.
#[derive(Clone, Debug)]
pub struct TextTranslator {
    pub cfg: TextTranslatorConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub encoder: EncoderStack,
    pub decoder: Decoder,
    pub params: ParamStore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextTranslatorConfig {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub max_source: usize,
    pub encoder: StackConfig,
    pub decoder: DecoderConfig,
}

impl TextTranslator {
    pub fn new(cfg: &TextTranslatorConfig, seed: u64) -> Result<Self, Error> {
        cfg.encoder.validate("text encoder")?;
        cfg.decoder.stack().validate("decoder")?;
        if cfg.source_vocab == 0 || cfg.target_vocab < 5 || cfg.max_source == 0 {
            return Err(Error::InvalidConfig("text translator vocabularies and length must be positive".into()));
        }
        let mut params = ParamStore::new();
        let mut b = Builder { store: &mut params, init: Init::new(ChaCha8Rng::seed_from_u64(seed)) };
        let g = Group::TextEncoder;
        let w = cfg.encoder.width;
        let tok_emb = b.normal("text_encoder.tok_emb", g, cfg.source_vocab, w, 1.0);
        let pos_emb = b.normal("text_encoder.pos_emb", g, cfg.max_source, w, 0.1);
        let encoder = EncoderStack::new(&mut b, "text_encoder.stack", g, &cfg.encoder);
        let decoder = Decoder::new(&mut b, &cfg.decoder, cfg.target_vocab, 1);
        if w != cfg.decoder.width {
            return Err(Error::InvalidConfig("text encoder width must equal decoder width".into()));
        }
        Ok(Self { cfg: cfg.clone(), tok_emb, pos_emb, encoder, decoder, params })
    }

    fn check_source(&self, source: &[u32]) -> Result<(), Error> {
        if source.is_empty() || source.len() > self.cfg.max_source {
            return Err(Error::TooLong { len: source.len(), max: self.cfg.max_source });
        }
        if let Some(&bad) = source.iter().find(|&&t| t as usize >= self.cfg.source_vocab) {
            return Err(Error::TokenOutOfRange(bad));
        }
        Ok(())
    }

    /// Token-mean translation loss on `t` for one pair.
    pub fn tape_loss(&self, t: &mut Tape<'_>, source: &[u32], target: &[u32]) -> Result<Var, Error> {
        self.check_source(source)?;
        if target.len() < 2 {
            return Err(Error::InvalidConfig("target needs at least BOS and EOS".into()));
        }
        let emb = t.param(self.tok_emb);
        let x = t.gather(emb, source);
        let pos_all = t.param(self.pos_emb);
        let pos = t.slice_rows(pos_all, 0, source.len());
        let x = t.add(x, pos);
        let mem = self.encoder.tape(t, x);
        let logits = self.decoder.tape(t, &target[..target.len() - 1], &[mem])?;
        Ok(t.cross_entropy(logits, &target[1..], TransReduction::TokenMean))
    }

    pub fn encode(&self, source: &[u32]) -> Result<Matrix, Error> {
        self.check_source(source)?;
        let p = &self.params;
        let mut x = Matrix::zeros(0, self.cfg.encoder.width);
        for &tok in source {
            x.push_row(p.get(self.tok_emb).row(tok as usize));
        }
        x.add_assign(&p.get(self.pos_emb).slice_rows(0, source.len()));
        Ok(self.encoder.apply(p, &x))
    }

    pub fn start_decoding(&self, memory: &Matrix) -> DecoderCache {
        self.decoder.start(&self.params, &[memory])
    }

    pub fn decode_next(&self, cache: &mut DecoderCache, token: u32) -> Result<Vec<f64>, Error> {
        self.decoder.step(&self.params, cache, token)
    }
}
