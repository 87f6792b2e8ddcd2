//! Joint optimisation of the student against the translation and
//! alignment objectives with the teacher frozen.

use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::loss::{mean_row_cosine, total_loss, AlignLossKind, TransReduction};
use crate::model::{Architecture, EncoderInputs, Model, ModelConfig, TextTranslator};
use crate::nn::CROSS_MARKER;
use crate::params::{Group, ParamStore};
use crate::synthdoc::DocumentSample;
use crate::teacher::{ModalityMask, Teacher};
use crate::tensor::Matrix;
use crate::vocab::Vocab;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub align_loss: AlignLossKind,
    pub trans_reduction: TransReduction,
    /// `L_align` is still computed and logged but contributes no gradient.
    pub no_align_loss: bool,
    /// The image encoder's output feeds both projections; no separate
    /// alignment encoder.
    pub no_alignment_encoder: bool,
    /// The decoder reads teacher hidden states instead of `H_align`.
    pub use_teacher_output: bool,
    pub mask: ModalityMask,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub adam: AdamConfig,
    pub eval_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lr: 5e-5,
            warmup_steps: 1000,
            max_steps: 3000,
            batch_size: 16,
            seed: 0,
            align_loss: AlignLossKind::Cosine,
            trans_reduction: TransReduction::TokenMean,
            no_align_loss: false,
            no_alignment_encoder: false,
            use_teacher_output: false,
            mask: ModalityMask::FULL,
            grad_clip: 1.0,
            adam: AdamConfig::default(),
            eval_every: 250,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig("alpha must be finite and non-negative".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::InvalidConfig("learning rate, batch size and max steps must be positive".into()));
        }
        if self.warmup_steps > self.max_steps {
            return Err(Error::InvalidConfig("warmup steps exceed max steps".into()));
        }
        if self.no_alignment_encoder && self.use_teacher_output {
            return Err(Error::InvalidConfig("no_alignment_encoder and use_teacher_output are exclusive".into()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::InvalidConfig("gradient clip must be finite and non-negative".into()));
        }
        self.mask.validate()
    }

    pub fn architecture(&self) -> Architecture {
        if self.use_teacher_output {
            Architecture::TeacherOutput
        } else if self.no_alignment_encoder {
            Architecture::NoAlignmentEncoder
        } else {
            Architecture::Full
        }
    }

    /// The weight the alignment loss actually receives.
    pub fn effective_alpha(&self) -> f64 {
        if self.no_align_loss || self.use_teacher_output {
            0.0
        } else {
            self.alpha
        }
    }
}

/// Linear warm-up from 0 to the peak, then linear decay to 0 at
/// `max_steps`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let step = step.min(cfg.max_steps);
    if step < cfg.warmup_steps {
        cfg.lr * step as f64 / cfg.warmup_steps as f64
    } else if cfg.max_steps == cfg.warmup_steps {
        cfg.lr
    } else {
        cfg.lr * (cfg.max_steps - step) as f64 / (cfg.max_steps - cfg.warmup_steps) as f64
    }
}

/// Adam moments, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self { m: params.zero_grads(), v: params.zero_grads(), t: 0 }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Matrix], lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(cfg.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, self.t as f64);
        for (i, param) in params.iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (j, w) in param.value.as_mut_slice().iter_mut().enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                *w -= lr * (m[j] / c1) / (libm::sqrt(v[j] / c2) + cfg.eps);
            }
        }
    }
}

/// Scales `grads` to global norm `clip` if it is larger (`clip = 0`
/// leaves them alone); returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Matrix], clip: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(Matrix::sum_squares).sum::<f64>());
    if clip > 0.0 && norm > clip {
        let s = clip / norm;
        grads.iter_mut().for_each(|g| g.scale_assign(s));
    }
    norm
}

/// One prepared training pair: encoder inputs, the teacher's hidden states
/// under the run's modality mask, and `BOS … EOS` target ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub inputs: EncoderInputs,
    pub teacher: Matrix,
    pub target: Vec<u32>,
}

impl TrainExample {
    pub fn build(model: &Model, teacher: &Teacher, sample: &DocumentSample, vocab: &Vocab, mask: ModalityMask) -> Result<Self, Error> {
        let shape = teacher.output_shape();
        let cfg = model.config();
        if shape != (cfg.teacher_len, cfg.teacher_width) {
            return Err(Error::ShapeMismatch { what: "teacher output", expected: (cfg.teacher_len, cfg.teacher_width), found: shape });
        }
        let target = vocab.encode_target(&sample.reference_markdown);
        if target.len() - 1 > cfg.decoder.max_positions {
            return Err(Error::TooLong { len: target.len() - 1, max: cfg.decoder.max_positions });
        }
        let rep = teacher.encode_mix(&sample.image, &sample.source, mask)?;
        Ok(Self { id: sample.id.clone(), inputs: model.inputs(&sample.image)?, teacher: rep.hidden, target })
    }
}

/// Per-step scalars; `total` is `effective α · align + trans` computed from
/// the stored values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub align: f64,
    pub trans: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Losses and gradients of one batch without touching the parameters.
pub fn batch_gradients(model: &Model, batch: &[&TrainExample], cfg: &TrainConfig) -> Result<(f64, f64, Vec<Matrix>), Error> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let alpha = cfg.effective_alpha();
    let inv = 1.0 / batch.len() as f64;
    let mut grads = model.params.zero_grads();
    let (mut align, mut trans) = (0.0, 0.0);
    for ex in batch {
        let mut t = Tape::new(&model.params);
        let out = model.tape_forward(&mut t, &ex.inputs, Some(&ex.teacher), &ex.target, cfg.align_loss, cfg.trans_reduction)?;
        let mut seeds = alloc::vec![(out.trans_loss, inv)];
        trans += t.scalar(out.trans_loss);
        if let Some(a) = out.align_loss {
            align += t.scalar(a);
            if alpha > 0.0 {
                seeds.push((a, alpha * inv));
            }
        }
        t.backward(&seeds, &mut grads);
    }
    Ok((align * inv, trans * inv, grads))
}

/// Training state: model, optimiser moments and completed step count.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self, Error> {
        cfg.validate()?;
        if model.config().architecture != cfg.architecture() {
            return Err(Error::InvalidConfig("model architecture does not match the ablation flags".into()));
        }
        let adam = AdamState::new(&model.params);
        Ok(Self { cfg, model, adam, step: 0 })
    }

    /// Sample indices of batch `step` (0-based): consecutive slices of
    /// per-epoch permutations seeded by `(seed, epoch)`.
    pub fn batch_indices(&self, step: usize, n: usize) -> Vec<usize> {
        batch_indices(self.cfg.seed, step, self.cfg.batch_size, n)
    }

    /// One optimiser update on `batch`.
    pub fn train_step(&mut self, batch: &[&TrainExample]) -> Result<StepRecord, Error> {
        let (align, trans, mut grads) = batch_gradients(&self.model, batch, &self.cfg)?;
        let total = total_loss(align, trans, self.cfg.effective_alpha());
        if !total.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("gradient norm"));
        }
        let lr = lr_schedule(self.step + 1, &self.cfg);
        self.adam.update(&mut self.model.params, &grads, lr, &self.cfg.adam);
        self.step += 1;
        Ok(StepRecord { step: self.step, lr, align, trans, total, grad_norm })
    }

    /// Runs the step for the current position of the data order.
    pub fn next_step(&mut self, data: &[TrainExample]) -> Result<StepRecord, Error> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("empty training split".into()));
        }
        let idx = self.batch_indices(self.step, data.len());
        let batch: Vec<&TrainExample> = idx.iter().map(|&i| &data[i]).collect();
        self.train_step(&batch)
    }
}

pub fn batch_indices(seed: u64, step: usize, batch_size: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut pos = step * batch_size;
    let mut epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    while out.len() < batch_size {
        let e = pos / n;
        if e != epoch {
            epoch = e;
            perm = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64 + 1);
            perm.shuffle(&mut rng);
        }
        out.push(perm[pos % n]);
        pos += 1;
    }
    out
}

/// Seeded student initialisation; with a text translator, every decoder
/// parameter outside the cross-attention blocks is copied from it.
pub fn init_params(cfg: &ModelConfig, seed: u64, warm_start: Option<&TextTranslator>) -> Result<Model, Error> {
    let mut model = Model::new(cfg, seed)?;
    if let Some(src) = warm_start {
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id);
            if model.params.group(id) != Group::Decoder || name.contains(CROSS_MARKER) {
                continue;
            }
            let sid = src.params.find(name).ok_or_else(|| Error::InvalidConfig(alloc::format!("warm start lacks {name}")))?;
            let value = src.params.get(sid);
            let dst = model.params.get_mut(id);
            if dst.shape() != value.shape() {
                return Err(Error::ShapeMismatch { what: "warm-start decoder parameter", expected: dst.shape(), found: value.shape() });
            }
            *dst = value.clone();
        }
    }
    Ok(model)
}

/// Mean per-position cosine between `H_align` and the teacher states.
pub fn mean_alignment_cosine(model: &Model, data: &[TrainExample]) -> Result<f64, Error> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("no examples to evaluate".into()));
    }
    let mut sum = 0.0;
    for ex in data {
        let h = model.encode_align_from(&ex.inputs)?;
        sum += mean_row_cosine(&ex.teacher, &h)?;
    }
    Ok(sum / data.len() as f64)
}

/// Source/target id pair for text-to-text pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct TextPair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// Trains the toy text translator with the same schedule and optimiser.
pub fn pretrain_text(
    model: &mut TextTranslator,
    data: &[TextPair],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(), Error> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let mut adam = AdamState::new(&model.params);
    let inv = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.max_steps {
        let mut grads = model.params.zero_grads();
        let mut trans = 0.0;
        for i in batch_indices(cfg.seed, step, cfg.batch_size, data.len()) {
            let mut t = Tape::new(&model.params);
            let loss = model.tape_loss(&mut t, &data[i].source, &data[i].target)?;
            trans += t.scalar(loss);
            t.backward(&[(loss, inv)], &mut grads);
        }
        trans *= inv;
        if !trans.is_finite() {
            return Err(Error::NonFinite("text pretraining loss"));
        }
        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
        let lr = lr_schedule(step + 1, cfg);
        adam.update(&mut model.params, &grads, lr, &cfg.adam);
        on_step(&StepRecord { step: step + 1, lr, align: 0.0, trans, total: trans, grad_norm });
    }
    Ok(())
}
