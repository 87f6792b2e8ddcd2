//! Transformer building blocks.
//!
//! Each block registers its parameters in a [`ParamStore`] under a dotted
//! name and offers two evaluation paths: a tape path for training and a
//! direct path over borrowed parameters for inference. Both go through
//! the same kernels in [`crate::tensor`].

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::params::{Group, Init, ParamId, ParamStore};
use crate::tensor::{self, Matrix};

/// Registers parameters while a model is being assembled.
pub struct Builder<'s> {
    pub store: &'s mut ParamStore,
    pub init: Init,
}

impl Builder<'_> {
    pub fn weight(&mut self, name: &str, group: Group, rows: usize, cols: usize) -> ParamId {
        let m = self.init.fan_in(rows, cols);
        self.store.add(name, group, m)
    }

    pub fn normal(&mut self, name: &str, group: Group, rows: usize, cols: usize, std: f64) -> ParamId {
        let m = self.init.normal(rows, cols, std);
        self.store.add(name, group, m)
    }

    pub fn zeros(&mut self, name: &str, group: Group, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, group, Matrix::zeros(rows, cols))
    }

    pub fn ones(&mut self, name: &str, group: Group, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, group, Matrix::filled(rows, cols, 1.0))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, name: &str, group: Group, input: usize, output: usize) -> Self {
        Self {
            w: b.weight(&format!("{name}.w"), group, input, output),
            b: b.zeros(&format!("{name}.b"), group, 1, output),
        }
    }

    pub fn tape(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let h = t.matmul(x, w);
        t.add_row(h, b)
    }

    pub fn apply(&self, p: &ParamStore, x: &Matrix) -> Matrix {
        tensor::linear(x, p.get(self.w), p.get(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, group: Group, width: usize) -> Self {
        Self {
            gamma: b.ones(&format!("{name}.gamma"), group, 1, width),
            beta: b.zeros(&format!("{name}.beta"), group, 1, width),
        }
    }

    pub fn tape(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b)
    }

    pub fn apply(&self, p: &ParamStore, x: &Matrix) -> Matrix {
        tensor::layer_norm(x, p.get(self.gamma), p.get(self.beta)).0
    }
}

/// Two linear layers with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(b: &mut Builder<'_>, name: &str, group: Group, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), group, input, hidden),
            fc2: Linear::new(b, &format!("{name}.fc2"), group, hidden, output),
        }
    }

    pub fn tape(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let h = self.fc1.tape(t, x);
        let h = t.gelu(h);
        self.fc2.tape(t, h)
    }

    pub fn apply(&self, p: &ParamStore, x: &Matrix) -> Matrix {
        let h = tensor::gelu_matrix(&self.fc1.apply(p, x));
        self.fc2.apply(p, &h)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(b: &mut Builder<'_>, name: &str, group: Group, width: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(b, &format!("{name}.q"), group, width, width),
            k: Linear::new(b, &format!("{name}.k"), group, width, width),
            v: Linear::new(b, &format!("{name}.v"), group, width, width),
            o: Linear::new(b, &format!("{name}.o"), group, width, width),
            heads,
        }
    }

    pub fn tape(&self, t: &mut Tape<'_>, x: Var, memory: Var, causal: bool) -> Var {
        let q = self.q.tape(t, x);
        let k = self.k.tape(t, memory);
        let v = self.v.tape(t, memory);
        let a = t.attention(q, k, v, self.heads, causal);
        self.o.tape(t, a)
    }

    pub fn apply(&self, p: &ParamStore, x: &Matrix, memory: &Matrix, causal: bool) -> Matrix {
        let q = self.q.apply(p, x);
        let k = self.k.apply(p, memory);
        let v = self.v.apply(p, memory);
        let (a, _) = tensor::attention(&q, &k, &v, self.heads, causal, 0);
        self.o.apply(p, &a)
    }

    /// Attends already projected keys/values (a decoding cache).
    pub fn apply_cached(&self, p: &ParamStore, x: &Matrix, keys: &Matrix, values: &Matrix) -> Matrix {
        let q = self.q.apply(p, x);
        let (a, _) = tensor::attention(&q, keys, values, self.heads, false, 0);
        self.o.apply(p, &a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward hidden width as a multiple of `width`.
    pub ffn_mult: usize,
}

impl StackConfig {
    pub fn validate(&self, what: &str) -> Result<(), crate::Error> {
        if self.width == 0 || self.heads == 0 || self.ffn_mult == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(crate::Error::InvalidConfig(format!(
                "{what}: width {} must be positive and divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

/// Pre-norm bidirectional transformer block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: Mlp,
}

/// Stack of [`EncoderBlock`]s with a final normalisation.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub blocks: Vec<EncoderBlock>,
    pub ln_f: LayerNorm,
}

impl EncoderStack {
    pub fn new(b: &mut Builder<'_>, name: &str, group: Group, cfg: &StackConfig) -> Self {
        let blocks = (0..cfg.layers)
            .map(|i| {
                let n = format!("{name}.blocks.{i}");
                EncoderBlock {
                    ln1: LayerNorm::new(b, &format!("{n}.ln1"), group, cfg.width),
                    attn: Attention::new(b, &format!("{n}.attn"), group, cfg.width, cfg.heads),
                    ln2: LayerNorm::new(b, &format!("{n}.ln2"), group, cfg.width),
                    ffn: Mlp::new(b, &format!("{n}.ffn"), group, cfg.width, cfg.width * cfg.ffn_mult, cfg.width),
                }
            })
            .collect();
        Self { blocks, ln_f: LayerNorm::new(b, &format!("{name}.ln_f"), group, cfg.width) }
    }

    pub fn tape(&self, t: &mut Tape<'_>, mut x: Var) -> Var {
        for blk in &self.blocks {
            let h = blk.ln1.tape(t, x);
            let a = blk.attn.tape(t, h, h, false);
            x = t.add(x, a);
            let h = blk.ln2.tape(t, x);
            let f = blk.ffn.tape(t, h);
            x = t.add(x, f);
        }
        self.ln_f.tape(t, x)
    }

    pub fn apply(&self, p: &ParamStore, x: &Matrix) -> Matrix {
        let mut x = x.clone();
        for blk in &self.blocks {
            let h = blk.ln1.apply(p, &x);
            x.add_assign(&blk.attn.apply(p, &h, &h, false));
            let h = blk.ln2.apply(p, &x);
            x.add_assign(&blk.ffn.apply(p, &h));
        }
        self.ln_f.apply(p, &x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_positions: usize,
}

impl DecoderConfig {
    pub fn stack(&self) -> StackConfig {
        StackConfig { width: self.width, layers: self.layers, heads: self.heads, ffn_mult: self.ffn_mult }
    }
}

#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub ln: LayerNorm,
    pub attn: Attention,
}

/// Pre-norm decoder layer: causal self-attention, then one cross-attention
/// per memory in order, then the feed-forward network.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub cross: Vec<CrossBlock>,
    pub ln_ffn: LayerNorm,
    pub ffn: Mlp,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub ln_f: LayerNorm,
    pub out: Linear,
    pub max_positions: usize,
    pub vocab: usize,
}

/// Parameter-name fragment used for cross-attention blocks; warm starts
/// skip every parameter containing it.
pub const CROSS_MARKER: &str = ".cross";

impl Decoder {
    pub fn new(b: &mut Builder<'_>, cfg: &DecoderConfig, vocab: usize, memories: usize) -> Self {
        let g = Group::Decoder;
        let w = cfg.width;
        let layers = (0..cfg.layers)
            .map(|i| {
                let n = format!("decoder.layers.{i}");
                DecoderLayer {
                    ln_self: LayerNorm::new(b, &format!("{n}.ln_self"), g, w),
                    self_attn: Attention::new(b, &format!("{n}.self_attn"), g, w, cfg.heads),
                    cross: (0..memories)
                        .map(|m| CrossBlock {
                            ln: LayerNorm::new(b, &format!("{n}{CROSS_MARKER}{m}.ln"), g, w),
                            attn: Attention::new(b, &format!("{n}{CROSS_MARKER}{m}.attn"), g, w, cfg.heads),
                        })
                        .collect(),
                    ln_ffn: LayerNorm::new(b, &format!("{n}.ln_ffn"), g, w),
                    ffn: Mlp::new(b, &format!("{n}.ffn"), g, w, w * cfg.ffn_mult, w),
                }
            })
            .collect();
        Self {
            tok_emb: b.normal("decoder.tok_emb", g, vocab, w, 1.0),
            pos_emb: b.normal("decoder.pos_emb", g, cfg.max_positions, w, 0.1),
            layers,
            ln_f: LayerNorm::new(b, "decoder.ln_f", g, w),
            out: Linear::new(b, "decoder.out", g, w, vocab),
            max_positions: cfg.max_positions,
            vocab,
        }
    }

    /// Teacher-forced logits for every input position.
    pub fn tape(&self, t: &mut Tape<'_>, inputs: &[u32], memories: &[Var]) -> Result<Var, crate::Error> {
        if inputs.len() > self.max_positions {
            return Err(crate::Error::TooLong { len: inputs.len(), max: self.max_positions });
        }
        if let Some(&bad) = inputs.iter().find(|&&id| id as usize >= self.vocab) {
            return Err(crate::Error::TokenOutOfRange(bad));
        }
        let emb = t.param(self.tok_emb);
        let tok = t.gather(emb, inputs);
        let pos_all = t.param(self.pos_emb);
        let pos = t.slice_rows(pos_all, 0, inputs.len());
        let mut x = t.add(tok, pos);
        for layer in &self.layers {
            let h = layer.ln_self.tape(t, x);
            let a = layer.self_attn.tape(t, h, h, true);
            x = t.add(x, a);
            for (blk, &mem) in layer.cross.iter().zip(memories) {
                let h = blk.ln.tape(t, x);
                let a = blk.attn.tape(t, h, mem, false);
                x = t.add(x, a);
            }
            let h = layer.ln_ffn.tape(t, x);
            let f = layer.ffn.tape(t, h);
            x = t.add(x, f);
        }
        let x = self.ln_f.tape(t, x);
        Ok(self.out.tape(t, x))
    }

    /// Projects each memory into per-layer keys and values once.
    pub fn start(&self, p: &ParamStore, memories: &[&Matrix]) -> DecoderCache {
        let cross = self
            .layers
            .iter()
            .map(|layer| {
                layer
                    .cross
                    .iter()
                    .zip(memories)
                    .map(|(blk, mem)| (blk.attn.k.apply(p, mem), blk.attn.v.apply(p, mem)))
                    .collect()
            })
            .collect();
        let width = p.get(self.tok_emb).cols();
        DecoderCache {
            self_kv: self.layers.iter().map(|_| (Matrix::zeros(0, width), Matrix::zeros(0, width))).collect(),
            cross,
            len: 0,
        }
    }

    /// Feeds one token and returns the logits for the next position.
    pub fn step(&self, p: &ParamStore, cache: &mut DecoderCache, token: u32) -> Result<Vec<f64>, crate::Error> {
        let pos = cache.len;
        if pos >= self.max_positions {
            return Err(crate::Error::TooLong { len: pos + 1, max: self.max_positions });
        }
        if token as usize >= self.vocab {
            return Err(crate::Error::TokenOutOfRange(token));
        }
        let emb = p.get(self.tok_emb);
        let mut x = Matrix::from_vec(1, emb.cols(), emb.row(token as usize).to_vec());
        x.add_assign(&p.get(self.pos_emb).slice_rows(pos, 1));
        for (li, layer) in self.layers.iter().enumerate() {
            let h = layer.ln_self.apply(p, &x);
            let (keys, values) = &mut cache.self_kv[li];
            keys.push_row(layer.self_attn.k.apply(p, &h).row(0));
            values.push_row(layer.self_attn.v.apply(p, &h).row(0));
            x.add_assign(&layer.self_attn.apply_cached(p, &h, keys, values));
            for (blk, (mk, mv)) in layer.cross.iter().zip(&cache.cross[li]) {
                let h = blk.ln.apply(p, &x);
                x.add_assign(&blk.attn.apply_cached(p, &h, mk, mv));
            }
            let h = layer.ln_ffn.apply(p, &x);
            x.add_assign(&layer.ffn.apply(p, &h));
        }
        cache.len += 1;
        let x = self.ln_f.apply(p, &x);
        Ok(self.out.apply(p, &x).into_vec())
    }
}

/// Incremental decoding state: projected self-attention keys/values per
/// layer and projected memories per layer and cross block.
#[derive(Clone, Debug)]
pub struct DecoderCache {
    self_kv: Vec<(Matrix, Matrix)>,
    cross: Vec<Vec<(Matrix, Matrix)>>,
    len: usize,
}

impl DecoderCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
