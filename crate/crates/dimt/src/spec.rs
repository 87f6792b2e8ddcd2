//! Experiment specifications: one TOML file holding every section, with
//! derived fields (image size, vocabulary sizes, teacher shape, seeds)
//! filled in by [`ExperimentSpec::resolve`].

use std::path::{Path, PathBuf};

use anyhow::{anyhow, ensure, Context, Result};
use dimt_core::inference::BeamConfig;
use dimt_core::model::{EncoderConfig, ModelConfig};
use dimt_core::nn::{DecoderConfig, StackConfig};
use dimt_core::synthdoc::generate::{build_lexicon, source_vocab, target_vocab};
use dimt_core::synthdoc::{GenerationConfig, RenderConfig, Split};
use dimt_core::teacher::TeacherConfig;
use dimt_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split: Split,
    pub beam: BeamConfig,
    /// Size of the simplest/most complex layout slices.
    pub layout_k: usize,
    /// Evaluate only the first `n` samples of the split.
    pub max_samples: Option<usize>,
    /// Samples decoded greedily at each validation point during training.
    pub validation_samples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: Split::Test, beam: BeamConfig::default(), layout_k: 20, max_samples: None, validation_samples: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { alphas: vec![0.0, 0.5, 1.0, 2.0, 4.0] }
    }
}

/// Text-to-text pretraining of the warm-start translator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub encoder: StackConfig,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { encoder: StackConfig { width: 128, layers: 2, heads: 4, ffn_mult: 4 }, steps: 1000, lr: 5e-4, batch_size: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// The single source of randomness; section seeds are derived from it.
    pub seed: u64,
    pub corpus_dir: Option<PathBuf>,
    /// Text-translator checkpoint whose decoder initialises the student.
    pub warm_start: Option<PathBuf>,
    pub corpus: GenerationConfig,
    pub teacher: TeacherConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub pretrain: PretrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            corpus_dir: None,
            warm_start: None,
            corpus: GenerationConfig::default(),
            teacher: TeacherConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            pretrain: PretrainConfig::default(),
        }
    }
}

const TEACHER_SEED_SALT: u64 = 0x5eed_7eac_4e00_0001;
const MODEL_SEED_SALT: u64 = 0x5eed_0de1_0000_0002;

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Sets one field by dotted path (`train.alpha`, `eval.beam.width`).
    /// `value` is read as a TOML value, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut root = toml::Table::try_from(&*self)?;
        let path: Vec<&str> = key.split('.').collect();
        let (last, parents) = path.split_last().ok_or_else(|| anyhow!("empty key"))?;
        let mut table = &mut root;
        for p in parents {
            table = table.get_mut(*p).and_then(toml::Value::as_table_mut).ok_or_else(|| anyhow!("unknown section `{p}` in `{key}`"))?;
        }
        table.insert((*last).to_string(), parsed);
        let spec: Self = root.try_into().with_context(|| format!("setting `{key}`"))?;
        // unknown nested keys are dropped silently by serde, so look for the
        // key again after the round trip
        let back = toml::Table::try_from(&spec)?;
        let mut cur = Some(&back);
        for p in parents {
            cur = cur.and_then(|t| t.get(*p)).and_then(toml::Value::as_table);
        }
        ensure!(cur.is_some_and(|t| t.contains_key(*last)), "unknown key `{key}`");
        *self = spec;
        Ok(())
    }

    pub fn model_seed(&self) -> u64 {
        self.seed ^ MODEL_SEED_SALT
    }

    /// Fills every derived field so the sections agree with each other.
    pub fn resolve(&mut self) -> Result<()> {
        self.corpus.seed = self.seed;
        self.teacher.seed = self.seed ^ TEACHER_SEED_SALT;
        self.train.seed = self.seed;
        self.corpus.validate()?;
        let lexicon = build_lexicon(&self.corpus)?;
        let (h, w) = (self.corpus.render.height, self.corpus.render.width);
        self.teacher.image_h = h;
        self.teacher.image_w = w;
        self.teacher.source_vocab = source_vocab(&lexicon).len();
        self.teacher.validate()?;
        self.model.image_h = h;
        self.model.image_w = w;
        self.model.teacher_len = self.teacher.seq_len;
        self.model.teacher_width = self.teacher.width;
        self.model.target_vocab = target_vocab(&lexicon).len();
        self.model.architecture = self.train.architecture();
        self.model.validate()?;
        self.train.validate()?;
        self.eval.beam.validate(self.model.decoder.max_positions)?;
        Ok(())
    }

    /// The small configuration used by the acceptance suite and tests.
    pub fn desk() -> Self {
        let render = RenderConfig { height: 96, width: 128, margin: 4, heading_px: [12, 10, 8], ..RenderConfig::default() };
        let corpus = GenerationConfig {
            samples: 2400,
            split: [2000.0 / 2400.0, 200.0 / 2400.0, 200.0 / 2400.0],
            vocab_size: 24,
            min_words: 6,
            max_words: 14,
            render,
            ..GenerationConfig::default()
        };
        let enc = EncoderConfig { patch_h: 16, patch_w: 16, width: 48, layers: 2, heads: 4, ffn_mult: 2 };
        Self {
            name: "desk".into(),
            corpus,
            teacher: TeacherConfig { seq_len: 96, width: 64, depth: 2, heads: 4, ffn_mult: 2, patch_h: 16, patch_w: 16, ..TeacherConfig::default() },
            model: ModelConfig {
                align_encoder: enc,
                image_encoder: enc,
                ffn_dim_hidden: 64,
                ffn_length_hidden: 64,
                bridge_hidden: 64,
                decoder: DecoderConfig { width: 64, layers: 2, heads: 4, ffn_mult: 2, max_positions: 64 },
                ..ModelConfig::default()
            },
            train: TrainConfig {
                lr: 1e-3,
                warmup_steps: 100,
                max_steps: 4000,
                batch_size: 8,
                eval_every: 800,
                checkpoint_every: 500,
                ..TrainConfig::default()
            },
            eval: EvalConfig { beam: BeamConfig { max_len: 64, ..BeamConfig::default() }, layout_k: 20, ..EvalConfig::default() },
            pretrain: PretrainConfig {
                encoder: StackConfig { width: 64, layers: 1, heads: 4, ffn_mult: 2 },
                steps: 300,
                lr: 1e-3,
                batch_size: 8,
            },
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for spec in [ExperimentSpec::default(), ExperimentSpec::desk()] {
            let text = spec.to_toml().unwrap();
            assert_eq!(ExperimentSpec::from_toml(&text).unwrap(), spec);
        }
    }

    #[test]
    fn resolve_links_sections() {
        let mut s = ExperimentSpec::desk();
        s.seed = 9;
        s.train.use_teacher_output = true;
        s.resolve().unwrap();
        assert_eq!(s.corpus.seed, 9);
        assert_eq!((s.model.teacher_len, s.model.teacher_width), (s.teacher.seq_len, s.teacher.width));
        assert_eq!(s.model.architecture, dimt_core::model::Architecture::TeacherOutput);
        assert_eq!(s.teacher.image_h, s.corpus.render.height);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentSpec::from_toml("nmae = \"x\"").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut s = ExperimentSpec::desk();
        s.set("train.alpha", "2").unwrap();
        s.set("eval.max_samples", "7").unwrap();
        s.set("train.align_loss", "mse").unwrap();
        s.set("name", "run-a").unwrap();
        assert_eq!(s.train.alpha, 2.0);
        assert_eq!(s.eval.max_samples, Some(7));
        assert_eq!(s.train.align_loss, dimt_core::loss::AlignLossKind::Mse);
        assert_eq!(s.name, "run-a");
        let before = s.clone();
        assert!(s.set("train.alpah", "1").is_err());
        assert!(s.set("nosuch.alpha", "1").is_err());
        assert!(s.set("train.alpha", "\"high\"").is_err());
        assert_eq!(s, before);
    }
}
