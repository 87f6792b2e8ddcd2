//! Pipelines behind the CLI: corpus generation, training with resumable
//! checkpoints, evaluation, ablation and α sweeps, representation export,
//! and text-translator pretraining.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use dimt_core::image::RasterImage;
use dimt_core::inference::{translate, translate_with_teacher, BeamConfig, TranslationResult};
use dimt_core::loss::{mean_row_cosine, AlignLossKind};
use dimt_core::metrics::report::{default_slices, slice_report, EvalReport, EvalSample};
use dimt_core::metrics::BleuConfig;
use dimt_core::model::{Architecture, Model, TextTranslator, TextTranslatorConfig};
use dimt_core::synthdoc::{generate_corpus, Corpus, DocumentSample, Split};
use dimt_core::teacher::{ModalityMask, Teacher};
use dimt_core::training::{init_params, mean_alignment_cosine, pretrain_text, StepRecord, TextPair, TrainExample, Trainer};
use dimt_core::vocab::Vocab;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{file_hash, Checkpoint, Payload};
use crate::io::{read_corpus, read_json, read_jsonl, write_corpus, write_json, write_jsonl, RunDir};
use crate::plot;
use crate::spec::ExperimentSpec;

/// One line of `train_log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Valid(ValidRecord),
    /// Written when training stops on a non-finite value.
    Abort { step: usize, reason: String },
}

impl LogRecord {
    pub fn step(&self) -> usize {
        match self {
            LogRecord::Step(r) => r.step,
            LogRecord::Valid(r) => r.step,
            LogRecord::Abort { step, .. } => *step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidRecord {
    pub step: usize,
    pub bleu: f64,
    pub bleu_pt: f64,
    pub steds: f64,
    /// Mean per-position cosine between `H_align` and the teacher states;
    /// absent for the teacher-output variant.
    pub cosine: Option<f64>,
}

pub fn steps(log: &[LogRecord]) -> Vec<&StepRecord> {
    log.iter().filter_map(|r| if let LogRecord::Step(s) = r { Some(s) } else { None }).collect()
}

pub fn validations(log: &[LogRecord]) -> Vec<&ValidRecord> {
    log.iter().filter_map(|r| if let LogRecord::Valid(s) = r { Some(s) } else { None }).collect()
}

/// Error raised for inconsistent inputs; maps to the data-error exit code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataError(pub String);

fn data_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(DataError(msg.into()))
}

pub fn gen_corpus(spec: &ExperimentSpec, out: &Path) -> Result<Corpus> {
    let mut spec = spec.clone();
    spec.resolve()?;
    let corpus = generate_corpus(&spec.corpus)?;
    write_corpus(out, &corpus)?;
    Ok(corpus)
}

/// A resolved spec with its corpus and frozen teacher.
pub struct Workspace {
    pub spec: ExperimentSpec,
    pub corpus: Corpus,
    pub teacher: Teacher,
}

impl Workspace {
    pub fn open(spec: &ExperimentSpec, corpus_dir: &Path) -> Result<Self> {
        let mut spec = spec.clone();
        spec.resolve()?;
        let corpus = read_corpus(corpus_dir)?;
        if corpus.manifest.config != spec.corpus {
            return Err(data_err(format!(
                "corpus at {} was generated from a different configuration (seed {} vs spec seed {})",
                corpus_dir.display(),
                corpus.manifest.seed,
                spec.seed
            )));
        }
        ensure!(!corpus.manifest.train.is_empty(), DataError("corpus has an empty train split".into()));
        let teacher = Teacher::build(&spec.teacher)?;
        Ok(Self { spec, corpus, teacher })
    }

    fn payload(&self) -> Payload {
        Payload::Student {
            model: self.spec.model.clone(),
            teacher: self.spec.teacher.clone(),
            train: self.spec.train.clone(),
            source_vocab: self.corpus.source_vocab.clone(),
            target_vocab: self.corpus.target_vocab.clone(),
        }
    }

    fn examples(&self, model: &Model, samples: &[&DocumentSample]) -> Result<Vec<TrainExample>> {
        samples
            .iter()
            .map(|s| {
                TrainExample::build(model, &self.teacher, s, &self.corpus.target_vocab, self.spec.train.mask)
                    .with_context(|| format!("preparing {}", s.id))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub resume: bool,
    /// Stop after this many completed steps (simulates an interruption).
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub checkpoint_hash: String,
    pub steps: usize,
    pub completed: bool,
    pub log: Vec<LogRecord>,
}

fn append_log(path: &Path, rec: &LogRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    serde_json::to_writer(&mut f, rec)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Greedy validation over `samples` plus the alignment cosine.
pub fn validate(
    model: &Model,
    teacher: &Teacher,
    samples: &[&DocumentSample],
    examples: &[TrainExample],
    vocab: &Vocab,
    step: usize,
) -> Result<ValidRecord> {
    let beam = BeamConfig::greedy(model.config().decoder.max_positions);
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let hyp = decode_sample(model, teacher_for(model, teacher), s, &beam, vocab)?;
        rows.push(eval_sample(s, hyp.markdown));
    }
    let report = slice_report(&rows, &[], &BleuConfig::default())?;
    let cosine = match model.config().architecture {
        Architecture::TeacherOutput => None,
        _ => Some(mean_alignment_cosine(model, examples)?),
    };
    Ok(ValidRecord { step, bleu: report.corpus.bleu, bleu_pt: report.corpus.bleu_pt, steds: report.corpus.steds, cosine })
}

fn teacher_for<'t>(model: &Model, teacher: &'t Teacher) -> Option<&'t Teacher> {
    (model.config().architecture == Architecture::TeacherOutput).then_some(teacher)
}

fn eval_sample(s: &DocumentSample, hypothesis: String) -> EvalSample {
    EvalSample {
        id: s.id.clone(),
        context_length: s.context_length,
        layout_nodes: s.layout_nodes,
        reference: s.reference_markdown.clone(),
        hypothesis,
    }
}

/// Student-only translation unless the model reads teacher states.
fn decode_sample(model: &Model, teacher: Option<&Teacher>, s: &DocumentSample, beam: &BeamConfig, vocab: &Vocab) -> Result<TranslationResult> {
    Ok(match teacher {
        Some(t) => translate_with_teacher(model, t, &s.image, Some(&s.source), beam, vocab)?,
        None => translate(model, &s.image, beam, vocab)?,
    })
}

fn check_payload(ckpt: &Checkpoint, ws: &Workspace) -> Result<()> {
    if ckpt.header.payload != ws.payload() {
        return Err(data_err("checkpoint configuration differs from the spec; cannot resume"));
    }
    Ok(())
}

pub fn train(spec: &ExperimentSpec, corpus_dir: &Path, out: &Path, opts: &TrainOptions) -> Result<TrainOutcome> {
    let ws = Workspace::open(spec, corpus_dir)?;
    let spec = &ws.spec;
    let rd = RunDir::create(out)?;
    fs::write(rd.file("spec.resolved.toml"), spec.to_toml()?)?;
    let log_path = rd.file("train_log.jsonl");
    let teacher_fp = ws.teacher.params().fingerprint();

    let latest = if opts.resume { rd.latest_checkpoint()? } else { None };
    let mut trainer = match &latest {
        Some((_, path)) => {
            let ckpt = Checkpoint::load(path)?;
            check_payload(&ckpt, &ws)?;
            let model = Model::from_parts(&spec.model, &ckpt.params)?;
            let mut t = Trainer::new(model, spec.train.clone())?;
            t.adam = ckpt.adam.ok_or_else(|| data_err("checkpoint lacks optimiser state"))?;
            t.step = ckpt.header.step;
            t
        }
        None => {
            let warm = match &spec.warm_start {
                Some(p) => Some(load_text_translator(p)?),
                None => None,
            };
            let model = init_params(&spec.model, spec.model_seed(), warm.as_ref())?;
            Trainer::new(model, spec.train.clone())?
        }
    };

    let mut log: Vec<LogRecord> = Vec::new();
    if latest.is_some() && log_path.exists() {
        log = read_jsonl(&log_path)?;
        log.retain(|r| r.step() <= trainer.step && !matches!(r, LogRecord::Abort { .. }));
        write_jsonl(&log_path, &log)?;
    } else {
        // a fresh run must not inherit a previous run's log or checkpoints
        let _ = fs::remove_file(&log_path);
        clear_checkpoints(&rd)?;
    }

    let train_samples = ws.corpus.split(Split::Train);
    let mut valid_samples = ws.corpus.split(Split::Valid);
    if let Some(n) = spec.eval.validation_samples {
        valid_samples.truncate(n);
    }
    let train_data = ws.examples(&trainer.model, &train_samples)?;
    let valid_data = ws.examples(&trainer.model, &valid_samples)?;
    let vocab = &ws.corpus.target_vocab;
    let cfg = spec.train.clone();

    let record_valid = |trainer: &Trainer, log: &mut Vec<LogRecord>| -> Result<()> {
        if valid_samples.is_empty() {
            return Ok(());
        }
        let v = validate(&trainer.model, &ws.teacher, &valid_samples, &valid_data, vocab, trainer.step)?;
        log::info!("step {} valid bleu {:.2} steds {:.3} cosine {:?}", v.step, v.bleu, v.steds, v.cosine);
        let rec = LogRecord::Valid(v);
        append_log(&log_path, &rec)?;
        log.push(rec);
        Ok(())
    };
    if trainer.step == 0 {
        record_valid(&trainer, &mut log)?;
    }
    let save = |trainer: &Trainer| -> Result<PathBuf> {
        let path = rd.checkpoint(trainer.step);
        Checkpoint::new(ws.payload(), trainer.step, trainer.model.params.clone(), Some(trainer.adam.clone()), Some(teacher_fp)).save(&path)?;
        Ok(path)
    };

    let mut last_ckpt = latest.map(|(_, p)| p);
    while trainer.step < cfg.max_steps {
        if opts.stop_after == Some(trainer.step) {
            if last_ckpt.as_ref().is_none_or(|p| *p != rd.checkpoint(trainer.step)) {
                last_ckpt = Some(save(&trainer)?);
            }
            break;
        }
        let rec = match trainer.next_step(&train_data) {
            Ok(r) => r,
            Err(e @ dimt_core::Error::NonFinite(_)) => {
                let abort = LogRecord::Abort { step: trainer.step + 1, reason: e.to_string() };
                append_log(&log_path, &abort)?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        let step = rec.step;
        if step % 50 == 0 {
            log::debug!("step {step} L {:.4} align {:.4} trans {:.4}", rec.total, rec.align, rec.trans);
        }
        let r = LogRecord::Step(rec);
        append_log(&log_path, &r)?;
        log.push(r);
        let done = step == cfg.max_steps;
        if done || (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            record_valid(&trainer, &mut log)?;
        }
        if done || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            last_ckpt = Some(save(&trainer)?);
        }
    }
    if ws.teacher.params().fingerprint() != teacher_fp {
        bail!("teacher parameters changed during training");
    }
    let final_checkpoint = match last_ckpt {
        Some(p) => p,
        None => save(&trainer)?,
    };
    plot::loss_curve(&log, &rd.file("loss_curve.svg"))?;
    Ok(TrainOutcome {
        checkpoint_hash: file_hash(&final_checkpoint)?,
        final_checkpoint,
        steps: trainer.step,
        completed: trainer.step == cfg.max_steps,
        log,
    })
}

fn clear_checkpoints(rd: &RunDir) -> Result<()> {
    let dir = rd.root.join("checkpoints");
    for entry in fs::read_dir(&dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "ckpt") {
            fs::remove_file(p)?;
        }
    }
    Ok(())
}

/// A student restored from a checkpoint, with the vocabularies it was
/// trained with. The teacher is rebuilt only for the teacher-output
/// variant.
pub struct LoadedStudent {
    pub model: Model,
    pub teacher: Option<Teacher>,
    pub header_teacher: dimt_core::teacher::TeacherConfig,
    pub train: dimt_core::training::TrainConfig,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
    pub checkpoint_hash: String,
    pub teacher_fingerprint: Option<String>,
}

pub fn load_student(path: &Path) -> Result<LoadedStudent> {
    let ckpt = Checkpoint::load(path)?;
    let Payload::Student { model, teacher, train, source_vocab, target_vocab } = ckpt.header.payload.clone() else {
        return Err(data_err(format!("{} is not a student checkpoint", path.display())));
    };
    let m = Model::from_parts(&model, &ckpt.params)?;
    let t = if model.architecture == Architecture::TeacherOutput { Some(build_teacher(&teacher, &ckpt.header.teacher_fingerprint)?) } else { None };
    Ok(LoadedStudent {
        model: m,
        teacher: t,
        header_teacher: teacher,
        train,
        source_vocab,
        target_vocab,
        checkpoint_hash: file_hash(path)?,
        teacher_fingerprint: ckpt.header.teacher_fingerprint,
    })
}

pub fn build_teacher(cfg: &dimt_core::teacher::TeacherConfig, expected: &Option<String>) -> Result<Teacher> {
    let t = Teacher::build(cfg)?;
    if let Some(fp) = expected {
        let got = format!("{:016x}", t.params().fingerprint());
        if &got != fp {
            return Err(data_err(format!("rebuilt teacher fingerprint {got} differs from checkpoint {fp}")));
        }
    }
    Ok(t)
}

fn load_text_translator(path: &Path) -> Result<TextTranslator> {
    let ckpt = Checkpoint::load(path)?;
    let Payload::TextTranslator { config, .. } = &ckpt.header.payload else {
        return Err(data_err(format!("{} is not a text-translator checkpoint", path.display())));
    };
    let mut t = TextTranslator::new(config, 0)?;
    t.params.load_values(&ckpt.params)?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub hypothesis: String,
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub truncated: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub split: Option<Split>,
    pub beam: Option<BeamConfig>,
    pub max_samples: Option<usize>,
    pub layout_k: Option<usize>,
    /// Score these predictions instead of translating.
    pub predictions: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub mean_seconds: Option<f64>,
}

/// Translates (or reads predictions for) a split and writes the report,
/// per-slice table, predictions and the context-length chart into `out`.
pub fn evaluate(spec: &ExperimentSpec, checkpoint: Option<&Path>, corpus_dir: &Path, out: &Path, opts: &EvalOptions) -> Result<EvalOutcome> {
    let corpus = read_corpus(corpus_dir)?;
    let split = opts.split.unwrap_or(spec.eval.split);
    let mut samples = corpus.split(split);
    if let Some(n) = opts.max_samples.or(spec.eval.max_samples) {
        samples.truncate(n);
    }
    ensure!(!samples.is_empty(), DataError(format!("split {split:?} is empty")));
    fs::create_dir_all(out)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("split".to_string(), format!("{split:?}").to_lowercase());
    provenance.insert("samples".to_string(), samples.len().to_string());
    let predictions: Vec<Prediction> = match (&opts.predictions, checkpoint) {
        (Some(p), _) if p.is_dir() => {
            let (preds, digest) = read_prediction_dir(p, &samples)?;
            provenance.insert("predictions".to_string(), digest);
            preds
        }
        (Some(p), _) => {
            let preds: Vec<Prediction> = read_jsonl(p)?;
            let have: BTreeMap<&str, ()> = preds.iter().map(|p| (p.id.as_str(), ())).collect();
            let missing: Vec<&str> = samples.iter().map(|s| s.id.as_str()).filter(|id| !have.contains_key(id)).collect();
            if !missing.is_empty() {
                return Err(data_err(format!("missing hypotheses for {} samples: {}", missing.len(), missing.join(", "))));
            }
            provenance.insert("predictions".to_string(), file_hash(p)?);
            let by_id: BTreeMap<String, Prediction> = preds.into_iter().map(|p| (p.id.clone(), p)).collect();
            samples.iter().map(|s| by_id[&s.id].clone()).collect()
        }
        (None, Some(ckpt)) => {
            let st = load_student(ckpt)?;
            if st.target_vocab != corpus.target_vocab {
                return Err(data_err("checkpoint vocabulary does not match the corpus"));
            }
            let beam = opts.beam.unwrap_or(spec.eval.beam);
            provenance.insert("checkpoint_sha256".to_string(), st.checkpoint_hash.clone());
            provenance.insert("beam_width".to_string(), beam.width.to_string());
            provenance.insert("architecture".to_string(), format!("{:?}", st.model.config().architecture));
            let mut out = Vec::with_capacity(samples.len());
            for s in &samples {
                let t0 = Instant::now();
                let r = decode_sample(&st.model, st.teacher.as_ref(), s, &beam, &st.target_vocab)?;
                out.push(Prediction {
                    id: s.id.clone(),
                    hypothesis: r.markdown,
                    tokens: r.tokens,
                    log_prob: r.log_prob,
                    truncated: r.truncated,
                    seconds: t0.elapsed().as_secs_f64(),
                });
            }
            out
        }
        (None, None) => bail!(crate::UsageError("evaluate needs --checkpoint or --predictions".into())),
    };
    let rows: Vec<EvalSample> = samples.iter().zip(&predictions).map(|(s, p)| eval_sample(s, p.hypothesis.clone())).collect();
    let layout_k = opts.layout_k.unwrap_or(spec.eval.layout_k);
    let mut report = slice_report(&rows, &default_slices(layout_k), &BleuConfig::default())?;
    report.provenance = provenance;
    write_json(&out.join("report.json"), &report)?;
    write_slices_csv(&out.join("slices.csv"), &report)?;
    let mean_seconds = (opts.predictions.is_none()).then(|| predictions.iter().map(|p| p.seconds).sum::<f64>() / predictions.len() as f64);
    // timings vary run to run, so they stay out of the report
    let stable: Vec<Prediction> = predictions.iter().map(|p| Prediction { seconds: 0.0, ..p.clone() }).collect();
    write_jsonl(&out.join("predictions.jsonl"), &stable)?;
    let hyp = out.join("hyp");
    fs::create_dir_all(&hyp)?;
    for p in &predictions {
        fs::write(hyp.join(format!("{}.hyp.md", p.id)), &p.hypothesis)?;
    }
    fs::write(out.join("report.md"), report_markdown(&report))?;
    write_json(
        &out.join("provenance.json"),
        &serde_json::json!({
            "unix_time": std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            "mean_seconds_per_page": mean_seconds,
            "seconds_per_page": predictions.iter().map(|p| (p.id.clone(), p.seconds)).collect::<BTreeMap<_, _>>(),
        }),
    )?;
    plot::context_bars(&report, &out.join("context_length.svg"))?;
    Ok(EvalOutcome { report, mean_seconds })
}

/// Reads `<id>.hyp.md` for every sample; also returns a digest over the
/// files read, in sample order.
fn read_prediction_dir(dir: &Path, samples: &[&DocumentSample]) -> Result<(Vec<Prediction>, String)> {
    let mut missing = Vec::new();
    let mut preds = Vec::with_capacity(samples.len());
    let mut digest = Sha256::new();
    for s in samples {
        let path = dir.join(format!("{}.hyp.md", s.id));
        match fs::read_to_string(&path) {
            Ok(text) => {
                digest.update(s.id.as_bytes());
                digest.update([0]);
                digest.update(text.as_bytes());
                digest.update([0]);
                preds.push(Prediction { id: s.id.clone(), hypothesis: text, tokens: Vec::new(), log_prob: 0.0, truncated: false, seconds: 0.0 });
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => missing.push(s.id.as_str()),
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }
    if !missing.is_empty() {
        return Err(data_err(format!("missing hypotheses for {} samples: {}", missing.len(), missing.join(", "))));
    }
    Ok((preds, hex::encode(digest.finalize())))
}

/// Corpus scores and every slice as a markdown table.
pub fn report_markdown(report: &EvalReport) -> String {
    let mut s = String::from("| slice | samples | BLEU | BLEU-PT | STEDS |\n|---|---|---|---|---|\n");
    let c = &report.corpus;
    s.push_str(&format!("| corpus | {} | {:.2} | {:.2} | {:.4} |\n", report.samples.len(), c.bleu, c.bleu_pt, c.steds));
    for sl in &report.slices {
        match &sl.scores {
            Some(x) => s.push_str(&format!("| {} | {} | {:.2} | {:.2} | {:.4} |\n", sl.name, sl.count, x.bleu, x.bleu_pt, x.steds)),
            None => s.push_str(&format!("| {} | 0 | - | - | - |\n", sl.name)),
        }
    }
    s
}

fn write_slices_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut s = String::from("slice,count,bleu,bleu_pt,steds\n");
    s.push_str(&format!("corpus,{},{:.4},{:.4},{:.4}\n", report.samples.len(), report.corpus.bleu, report.corpus.bleu_pt, report.corpus.steds));
    for sl in &report.slices {
        match &sl.scores {
            Some(sc) => s.push_str(&format!("\"{}\",{},{:.4},{:.4},{:.4}\n", sl.name, sl.count, sc.bleu, sc.bleu_pt, sc.steds)),
            None => s.push_str(&format!("\"{}\",0,,,\n", sl.name)),
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Trains then evaluates one spec in `out`.
pub fn run_experiment(spec: &ExperimentSpec, corpus_dir: &Path, out: &Path) -> Result<(TrainOutcome, EvalOutcome)> {
    let t = train(spec, corpus_dir, out, &TrainOptions::default())?;
    let e = evaluate(spec, Some(&t.final_checkpoint), corpus_dir, &out.join("eval"), &EvalOptions::default())?;
    Ok((t, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub slug: String,
    pub alpha: f64,
    pub status: String,
    pub bleu: Option<f64>,
    pub bleu_pt: Option<f64>,
    pub steds: Option<f64>,
    /// Parameters involved at inference (teacher included when the decoder
    /// reads its states).
    pub inference_params: Option<usize>,
    pub checkpoint_sha256: Option<String>,
}

pub fn ablation_variants(base: &ExperimentSpec) -> Vec<(&'static str, &'static str, ExperimentSpec)> {
    let mut v = Vec::new();
    v.push(("full model", "base", base.clone()));
    let mut s = base.clone();
    s.train.alpha = 0.0;
    v.push(("w/o alignment loss", "no-align-loss", s));
    let mut s = base.clone();
    s.train.no_alignment_encoder = true;
    v.push(("w/o alignment encoder", "no-alignment-encoder", s));
    let mut s = base.clone();
    s.train.use_teacher_output = true;
    v.push(("w/ teacher output", "teacher-output", s));
    let mut s = base.clone();
    s.train.mask = ModalityMask { use_image: false, use_text: true };
    v.push(("w/o teacher image input", "no-teacher-image", s));
    let mut s = base.clone();
    s.train.mask = ModalityMask { use_image: true, use_text: false };
    v.push(("w/o teacher text input", "no-teacher-text", s));
    v
}

fn variant_row(name: &str, slug: &str, spec: &ExperimentSpec, corpus_dir: &Path, dir: &Path) -> VariantRow {
    let mut row = VariantRow {
        variant: name.into(),
        slug: slug.into(),
        alpha: spec.train.alpha,
        status: "ok".into(),
        bleu: None,
        bleu_pt: None,
        steds: None,
        inference_params: None,
        checkpoint_sha256: None,
    };
    match run_experiment(spec, corpus_dir, dir) {
        Ok((t, e)) => {
            row.bleu = Some(e.report.corpus.bleu);
            row.bleu_pt = Some(e.report.corpus.bleu_pt);
            row.steds = Some(e.report.corpus.steds);
            row.checkpoint_sha256 = Some(t.checkpoint_hash);
            row.inference_params = load_student(&t.final_checkpoint)
                .map(|s| s.model.param_count() + s.teacher.as_ref().map_or(0, Teacher::param_count))
                .ok();
        }
        Err(e) => {
            log::error!("variant {slug} failed: {e:#}");
            row.status = format!("failed: {e:#}");
        }
    }
    row
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.digits$}"))
}

pub fn markdown_table(rows: &[VariantRow]) -> String {
    let mut s = String::from("| variant | alpha | BLEU | BLEU-PT | STEDS | inference params | status |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.variant,
            r.alpha,
            fmt_opt(r.bleu, 2),
            fmt_opt(r.bleu_pt, 2),
            fmt_opt(r.steds, 4),
            r.inference_params.map_or("-".into(), |p| p.to_string()),
            r.status
        ));
    }
    s
}

/// Base run plus the five ablation variants, each in its own directory.
pub fn ablate(spec: &ExperimentSpec, corpus_dir: &Path, out: &Path) -> Result<Vec<VariantRow>> {
    fs::create_dir_all(out)?;
    fs::write(out.join("spec.toml"), spec.to_toml()?)?;
    let rows: Vec<VariantRow> =
        ablation_variants(spec).into_iter().map(|(name, slug, s)| variant_row(name, slug, &s, corpus_dir, &out.join(slug))).collect();
    write_json(&out.join("ablation.json"), &rows)?;
    fs::write(out.join("ablation.md"), markdown_table(&rows))?;
    Ok(rows)
}

fn alpha_slug(a: f64) -> String {
    format!("alpha-{a}")
}

/// One run per α with shared seed and corpus.
pub fn sweep_alpha(spec: &ExperimentSpec, corpus_dir: &Path, out: &Path, alphas: &[f64]) -> Result<Vec<VariantRow>> {
    ensure!(alphas.len() >= 2, crate::UsageError("a sweep needs at least two α values".into()));
    for (i, a) in alphas.iter().enumerate() {
        ensure!(a.is_finite() && *a >= 0.0, crate::UsageError(format!("invalid α {a}")));
        ensure!(!alphas[..i].contains(a), crate::UsageError(format!("α {a} listed twice")));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("spec.toml"), spec.to_toml()?)?;
    let rows: Vec<VariantRow> = alphas
        .iter()
        .map(|&a| {
            let mut s = spec.clone();
            s.train.alpha = a;
            let slug = alpha_slug(a);
            variant_row(&format!("alpha={a}"), &slug, &s, corpus_dir, &out.join(&slug))
        })
        .collect();
    write_json(&out.join("sweep.json"), &rows)?;
    fs::write(out.join("sweep.md"), markdown_table(&rows))?;
    plot::alpha_sweep(&rows, &out.join("sweep.svg"))?;
    Ok(rows)
}

/// One run per alignment-loss variant with shared seed and corpus.
pub fn compare_losses(spec: &ExperimentSpec, corpus_dir: &Path, out: &Path, kinds: &[AlignLossKind]) -> Result<Vec<VariantRow>> {
    ensure!(!kinds.is_empty(), crate::UsageError("no loss variants given".into()));
    for (i, k) in kinds.iter().enumerate() {
        ensure!(!kinds[..i].contains(k), crate::UsageError(format!("loss {} listed twice", k.name())));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("spec.toml"), spec.to_toml()?)?;
    let rows: Vec<VariantRow> = kinds
        .iter()
        .map(|&k| {
            let mut s = spec.clone();
            s.train.align_loss = k;
            variant_row(k.name(), k.name(), &s, corpus_dir, &out.join(k.name()))
        })
        .collect();
    write_json(&out.join("losses.json"), &rows)?;
    fs::write(out.join("losses.md"), markdown_table(&rows))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub ids: Vec<String>,
    pub mean_cosine: f64,
    pub shape: [usize; 3],
}

/// Writes `h_align.npy` and `h_mllm.npy` (`n × l_MLLM × d_MLLM`, sample
/// major) and `ids.json`.
pub fn export_reps(checkpoint: &Path, corpus_dir: &Path, split: Split, n: usize, out: &Path) -> Result<ExportSummary> {
    let st = load_student(checkpoint)?;
    if st.model.config().architecture == Architecture::TeacherOutput {
        return Err(data_err("the teacher-output variant has no alignment branch to export"));
    }
    let teacher = build_teacher(&st.header_teacher, &st.teacher_fingerprint)?;
    let (l, d) = teacher.output_shape();
    let cfg = st.model.config();
    if (cfg.teacher_len, cfg.teacher_width) != (l, d) {
        return Err(data_err("teacher shape does not match the checkpoint"));
    }
    let corpus = read_corpus(corpus_dir)?;
    let samples = corpus.split(split);
    ensure!(n <= samples.len(), DataError(format!("asked for {n} samples, split has {}", samples.len())));
    let mut align = ndarray::Array3::<f64>::zeros((n, l, d));
    let mut mllm = ndarray::Array3::<f64>::zeros((n, l, d));
    let mut ids = Vec::with_capacity(n);
    let mut cos = 0.0;
    for (i, s) in samples.iter().take(n).enumerate() {
        let h = st.model.encode_align(&s.image)?;
        let t = teacher.encode_mix(&s.image, &s.source, st.train.mask)?.hidden;
        cos += mean_row_cosine(&t, &h)?;
        for r in 0..l {
            for c in 0..d {
                align[[i, r, c]] = h.get(r, c);
                mllm[[i, r, c]] = t.get(r, c);
            }
        }
        ids.push(s.id.clone());
    }
    fs::create_dir_all(out)?;
    ndarray_npy::write_npy(out.join("h_align.npy"), &align)?;
    ndarray_npy::write_npy(out.join("h_mllm.npy"), &mllm)?;
    let summary = ExportSummary { ids, mean_cosine: if n > 0 { cos / n as f64 } else { 0.0 }, shape: [n, l, d] };
    write_json(&out.join("ids.json"), &summary)?;
    Ok(summary)
}

/// Trains the text-to-text translator whose decoder can warm-start the
/// student, and writes `text_translator.ckpt` into `out`.
pub fn pretrain(spec: &ExperimentSpec, corpus_dir: &Path, out: &Path) -> Result<PathBuf> {
    let ws = Workspace::open(spec, corpus_dir)?;
    let spec = &ws.spec;
    let train = ws.corpus.split(Split::Train);
    let pairs: Vec<TextPair> = train
        .iter()
        .map(|s| TextPair { source: s.source.tokens.clone(), target: ws.corpus.target_vocab.encode_target(&s.reference_markdown) })
        .collect();
    let max_source = pairs.iter().map(|p| p.source.len()).max().unwrap_or(1).max(1);
    let cfg = TextTranslatorConfig {
        source_vocab: ws.corpus.source_vocab.len(),
        target_vocab: ws.corpus.target_vocab.len(),
        max_source,
        encoder: spec.pretrain.encoder,
        decoder: spec.model.decoder,
    };
    let mut model = TextTranslator::new(&cfg, spec.model_seed() ^ 0x7e47)?;
    let tc = dimt_core::training::TrainConfig {
        lr: spec.pretrain.lr,
        max_steps: spec.pretrain.steps,
        warmup_steps: (spec.pretrain.steps / 10).max(1).min(spec.pretrain.steps),
        batch_size: spec.pretrain.batch_size,
        ..spec.train.clone()
    };
    fs::create_dir_all(out)?;
    let log_path = out.join("pretrain_log.jsonl");
    let _ = fs::remove_file(&log_path);
    let mut err = None;
    pretrain_text(&mut model, &pairs, &tc, |r| {
        if err.is_none() {
            if let Err(e) = append_log(&log_path, &LogRecord::Step(r.clone())) {
                err = Some(e);
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let path = out.join("text_translator.ckpt");
    let payload = Payload::TextTranslator { config: cfg, source_vocab: ws.corpus.source_vocab.clone(), target_vocab: ws.corpus.target_vocab.clone() };
    Checkpoint::new(payload, spec.pretrain.steps, model.params, None, None).save(&path)?;
    Ok(path)
}

/// Translates page images with a student checkpoint.
pub fn translate_images(
    checkpoint: &Path,
    images: &[PathBuf],
    sources: Option<&[PathBuf]>,
    beam: &BeamConfig,
) -> Result<Vec<(TranslationResult, f64)>> {
    let st = load_student(checkpoint)?;
    if st.teacher.is_some() && sources.is_none() {
        bail!(crate::UsageError("this checkpoint decodes from teacher states and needs --source for every image".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for (i, path) in images.iter().enumerate() {
        let image: RasterImage = crate::io::read_ppm(path)?;
        let t0 = Instant::now();
        let r = match &st.teacher {
            Some(t) => {
                let src_path = &sources.expect("checked")[i];
                let md = fs::read_to_string(src_path).with_context(|| format!("reading {}", src_path.display()))?;
                let source = dimt_core::synthdoc::SourceText::new(st.source_vocab.encode(&md));
                translate_with_teacher(&st.model, t, &image, Some(&source), beam, &st.target_vocab)?
            }
            None => translate(&st.model, &image, beam, &st.target_vocab)?,
        };
        out.push((r, t0.elapsed().as_secs_f64()));
    }
    Ok(out)
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    read_json(&dir.join("report.json"))
}
