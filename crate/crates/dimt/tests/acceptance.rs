//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The suite always exits 0 so that failing criteria are reported rather
//! than hidden behind a red build; set `DIMT_ACCEPTANCE_STRICT=1` to exit 1
//! on any FAIL. `DIMT_ACCEPTANCE_ONLY=3,8` runs a subset and
//! `DIMT_ACCEPTANCE_DIR` keeps the run artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use dimt::checkpoint::file_hash;
use dimt::io::{read_corpus, read_jsonl};
use dimt::runner::{self, validations, LogRecord, TrainOptions};
use dimt::spec::ExperimentSpec;
use dimt_core::autograd::Tape;
use dimt_core::image::RasterImage;
use dimt_core::inference::{beam_search, translate, translate_greedy, BeamConfig};
use dimt_core::loss::{alignment_loss, AlignLossKind, TransReduction};
use dimt_core::metrics::bleu::{corpus_bleu, BleuConfig};
use dimt_core::metrics::plain::strip_plain_text;
use dimt_core::metrics::report::{bleu_pt, context_slices, slice_report, EvalSample, Slice, SliceSpec, CONTEXT_BUCKETS};
use dimt_core::metrics::structure::{parse_structure_tree, LabeledTree};
use dimt_core::metrics::ted::{steds, tree_edit_distance, PostOrder, TedWorkspace};
use dimt_core::model::{Architecture, EncoderConfig, Model, ModelConfig};
use dimt_core::nn::DecoderConfig;
use dimt_core::params::Group;
use dimt_core::synthdoc::generate::{generate_markdown, LayoutMix};
use dimt_core::synthdoc::lexicon::Lexicon;
use dimt_core::synthdoc::{SourceText, Split};
use dimt_core::teacher::{teacher_activity, ModalityMask, Teacher, TeacherConfig};
use dimt_core::tensor::{log_softmax, softmax_in_place, Matrix};
use dimt_core::training::{batch_gradients, TrainConfig, TrainExample};
use dimt_core::vocab::{BOS, EOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
/// Criterion 1: required median BLEU margin of α=1 over α=0.
const MIN_BLEU_MARGIN: f64 = 1.0;
/// Criterion 2.
const MIN_FINAL_COSINE: f64 = 0.8;
const MIN_SNAPSHOTS: usize = 4;
const MAX_INVERSIONS: usize = 1;
/// Criterion 3: central-difference step and relative tolerance; gradients
/// below `GRAD_FLOOR` in magnitude are compared absolutely against it.
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const GRAD_FLOOR: f64 = 1e-6;
/// Criterion 4.
const LOSS_IDENTITY_TOL: f64 = 1e-6;
/// Criterion 5.
const DIST_SUM_TOL: f64 = 1e-6;
/// Criterion 8.
const TED_EXHAUSTIVE_NODES: usize = 5;
const TED_RANDOM_PAIRS: usize = 3000;
const TED_RANDOM_NODES: usize = 12;
const BLEU_FIXTURE_TOL: f64 = 1e-4;

struct Ctx {
    root: PathBuf,
    /// α=1 checkpoints from criterion 1, reused by criterion 7.
    desk_checkpoints: Vec<PathBuf>,
    desk_corpus: Option<PathBuf>,
    /// Every training log written by the suite, with its effective α.
    logs: Vec<(PathBuf, f64)>,
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).is_test(true).try_init();
    let only: Option<Vec<u32>> =
        std::env::var("DIMT_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let keep = std::env::var("DIMT_ACCEPTANCE_DIR").ok().map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&root).expect("artifact dir");
    let mut ctx = Ctx { root, desk_checkpoints: Vec::new(), desk_corpus: None, logs: Vec::new() };

    type Check = fn(&mut Ctx) -> Result<Verdict>;
    // run order: cheap checks first, then the training-backed ones; 4 and 7
    // also inspect artifacts from the long runs, so they go last
    let plan: [(u32, &str, Check); 11] = [
        (3, "gradient correctness", c3_gradients),
        (5, "decoder validity", c5_decoder),
        (6, "teacher-free inference", c6_teacher_free),
        (8, "metrics correctness", c8_metrics),
        (9, "slicing", c9_slicing),
        (11, "reproducibility", c11_reproducibility),
        (10, "ablation harness", c10_ablation),
        (1, "distillation benefit", c1_distillation),
        (2, "alignment learning", c2_alignment),
        (4, "loss identities", c4_loss_identities),
        (7, "beam search", c7_beam),
    ];
    let mut results: BTreeMap<u32, (String, Verdict, f64)> = BTreeMap::new();
    for (id, name, check) in plan {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let v = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut ctx))) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => Verdict { pass: false, detail: format!("error: {e:#}") },
            Err(_) => Verdict { pass: false, detail: "panicked".into() },
        };
        let secs = t0.elapsed().as_secs_f64();
        eprintln!("[criterion {id} finished in {secs:.1}s]");
        results.insert(id, (name.to_string(), v, secs));
    }
    let mut failed = 0;
    println!();
    for (id, (name, v, secs)) in &results {
        println!("{} criterion {id:>2} ({name}): {} [{secs:.0}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var("DIMT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- specs

/// The desk preset, as used for criteria 1 and 2.
fn desk_spec(seed: u64) -> ExperimentSpec {
    let mut s = ExperimentSpec::desk();
    s.seed = seed;
    s
}

/// A small configuration for the pipeline-level criteria (10, 11).
fn mini_spec() -> ExperimentSpec {
    let mut s = ExperimentSpec::desk();
    s.name = "mini".into();
    s.corpus.samples = 160;
    s.corpus.split = [0.75, 0.125, 0.125];
    s.train.max_steps = 40;
    s.train.warmup_steps = 5;
    s.train.eval_every = 10;
    s.train.checkpoint_every = 20;
    s.eval.validation_samples = Some(8);
    s.eval.max_samples = Some(12);
    s.eval.layout_k = 4;
    s
}

fn micro_teacher() -> TeacherConfig {
    TeacherConfig {
        seed: 5,
        seq_len: 18,
        width: 8,
        depth: 1,
        heads: 2,
        ffn_mult: 1,
        patch_h: 4,
        patch_w: 4,
        image_h: 8,
        image_w: 8,
        source_vocab: 16,
        text_positions_only: false,
    }
}

fn micro_model(arch: Architecture) -> ModelConfig {
    let enc = EncoderConfig { patch_h: 4, patch_w: 4, width: 8, layers: 1, heads: 2, ffn_mult: 1 };
    ModelConfig {
        image_h: 8,
        image_w: 8,
        align_encoder: enc,
        image_encoder: EncoderConfig { width: 6, ..enc },
        teacher_len: 18,
        teacher_width: 8,
        ffn_dim_hidden: 8,
        ffn_length_hidden: 6,
        bridge_hidden: 8,
        decoder: DecoderConfig { width: 8, layers: 1, heads: 2, ffn_mult: 1, max_positions: 10 },
        target_vocab: 16,
        architecture: arch,
    }
}

fn noise_page(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RasterImage {
    let gray: Vec<f64> = (0..h * w).map(|_| f64::from(rng.random_range(0u8..=255)) / 255.0).collect();
    RasterImage::from_gray(h, w, &gray).expect("page")
}

// ---------------------------------------------------------------- 1 & 2

fn c1_distillation(ctx: &mut Ctx) -> Result<Verdict> {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in SEEDS {
        let dir = ctx.root.join(format!("c1/seed-{seed}"));
        let spec = desk_spec(seed);
        let corpus = dir.join("corpus");
        runner::gen_corpus(&spec, &corpus)?;
        let c = read_corpus(&corpus)?;
        ensure!(c.manifest.train.len() >= 2000 && c.manifest.valid.len() >= 200, "desk corpus is smaller than required");
        for alpha in [1.0, 0.0] {
            let mut s = spec.clone();
            s.train.alpha = alpha;
            let out = dir.join(format!("alpha-{alpha}"));
            let (t, e) = runner::run_experiment(&s, &corpus, &out)?;
            ctx.logs.push((out.join("train_log.jsonl"), s.train.effective_alpha()));
            eprintln!("  seed {seed} α={alpha}: test BLEU {:.2}", e.report.corpus.bleu);
            if alpha == 1.0 {
                with.push(e.report.corpus.bleu);
                ctx.desk_checkpoints.push(t.final_checkpoint);
            } else {
                without.push(e.report.corpus.bleu);
            }
        }
        ctx.desk_corpus.get_or_insert(corpus);
    }
    let (m1, m0) = (median(&with), median(&without));
    verdict(
        m1 - m0 >= MIN_BLEU_MARGIN,
        format!("median test BLEU α=1 {m1:.2} vs α=0 {m0:.2} (margin {:.2}, need ≥ {MIN_BLEU_MARGIN}); per seed α=1 {with:.2?}, α=0 {without:.2?}", m1 - m0),
    )
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn c2_alignment(ctx: &mut Ctx) -> Result<Verdict> {
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let log_path = ctx.root.join(format!("c1/seed-{seed}/alpha-1/train_log.jsonl"));
        ensure!(log_path.exists(), "criterion 1 runs are missing (run it first)");
        let log: Vec<LogRecord> = read_jsonl(&log_path)?;
        let snaps: Vec<f64> = validations(&log).iter().filter(|v| v.step > 0).filter_map(|v| v.cosine).collect();
        let inversions = snaps.windows(2).filter(|w| w[1] < w[0]).count();
        let last = snaps.last().copied().unwrap_or(f64::NAN);
        let ok = snaps.len() >= MIN_SNAPSHOTS && inversions <= MAX_INVERSIONS && last >= MIN_FINAL_COSINE;
        pass &= ok;
        lines.push(format!("seed {seed}: {} snapshots {snaps:.3?}, {inversions} inversions", snaps.len()));
    }
    verdict(pass, format!("final ≥ {MIN_FINAL_COSINE}, ≤ {MAX_INVERSIONS} inversion, ≥ {MIN_SNAPSHOTS} snapshots; {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 3

fn c3_gradients(_: &mut Ctx) -> Result<Verdict> {
    let teacher = Teacher::build(&micro_teacher())?;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let image = noise_page(&mut rng, 8, 8);
    let source = SourceText::new(vec![3, 9, 0, 15, 7]);
    let h_mix = teacher.encode_mix(&image, &source, ModalityMask::FULL)?.hidden;
    let target = vec![BOS, 7, 12, 5, 9, EOS];
    let cfg = TrainConfig { alpha: 1.0, align_loss: AlignLossKind::Cosine, ..TrainConfig::default() };
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut pass = true;
    let mut checked = 0usize;
    for arch in [Architecture::Full, Architecture::NoAlignmentEncoder, Architecture::TeacherOutput] {
        let mut model = Model::new(&micro_model(arch), 17)?;
        let ex = TrainExample { id: "g".into(), inputs: model.inputs(&image)?, teacher: h_mix.clone(), target: target.clone() };
        let alpha = if arch == Architecture::TeacherOutput { 0.0 } else { 1.0 };
        let total = |m: &Model| -> Result<f64> {
            let (a, t, _) = batch_gradients(m, &[&ex], &cfg)?;
            Ok(alpha * a + t)
        };
        let (_, _, grads) = batch_gradients(&model, &[&ex], &cfg)?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let group = model.params.group(id);
            for k in 0..model.params.get(id).len() {
                let orig = model.params.get(id).as_slice()[k];
                model.params.get_mut(id).as_mut_slice()[k] = orig + FD_STEP;
                let up = total(&model)?;
                model.params.get_mut(id).as_mut_slice()[k] = orig - FD_STEP;
                let down = total(&model)?;
                model.params.get_mut(id).as_mut_slice()[k] = orig;
                let fd = (up - down) / (2.0 * FD_STEP);
                let an = grads[id.index()].as_slice()[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(GRAD_FLOOR);
                let key = format!("{arch:?}/{}", group.name());
                let e = worst.entry(key).or_insert(0.0);
                *e = e.max(rel);
                pass &= rel <= FD_REL_TOL;
                checked += 1;
            }
        }
    }
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    verdict(pass, format!("{checked} coordinates, worst relative error per group: {}", detail.join(", ")))
}

// ---------------------------------------------------------------- 4

fn c4_loss_identities(ctx: &mut Ctx) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for (rows, cols) in [(1, 2), (5, 4), (12, 8), (96, 64)] {
        let x = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect());
        let mut neg = x.clone();
        neg.scale_assign(-1.0);
        // rows of `y` are orthogonal to the matching rows of `x`
        let mut y = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let xr = x.row(r);
            let mut v: Vec<f64> = (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let proj = v.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / xr.iter().map(|a| a * a).sum::<f64>();
            v.iter_mut().zip(xr).for_each(|(a, b)| *a -= proj * b);
            y.row_mut(r).copy_from_slice(&v);
        }
        let k = AlignLossKind::Cosine;
        worst = worst.max(alignment_loss(&x, &x, k)?.abs());
        worst = worst.max((alignment_loss(&x, &neg, k)? - 2.0).abs());
        worst = worst.max((alignment_loss(&x, &y, k)? - 1.0).abs());
    }
    let identities = worst <= LOSS_IDENTITY_TOL;

    let mut records = 0usize;
    let mut mismatches = 0usize;
    for (path, alpha) in &ctx.logs {
        let log: Vec<LogRecord> = read_jsonl(path)?;
        for r in runner::steps(&log) {
            records += 1;
            if (alpha * r.align + r.trans).to_bits() != r.total.to_bits() {
                mismatches += 1;
            }
        }
    }
    if ctx.logs.is_empty() {
        // standalone run: produce a log to inspect
        let dir = ctx.root.join("c4");
        let spec = mini_spec();
        runner::gen_corpus(&spec, &dir.join("corpus"))?;
        for alpha in [0.5, 0.0] {
            let mut s = spec.clone();
            s.train.alpha = alpha;
            s.train.max_steps = 10;
            let out = dir.join(format!("alpha-{alpha}"));
            runner::train(&s, &dir.join("corpus"), &out, &TrainOptions::default())?;
            let log: Vec<LogRecord> = read_jsonl(&out.join("train_log.jsonl"))?;
            for r in runner::steps(&log) {
                records += 1;
                mismatches += usize::from((alpha * r.align + r.trans).to_bits() != r.total.to_bits());
            }
        }
    }
    verdict(
        identities && mismatches == 0 && records > 0,
        format!("max identity error {worst:.1e} (tol {LOSS_IDENTITY_TOL:.0e}); {records} logged steps, {mismatches} with total ≠ α·align + trans bitwise"),
    )
}

// ---------------------------------------------------------------- 5

fn c5_decoder(_: &mut Ctx) -> Result<Verdict> {
    let spec = {
        let mut s = ExperimentSpec::desk();
        s.resolve()?;
        s
    };
    let cfg = &spec.model;
    let (h, w) = (cfg.image_h, cfg.image_w);
    let vocab = cfg.target_vocab as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut calls = 0;
    let models: Vec<Model> = (0..4).map(|s| Model::new(cfg, 100 + s)).collect::<Result<_, _>>()?;
    while calls < 1000 {
        let m = &models[calls % models.len()];
        let image = noise_page(&mut rng, h, w);
        let h_align = m.encode_align(&image)?;
        let h_image = m.encode_image(&image)?;
        for _ in 0..10 {
            let len = rng.random_range(1..=cfg.decoder.max_positions);
            let mut prefix = vec![BOS];
            prefix.extend((1..len).map(|_| rng.random_range(0..vocab)));
            let d = m.decode_step(&prefix, &h_align, &h_image)?;
            ensure!(d.len() == cfg.target_vocab && d.iter().all(|p| p.is_finite() && *p >= 0.0), "invalid distribution");
            worst = worst.max((d.iter().sum::<f64>() - 1.0).abs());
            calls += 1;
        }
    }
    // incremental (cached) decoding against teacher-forced logits
    let mut exact = true;
    let mut positions = 0;
    for case in 0..20 {
        let m = &models[case % models.len()];
        let image = noise_page(&mut rng, h, w);
        let len = rng.random_range(2..=cfg.decoder.max_positions);
        let mut target = vec![BOS];
        target.extend((1..len).map(|_| rng.random_range(5..vocab)));
        target.push(EOS);
        let inputs = m.inputs(&image)?;
        let mut tape = Tape::new(&m.params);
        let out = m.tape_forward(&mut tape, &inputs, None, &target, AlignLossKind::Cosine, TransReduction::TokenMean)?;
        let forced = tape.value(out.logits).clone();
        let memories = m.memories(&inputs, None)?;
        let mut cache = m.start_decoding(&memories);
        let h_align = m.encode_align(&image)?;
        let h_image = m.encode_image(&image)?;
        for n in 0..target.len() - 1 {
            let logits = m.decode_next(&mut cache, target[n])?;
            exact &= logits.as_slice() == forced.row(n);
            let mut p = forced.row(n).to_vec();
            softmax_in_place(&mut p);
            exact &= m.decode_step(&target[..=n], &h_align, &h_image)? == p;
            positions += 1;
        }
    }
    verdict(
        worst <= DIST_SUM_TOL && exact,
        format!("{calls} decode_step calls, max |Σp − 1| = {worst:.1e}; incremental = teacher-forced bitwise at {positions} positions: {exact}"),
    )
}

// ---------------------------------------------------------------- 6

fn c6_teacher_free(ctx: &mut Ctx) -> Result<Verdict> {
    let mut spec = ExperimentSpec::default();
    spec.resolve()?;
    let student = Model::new(&spec.model, spec.model_seed())?;
    let teacher = Teacher::build(&spec.teacher)?;
    let (ns, nt) = (student.param_count(), teacher.param_count());
    let no_teacher_params = student.params.count_group(Group::Teacher) == 0;
    drop(teacher);

    // a trained student round-tripped through a checkpoint, translated with
    // the teacher counters watched
    let dir = ctx.root.join("c6");
    let mut mini = mini_spec();
    mini.train.max_steps = 4;
    mini.train.warmup_steps = 1;
    runner::gen_corpus(&mini, &dir.join("corpus"))?;
    let t = runner::train(&mini, &dir.join("corpus"), &dir.join("run"), &TrainOptions::default())?;
    let corpus = read_corpus(&dir.join("corpus"))?;
    let before = teacher_activity();
    let loaded = runner::load_student(&t.final_checkpoint)?;
    let beam = BeamConfig { max_len: 32, ..BeamConfig::default() };
    for s in corpus.split(Split::Test).iter().take(5) {
        translate(&loaded.model, &s.image, &beam, &loaded.target_vocab)?;
    }
    let after = teacher_activity();
    let untouched = before == after && loaded.teacher.is_none();
    verdict(
        untouched && no_teacher_params && ns < nt,
        format!(
            "teacher builds/forwards during load+translate: {}/{}; student holds teacher params: {}; default student {ns} < teacher {nt} params",
            after.builds - before.builds,
            after.forwards - before.forwards,
            !no_teacher_params
        ),
    )
}

// ---------------------------------------------------------------- 7

/// Fixed pseudo-random next-token table over {0, 1, EOS = 2}.
fn toy_logp(prefix: &[u32], salt: u64) -> Vec<f64> {
    let seed = prefix.iter().fold(salt, |h, &t| h.wrapping_mul(6364136223846793005).wrapping_add(u64::from(t) + 1442695040888963407));
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
    log_softmax(&raw)
}

fn c7_beam(ctx: &mut Ctx) -> Result<Verdict> {
    assert_eq!(EOS, 2, "toy vocabulary assumes EOS = 2");
    // exhaustive enumeration of every sequence of ≤ 4 tokens
    let mut toy_ok = true;
    let mut toy_cases = 0;
    for salt in 0..50u64 {
        for penalty in [0.0, 0.5, 1.0, 2.0] {
            let cfg = BeamConfig { width: 81, max_len: 4, length_penalty: penalty };
            let step = |s: &mut Option<Vec<u32>>, tok: u32| -> Result<Vec<f64>, dimt_core::Error> {
                match s {
                    None => *s = Some(Vec::new()),
                    Some(p) => p.push(tok),
                }
                Ok(toy_logp(s.as_ref().expect("fed"), salt))
            };
            let beam = beam_search(None, step, &cfg)?;
            let mut best: Option<(f64, Vec<u32>, f64)> = None;
            let mut stack = vec![(Vec::<u32>::new(), 0.0)];
            while let Some((seq, lp)) = stack.pop() {
                let dist = toy_logp(&seq, salt);
                for tok in 0..3u32 {
                    let mut s = seq.clone();
                    s.push(tok);
                    let l = lp + dist[tok as usize];
                    if tok == EOS {
                        let score = l / (s.len() as f64).powf(penalty);
                        let better = match &best {
                            None => true,
                            Some((bs, bt, _)) => score > *bs || (score == *bs && s < *bt),
                        };
                        if better {
                            best = Some((score, s, l));
                        }
                    } else if s.len() < 4 {
                        stack.push((s, l));
                    }
                }
            }
            let (score, tokens, _) = best.expect("some sequence ends in EOS");
            toy_ok &= beam.tokens == tokens && (beam.score - score).abs() <= 1e-12 && !beam.truncated;
            toy_cases += 1;
        }
    }

    // width 1 against greedy on 100 page images
    let (model, vocab, images, source) = match (ctx.desk_checkpoints.first(), &ctx.desk_corpus) {
        (Some(ckpt), Some(corpus)) => {
            let st = runner::load_student(ckpt)?;
            let c = read_corpus(corpus)?;
            let imgs: Vec<RasterImage> = c.split(Split::Test).iter().chain(c.split(Split::Valid).iter()).take(100).map(|s| s.image.clone()).collect();
            (st.model, st.target_vocab, imgs, "trained desk checkpoint")
        }
        _ => {
            let mut spec = ExperimentSpec::desk();
            spec.resolve()?;
            let lex = Lexicon::generate(spec.corpus.vocab_size, spec.corpus.seed)?;
            let vocab = dimt_core::synthdoc::generate::target_vocab(&lex);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let imgs = (0..100).map(|_| noise_page(&mut rng, spec.model.image_h, spec.model.image_w)).collect();
            (Model::new(&spec.model, 3)?, vocab, imgs, "untrained desk model")
        }
    };
    let max_len = model.config().decoder.max_positions;
    let mut same = 0;
    for img in &images {
        let b = translate(&model, img, &BeamConfig::greedy(max_len), &vocab)?;
        let g = translate_greedy(&model, img, max_len, &vocab)?;
        same += usize::from(b.tokens == g.tokens && b.truncated == g.truncated);
    }
    verdict(
        toy_ok && same == images.len() && images.len() == 100,
        format!("exhaustive toy (vocab 3, max len 4): {toy_cases} cases match: {toy_ok}; width-1 = greedy on {same}/{} images ({source})", images.len()),
    )
}

// ---------------------------------------------------------------- 8

/// Every ordered tree with up to `max` nodes, as preorder parent arrays.
fn shapes(max: usize) -> Vec<Vec<Option<usize>>> {
    fn forests(n: usize, memo: &mut BTreeMap<usize, Vec<Vec<usize>>>) -> Vec<Vec<usize>> {
        // a forest is a list of subtree sizes flattened later; here each
        // forest is encoded as preorder "number of children" sequences
        if let Some(v) = memo.get(&n) {
            return v.clone();
        }
        let mut out = Vec::new();
        if n == 0 {
            out.push(Vec::new());
        } else {
            for first in 1..=n {
                for head in trees(first, memo) {
                    for tail in forests(n - first, memo) {
                        let mut f = head.clone();
                        f.extend(&tail);
                        out.push(f);
                    }
                }
            }
        }
        memo.insert(n, out.clone());
        out
    }
    fn trees(n: usize, memo: &mut BTreeMap<usize, Vec<Vec<usize>>>) -> Vec<Vec<usize>> {
        // preorder child counts: root's count then its forest
        let mut out = Vec::new();
        for f in forests(n - 1, memo) {
            let roots = count_roots(&f);
            let mut t = vec![roots];
            t.extend(f);
            out.push(t);
        }
        out
    }
    fn count_roots(f: &[usize]) -> usize {
        let (mut i, mut roots) = (0, 0);
        while i < f.len() {
            i += subtree_len(f, i);
            roots += 1;
        }
        roots
    }
    fn subtree_len(f: &[usize], i: usize) -> usize {
        let mut need = 1;
        let mut j = i;
        while need > 0 {
            need += f[j];
            need -= 1;
            j += 1;
        }
        j - i
    }
    let mut memo = BTreeMap::new();
    let mut out = Vec::new();
    for n in 1..=max {
        for counts in trees(n, &mut memo) {
            // child counts in preorder → parent array
            let mut parent = vec![None; n];
            let mut open: Vec<(usize, usize)> = Vec::new();
            for (i, &c) in counts.iter().enumerate() {
                if let Some(top) = open.last_mut() {
                    parent[i] = Some(top.0);
                    top.1 -= 1;
                }
                while open.last().is_some_and(|t| t.1 == 0) {
                    open.pop();
                }
                if c > 0 {
                    open.push((i, c));
                }
            }
            out.push(parent);
        }
    }
    out
}

/// Postorder of a preorder parent array, with leftmost leaves, computed
/// independently of the library's traversal.
fn postorder_of(parent: &[Option<usize>]) -> (Vec<usize>, Vec<usize>) {
    let n = parent.len();
    let mut children = vec![Vec::new(); n];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }
    fn walk(v: usize, ch: &[Vec<usize>], order: &mut Vec<usize>, lm: &mut Vec<usize>) -> usize {
        let mut first = None;
        for &c in &ch[v] {
            let l = walk(c, ch, order, lm);
            first.get_or_insert(l);
        }
        let me = order.len();
        let l = first.unwrap_or(me);
        order.push(v);
        lm.push(l);
        l
    }
    let (mut order, mut lm) = (Vec::new(), Vec::new());
    walk(0, &children, &mut order, &mut lm);
    (order, lm)
}

struct OracleTree {
    labels: Vec<u8>,
    lm: Vec<usize>,
}

/// Forest edit distance by exhaustive recursion over every pair of
/// postorder-interval subforests (no keyroot decomposition).
fn oracle_ted(a: &OracleTree, b: &OracleTree, d: &mut Vec<u8>) -> u8 {
    let s = a.labels.len().max(b.labels.len()) + 1;
    if d.len() < s.pow(4) {
        d.resize(s.pow(4), 0);
    }
    let idx = |i: usize, e: usize, k: usize, f: usize| ((i * s + e) * s + k) * s + f;
    let (na, nb) = (a.labels.len(), b.labels.len());
    for e in 0..=na {
        for i in (0..=e).rev() {
            if e > i && a.lm[e - 1] < i {
                continue;
            }
            for f in 0..=nb {
                for k in (0..=f).rev() {
                    if f > k && b.lm[f - 1] < k {
                        continue;
                    }
                    let v = if e == i {
                        (f - k) as u8
                    } else if f == k {
                        (e - i) as u8
                    } else {
                        let (v, w) = (e - 1, f - 1);
                        let del = d[idx(i, e - 1, k, f)] + 1;
                        let ins = d[idx(i, e, k, f - 1)] + 1;
                        let (lv, lw) = (a.lm[v], b.lm[w]);
                        let matched = d[idx(i, lv, k, lw)] + d[idx(lv, v, lw, w)] + u8::from(a.labels[v] != b.labels[w]);
                        del.min(ins).min(matched)
                    };
                    d[idx(i, e, k, f)] = v;
                }
            }
        }
    }
    d[idx(0, na, 0, nb)]
}

const PERMS: [[u8; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn ted_exhaustive(max_nodes: usize) -> Result<(usize, usize, usize)> {
    let shapes = shapes(max_nodes);
    // all labelings; labels indexed by preorder node
    let mut trees: Vec<LabeledTree<u8>> = Vec::new();
    let mut oracle: Vec<OracleTree> = Vec::new();
    let mut key: BTreeMap<(usize, Vec<u8>), usize> = BTreeMap::new();
    let mut meta: Vec<(usize, Vec<u8>)> = Vec::new();
    for (si, parent) in shapes.iter().enumerate() {
        let n = parent.len();
        let (order, lm) = postorder_of(parent);
        for code in 0..3usize.pow(n as u32) {
            let labels: Vec<u8> = (0..n).map(|i| ((code / 3usize.pow(i as u32)) % 3) as u8).collect();
            let mut t = LabeledTree::leaf(labels[0]);
            for i in 1..n {
                // preorder ids coincide with insertion order
                t.add_child(parent[i].expect("non-root"), labels[i]);
            }
            key.insert((si, labels.clone()), trees.len());
            meta.push((si, labels.clone()));
            oracle.push(OracleTree { labels: order.iter().map(|&v| labels[v]).collect(), lm: lm.clone() });
            trees.push(t);
        }
    }
    let n = trees.len();
    let perm_index: Vec<Vec<usize>> = PERMS
        .iter()
        .map(|p| meta.iter().map(|(si, l)| key[&(*si, l.iter().map(|&x| p[x as usize]).collect::<Vec<u8>>())]).collect())
        .collect();
    let post: Vec<PostOrder<u8>> = trees.iter().map(PostOrder::new).collect();
    let mut ws = TedWorkspace::new();
    let mut memo = Vec::new();
    let mut row = vec![0u8; n];
    let (mut pairs, mut mismatches, mut canonical) = (0usize, 0usize, 0usize);
    for a in 0..n {
        // canonical: labels appear in first-use order 0, 1, 2 (preorder)
        let mut next = 0u8;
        let mut seen = [u8::MAX; 3];
        let canon = meta[a].1.iter().all(|&l| {
            if seen[l as usize] == u8::MAX {
                seen[l as usize] = next;
                next += 1;
            }
            seen[l as usize] == l
        });
        if !canon {
            continue;
        }
        canonical += 1;
        for (b, slot) in row.iter_mut().enumerate() {
            *slot = oracle_ted(&oracle[a], &oracle[b], &mut memo);
        }
        // TED only compares labels for equality, so relabelling both trees
        // by the same permutation preserves it: check every image σ(a)
        let mut done: Vec<usize> = Vec::new();
        for pi in &perm_index {
            let pa = pi[a];
            if done.contains(&pa) {
                continue;
            }
            done.push(pa);
            for b in 0..n {
                let z = ws.distance(&post[pa], &post[pi[b]]);
                pairs += 1;
                mismatches += usize::from(z != usize::from(row[b]));
            }
        }
    }
    ensure!(pairs == n * n, "covered {pairs} of {} ordered pairs", n * n);
    log::info!("{canonical} label-canonical trees");
    Ok((n, pairs, mismatches))
}

/// Random trees (parents drawn among earlier nodes, then renumbered in
/// preorder) checked against the oracle; returns the mismatch count.
fn ted_random(pairs: usize, max_nodes: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let random_tree = |rng: &mut ChaCha8Rng| -> (LabeledTree<u8>, OracleTree) {
        let n = rng.random_range(1..=max_nodes);
        let mut children = vec![Vec::new(); n];
        for i in 1..n {
            children[rng.random_range(0..i)].push(i);
        }
        let mut pre = Vec::new();
        let mut stack = vec![0];
        while let Some(v) = stack.pop() {
            pre.push(v);
            stack.extend(children[v].iter().rev());
        }
        let mut id = vec![0; n];
        for (k, &v) in pre.iter().enumerate() {
            id[v] = k;
        }
        let mut parent = vec![None; n];
        for (v, ch) in children.iter().enumerate() {
            for &c in ch {
                parent[id[c]] = Some(id[v]);
            }
        }
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut t = LabeledTree::leaf(labels[0]);
        for i in 1..n {
            t.add_child(parent[i].expect("non-root"), labels[i]);
        }
        let (order, lm) = postorder_of(&parent);
        (t, OracleTree { labels: order.iter().map(|&v| labels[v]).collect(), lm })
    };
    let mut memo = Vec::new();
    let mut bad = 0;
    for _ in 0..pairs {
        let (ta, oa) = random_tree(&mut rng);
        let (tb, ob) = random_tree(&mut rng);
        bad += usize::from(tree_edit_distance(&ta, &tb) != usize::from(oracle_ted(&oa, &ob, &mut memo)));
    }
    bad
}

fn c8_metrics(_: &mut Ctx) -> Result<Verdict> {
    let mut notes = Vec::new();
    let mut pass = true;

    let (trees, pairs, bad) = ted_exhaustive(TED_EXHAUSTIVE_NODES)?;
    pass &= bad == 0;
    notes.push(format!(
        "TED = oracle on all {pairs} ordered pairs of the {trees} trees (≤{TED_EXHAUSTIVE_NODES} nodes, 3 labels): {bad} mismatches"
    ));
    let bad = ted_random(TED_RANDOM_PAIRS, TED_RANDOM_NODES);
    pass &= bad == 0;
    notes.push(format!("{TED_RANDOM_PAIRS} random pairs up to {TED_RANDOM_NODES} nodes: {bad} mismatches"));

    let lex = Lexicon::generate(24, 8)?;
    let mix = LayoutMix::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let docs: Vec<String> = (0..500).map(|_| {
        let words = rng.random_range(4..60);
        generate_markdown(&mut rng, words, &lex, &mix)
    }).collect();
    let (mut self_ok, mut sym_ok) = (true, true);
    for i in 0..200 {
        let a = parse_structure_tree(&docs[2 * i]);
        let b = parse_structure_tree(&docs[2 * i + 1]);
        self_ok &= steds(&a, &a) == 1.0;
        sym_ok &= steds(&a, &b) == steds(&b, &a);
    }
    pass &= self_ok && sym_ok;
    notes.push(format!("STEDS(t,t)=1: {self_ok}, symmetric on 200 pairs: {sym_ok}"));

    let cfg = BleuConfig::default();
    let ident = corpus_bleu(&docs[..50], &docs[..50], &cfg)?;
    pass &= ident == 100.0;
    // hand count: unigram 10/11, bigram 6/8, trigram 3/5, 4-gram 1/3;
    // hypothesis 11 tokens, reference 12 → BP = exp(1 − 12/11)
    let hyps = ["the cat sat on mat", "a b c e", "x y"];
    let refs = ["the cat sat on the mat", "a b c d", "x y"];
    let got = corpus_bleu(&hyps, &refs, &cfg)?;
    let expected = 55.487_266_051_1;
    pass &= (got - expected).abs() <= BLEU_FIXTURE_TOL;
    notes.push(format!("BLEU(h,h) = {ident}; 3-sentence fixture {got:.6} vs hand {expected:.6}"));

    let idem = docs.iter().all(|d| {
        let once = strip_plain_text(d);
        strip_plain_text(&once) == once
    });
    pass &= idem;
    let a = "# AB CD\n\nEF GH IJ\n\n| P | Q |\n| --- | --- |\n| R | S |\n\nKL MN";
    let b = "# AB CD\n\nEF GH IJ\n\n| Z |\n| --- |\n| Y |\n| X |\n\nKL MN";
    let pt = bleu_pt(&[a], &[b], &cfg)?;
    pass &= pt == 100.0;
    notes.push(format!("strip_plain_text idempotent on 500 documents: {idem}; BLEU-PT with differing tables = {pt}"));
    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------- 9

fn c9_slicing(ctx: &mut Ctx) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lex = Lexicon::generate(24, 9)?;
    let mix = LayoutMix::default();
    let mut edges: Vec<usize> = vec![0, 1, 249, 250, 251, 499, 500, 501, 749, 750, 751, 5000];
    edges.extend((0..300).map(|_| rng.random_range(0..1200)));
    let samples: Vec<EvalSample> = edges
        .iter()
        .enumerate()
        .map(|(i, &ctx_len)| {
            let words = rng.random_range(3..30);
            let reference = generate_markdown(&mut rng, words, &lex, &mix);
            let hypothesis = if i % 3 == 0 { reference.clone() } else { generate_markdown(&mut rng, words, &lex, &mix) };
            EvalSample { id: format!("s{i:04}"), context_length: ctx_len, layout_nodes: parse_structure_tree(&reference).size(), reference, hypothesis }
        })
        .collect();
    let slices = context_slices();
    ensure!(slices.len() == CONTEXT_BUCKETS.len(), "bucket count");
    let mut hits = vec![0usize; samples.len()];
    for s in &slices {
        for i in s.members(&samples) {
            hits[i] += 1;
        }
    }
    let partition = hits.iter().all(|&h| h == 1);
    // bucket membership by an independent reading of the (lo, hi] bounds
    let by_hand = samples.iter().all(|s| {
        let c = s.context_length;
        let expect = if c <= 250 { 0 } else if c <= 500 { 1 } else if c <= 750 { 2 } else { 3 };
        slices[expect].members(std::slice::from_ref(s)) == [0]
    });
    let mut all = slices.clone();
    all.push(Slice::new("all", SliceSpec::All));
    let report = slice_report(&samples, &all, &BleuConfig::default())?;
    let whole = report.slices.last().and_then(|s| s.scores);
    let equal = whole == Some(report.corpus);
    let bucket_total: usize = report.slices[..slices.len()].iter().map(|s| s.count).sum();
    let mut desk_note = String::new();
    if let Some(corpus) = &ctx.desk_corpus {
        let c = read_corpus(corpus)?;
        let rows: Vec<EvalSample> = c
            .samples
            .iter()
            .map(|s| EvalSample { id: s.id.clone(), context_length: s.context_length, layout_nodes: s.layout_nodes, reference: s.reference_markdown.clone(), hypothesis: String::new() })
            .collect();
        let n: usize = slices.iter().map(|s| s.members(&rows).len()).sum();
        desk_note = format!("; desk corpus: buckets cover {n}/{}", rows.len());
    }
    verdict(
        partition && by_hand && equal && bucket_total == samples.len(),
        format!("{} samples each in exactly one bucket: {partition}; bounds match (lo,hi]: {by_hand}; whole-corpus slice = corpus scores: {equal}{desk_note}", samples.len()),
    )
}

// ---------------------------------------------------------------- 10 & 11

fn c10_ablation(ctx: &mut Ctx) -> Result<Verdict> {
    let dir = ctx.root.join("c10");
    let spec = mini_spec();
    let corpus = dir.join("corpus");
    runner::gen_corpus(&spec, &corpus)?;
    let rows = runner::ablate(&spec, &corpus, &dir.join("ablate"))?;
    for (_, slug, s) in runner::ablation_variants(&spec) {
        ctx.logs.push((dir.join("ablate").join(slug).join("train_log.jsonl"), s.train.effective_alpha()));
    }
    let sweep = runner::sweep_alpha(&spec, &corpus, &dir.join("sweep"), &[0.0, 1.0])?;
    let complete = |r: &runner::VariantRow| r.status == "ok" && [r.bleu, r.bleu_pt, r.steds].iter().all(|v| v.is_some_and(f64::is_finite));
    let six = rows.len() == 6 && std::fs::read_to_string(dir.join("ablate/ablation.md"))?.lines().count() == 8;
    let all_ok = rows.iter().all(complete);
    let a0 = rows.iter().find(|r| r.slug == "no-align-loss");
    let s0 = sweep.iter().find(|r| r.alpha == 0.0);
    let same = match (a0, s0) {
        (Some(a), Some(s)) => a.checkpoint_sha256.is_some() && a.checkpoint_sha256 == s.checkpoint_sha256 && (a.bleu, a.bleu_pt, a.steds) == (s.bleu, s.bleu_pt, s.steds),
        _ => false,
    };
    let masked = rows.iter().find(|r| r.slug == "no-teacher-text").is_some_and(complete);
    let failed: Vec<&str> = rows.iter().filter(|r| !complete(r)).map(|r| r.slug.as_str()).collect();
    verdict(
        six && all_ok && same && masked,
        format!("6-row table: {six}; all variants report 3 metrics: {all_ok} (failed: {failed:?}); α=0 row = sweep α=0 (checkpoint + scores): {same}; text-masked teacher run complete: {masked}"),
    )
}

fn end_to_end(spec: &ExperimentSpec, dir: &Path) -> Result<(String, dimt_core::metrics::report::EvalReport)> {
    runner::gen_corpus(spec, &dir.join("corpus"))?;
    let (t, e) = runner::run_experiment(spec, &dir.join("corpus"), &dir.join("run"))?;
    Ok((file_hash(&t.final_checkpoint).context("hash")?, e.report))
}

fn c11_reproducibility(ctx: &mut Ctx) -> Result<Verdict> {
    let spec = mini_spec();
    let (h1, r1) = end_to_end(&spec, &ctx.root.join("c11/a"))?;
    let (h2, r2) = end_to_end(&spec, &ctx.root.join("c11/b"))?;
    ctx.logs.push((ctx.root.join("c11/a/run/train_log.jsonl"), spec.train.effective_alpha()));
    verdict(
        h1 == h2 && r1 == r2,
        format!("checkpoint sha256 {}… vs {}…; EvalReports identical: {}", &h1[..12], &h2[..12], r1 == r2),
    )
}
