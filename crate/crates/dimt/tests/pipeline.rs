//! End-to-end runner behaviour on a tiny spec: determinism, resume,
//! ablation flags, evaluation inputs and representation export.

use std::fs;
use std::path::{Path, PathBuf};

use dimt::checkpoint::file_hash;
use dimt::io::{read_corpus, read_jsonl};
use dimt::runner::{self, steps, EvalOptions, LogRecord, TrainOptions};
use dimt::spec::ExperimentSpec;
use dimt::{exit_code, EXIT_DATA, EXIT_USAGE};
use dimt_core::inference::BeamConfig;
use dimt_core::loss::AlignLossKind;
use dimt_core::metrics::structure::parse_structure_tree;
use dimt_core::synthdoc::Split;
use tempfile::TempDir;

fn tiny_spec() -> ExperimentSpec {
    let mut s = ExperimentSpec::desk();
    s.name = "tiny".into();
    s.corpus.samples = 40;
    s.corpus.split = [0.6, 0.2, 0.2];
    s.train.max_steps = 6;
    s.train.warmup_steps = 2;
    s.train.eval_every = 3;
    s.train.checkpoint_every = 3;
    s.eval.validation_samples = Some(3);
    s.eval.max_samples = Some(4);
    s.eval.layout_k = 2;
    s.eval.beam = BeamConfig { width: 2, max_len: 24, length_penalty: 1.0 };
    s
}

fn corpus(dir: &TempDir, spec: &ExperimentSpec) -> PathBuf {
    let p = dir.path().join("corpus");
    runner::gen_corpus(spec, &p).unwrap();
    p
}

fn log_bytes(run: &Path) -> Vec<u8> {
    fs::read(run.join("train_log.jsonl")).unwrap()
}

#[test]
fn interrupted_and_resumed_run_matches_uninterrupted() {
    let dir = TempDir::new().unwrap();
    let spec = tiny_spec();
    let c = corpus(&dir, &spec);
    let a = runner::train(&spec, &c, &dir.path().join("a"), &TrainOptions::default()).unwrap();
    let a2 = runner::train(&spec, &c, &dir.path().join("a2"), &TrainOptions::default()).unwrap();
    assert_eq!(a.checkpoint_hash, a2.checkpoint_hash);

    let b = dir.path().join("b");
    let part = runner::train(&spec, &c, &b, &TrainOptions { stop_after: Some(4), ..Default::default() }).unwrap();
    assert!(!part.completed);
    assert_eq!(part.steps, 4);
    let done = runner::train(&spec, &c, &b, &TrainOptions { resume: true, ..Default::default() }).unwrap();
    assert!(done.completed);
    assert_eq!(steps(&done.log).len(), steps(&a.log).len());
    assert_eq!(done.checkpoint_hash, a.checkpoint_hash);
    assert_eq!(log_bytes(&b), log_bytes(&dir.path().join("a")));

    // the resolved spec is stored beside the outputs
    let mut resolved = spec.clone();
    resolved.resolve().unwrap();
    assert_eq!(ExperimentSpec::load(&b.join("spec.resolved.toml")).unwrap(), resolved);
    assert!(b.join("loss_curve.svg").exists());
}

#[test]
fn no_align_loss_flag_trains_like_zero_alpha() {
    let dir = TempDir::new().unwrap();
    let spec = tiny_spec();
    let c = corpus(&dir, &spec);
    let mut flagged = spec.clone();
    flagged.train.no_align_loss = true;
    let mut zero = spec.clone();
    zero.train.alpha = 0.0;
    let f = runner::train(&flagged, &c, &dir.path().join("flag"), &TrainOptions::default()).unwrap();
    let z = runner::train(&zero, &c, &dir.path().join("zero"), &TrainOptions::default()).unwrap();
    let (fs_, zs) = (steps(&f.log), steps(&z.log));
    assert_eq!(fs_.len(), zs.len());
    for (a, b) in fs_.iter().zip(&zs) {
        // the alignment loss is still measured, but adds nothing
        assert!(a.align > 0.0);
        assert_eq!(a.total.to_bits(), a.trans.to_bits());
        assert_eq!((a.trans.to_bits(), a.grad_norm.to_bits()), (b.trans.to_bits(), b.grad_norm.to_bits()));
    }
    let params = |p: &Path| dimt::checkpoint::Checkpoint::load(p).unwrap().params;
    assert_eq!(params(&f.final_checkpoint), params(&z.final_checkpoint));
}

#[test]
fn evaluate_scores_prediction_directories() {
    let dir = TempDir::new().unwrap();
    let spec = tiny_spec();
    let c = corpus(&dir, &spec);
    let corp = read_corpus(&c).unwrap();
    let test: Vec<_> = corp.split(Split::Test).into_iter().take(4).collect();

    let oracle = dir.path().join("oracle");
    fs::create_dir_all(&oracle).unwrap();
    for s in &test {
        fs::write(oracle.join(format!("{}.hyp.md", s.id)), &s.reference_markdown).unwrap();
    }
    let opts = |p: &Path| EvalOptions { predictions: Some(p.to_path_buf()), ..EvalOptions::default() };
    let e = runner::evaluate(&spec, None, &c, &dir.path().join("e1"), &opts(&oracle)).unwrap();
    assert!((e.report.corpus.bleu - 100.0).abs() < 1e-9);
    assert_eq!(e.report.corpus.steds, 1.0);
    let md = fs::read_to_string(dir.path().join("e1/report.md")).unwrap();
    assert!(md.contains("| corpus | 4 | 100.00 |"), "{md}");
    // the written hypotheses round-trip as a predictions directory
    let again = runner::evaluate(&spec, None, &c, &dir.path().join("e2"), &opts(&dir.path().join("e1/hyp"))).unwrap();
    assert_eq!(again.report, e.report);

    // empty hypotheses: each tree is root-only, so TED = size - 1
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    for s in &test {
        fs::write(empty.join(format!("{}.hyp.md", s.id)), "").unwrap();
    }
    let e = runner::evaluate(&spec, None, &c, &dir.path().join("e3"), &opts(&empty)).unwrap();
    assert_eq!(e.report.corpus.bleu, 0.0);
    let expected = test.iter().map(|s| 1.0 / parse_structure_tree(&s.reference_markdown).size() as f64).sum::<f64>() / test.len() as f64;
    assert!((e.report.corpus.steds - expected).abs() < 1e-12);

    fs::remove_file(empty.join(format!("{}.hyp.md", test[2].id))).unwrap();
    let err = runner::evaluate(&spec, None, &c, &dir.path().join("e4"), &opts(&empty)).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
    assert!(format!("{err:#}").contains(&test[2].id));
}

#[test]
fn export_shows_alignment_learning() {
    let dir = TempDir::new().unwrap();
    let mut spec = tiny_spec();
    spec.train.max_steps = 40;
    spec.train.warmup_steps = 5;
    spec.train.eval_every = 0;
    spec.train.checkpoint_every = 0;
    let c = corpus(&dir, &spec);
    let run = dir.path().join("run");
    let untrained = runner::train(&spec, &c, &run, &TrainOptions { stop_after: Some(0), ..Default::default() }).unwrap();
    assert_eq!(untrained.steps, 0);
    let u = runner::export_reps(&untrained.final_checkpoint, &c, Split::Test, 5, &dir.path().join("u")).unwrap();
    let trained = runner::train(&spec, &c, &run, &TrainOptions { resume: true, ..Default::default() }).unwrap();
    let t = runner::export_reps(&trained.final_checkpoint, &c, Split::Test, 5, &dir.path().join("t")).unwrap();
    assert!(u.mean_cosine.abs() < 0.2, "untrained cosine {}", u.mean_cosine);
    assert!(t.mean_cosine > u.mean_cosine + 0.1, "trained {} vs untrained {}", t.mean_cosine, u.mean_cosine);
    assert_eq!(t.shape, [5, spec.teacher.seq_len, spec.teacher.width]);
    let a: ndarray::Array3<f64> = ndarray_npy::read_npy(dir.path().join("t/h_align.npy")).unwrap();
    assert_eq!(a.shape(), &t.shape);
    assert!(runner::export_reps(&trained.final_checkpoint, &c, Split::Test, 1000, &dir.path().join("x")).is_err());
}

#[test]
fn sweep_and_loss_comparison_tables() {
    let dir = TempDir::new().unwrap();
    let mut spec = tiny_spec();
    spec.train.max_steps = 3;
    spec.eval.max_samples = Some(2);
    let c = corpus(&dir, &spec);

    let err = runner::sweep_alpha(&spec, &c, &dir.path().join("s0"), &[1.0]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);
    let err = runner::sweep_alpha(&spec, &c, &dir.path().join("s0"), &[1.0, 1.0]).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);

    let rows = runner::sweep_alpha(&spec, &c, &dir.path().join("sweep"), &[0.0, 2.0]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.status == "ok" && r.bleu.is_some() && r.bleu_pt.is_some()));
    let svg = fs::read_to_string(dir.path().join("sweep/sweep.svg")).unwrap();
    assert!(svg.contains("α") && svg.contains("BLEU"));
    let json: Vec<runner::VariantRow> = dimt::io::read_json(&dir.path().join("sweep/sweep.json")).unwrap();
    assert_eq!(json, rows);

    let kinds = [AlignLossKind::Cosine, AlignLossKind::Mse, AlignLossKind::CrossEntropy];
    let rows = runner::compare_losses(&spec, &c, &dir.path().join("losses"), &kinds).unwrap();
    assert_eq!(rows.iter().map(|r| r.slug.as_str()).collect::<Vec<_>>(), ["cosine", "mse", "cross_entropy"]);
    assert!(rows.iter().all(|r| r.status == "ok"));
    // different alignment losses give different students
    assert_ne!(rows[0].checkpoint_sha256, rows[1].checkpoint_sha256);
    let md = fs::read_to_string(dir.path().join("losses/losses.md")).unwrap();
    assert_eq!(md.lines().count(), 2 + kinds.len());
}

#[test]
fn corpus_mismatch_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let spec = tiny_spec();
    let c = corpus(&dir, &spec);
    let mut other = spec.clone();
    other.seed = 99;
    let err = runner::train(&other, &c, &dir.path().join("r"), &TrainOptions::default()).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
    let log: Option<Vec<LogRecord>> = read_jsonl(&dir.path().join("r/train_log.jsonl")).ok();
    assert!(log.is_none_or(|l| l.is_empty()));
    assert!(file_hash(&dir.path().join("missing")).is_err());
}
