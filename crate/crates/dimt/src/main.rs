use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dimt::runner::{self, EvalOptions, TrainOptions};
use dimt::spec::ExperimentSpec;
use dimt::{exit_code, UsageError, EXIT_USAGE};
use dimt_core::inference::BeamConfig;
use dimt_core::loss::AlignLossKind;
use dimt_core::synthdoc::Split;

#[derive(Parser)]
#[command(name = "dimt", version, about = "Document image translation with a distilled multimodal teacher")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment spec (TOML); defaults to the built-in `default` preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Built-in preset used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Overrides any spec field by dotted path, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Desk,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Ablation {
    #[value(name = "no_align_loss", alias = "no-align-loss")]
    NoAlignLoss,
    #[value(name = "no_alignment_encoder", alias = "no-alignment-encoder")]
    NoAlignmentEncoder,
    #[value(name = "use_teacher_output", alias = "use-teacher-output")]
    UseTeacherOutput,
    #[value(name = "no_teacher_image", alias = "no-teacher-image")]
    NoTeacherImage,
    #[value(name = "no_teacher_text", alias = "no-teacher-text")]
    NoTeacherText,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum LossArg {
    Cosine,
    #[value(name = "cosine_flat", alias = "cosine-flat")]
    CosineFlat,
    Mse,
    #[value(name = "cross_entropy", alias = "cross-entropy")]
    CrossEntropy,
}

impl From<LossArg> for AlignLossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Cosine => AlignLossKind::Cosine,
            LossArg::CosineFlat => AlignLossKind::CosineFlat,
            LossArg::Mse => AlignLossKind::Mse,
            LossArg::CrossEntropy => AlignLossKind::CrossEntropy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Clone)]
struct BeamArgs {
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
}

impl BeamArgs {
    fn apply(&self, base: BeamConfig) -> BeamConfig {
        BeamConfig {
            width: self.beam_width.unwrap_or(base.width),
            max_len: self.max_len.unwrap_or(base.max_len),
            length_penalty: self.length_penalty.unwrap_or(base.length_penalty),
        }
    }

    fn is_set(&self) -> bool {
        self.beam_width.is_some() || self.max_len.is_some() || self.length_penalty.is_some()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the spec (after --config/--preset/--seed) as TOML.
    ShowConfig {
        /// Fill derived fields first.
        #[arg(long)]
        resolved: bool,
    },
    /// Generate a synthetic corpus.
    GenCorpus,
    /// Train a student; writes checkpoints, train_log.jsonl and loss_curve.svg.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Continue from the latest checkpoint in --out.
        #[arg(long)]
        resume: bool,
        /// Stop (with a checkpoint) after this many steps.
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        align_loss: Option<LossArg>,
        /// Ablation switch; repeatable.
        #[arg(long, value_enum)]
        ablation: Vec<Ablation>,
        #[arg(long)]
        no_align_loss: bool,
        #[arg(long)]
        no_alignment_encoder: bool,
        #[arg(long)]
        use_teacher_output: bool,
        #[arg(long)]
        no_teacher_image: bool,
        #[arg(long)]
        no_teacher_text: bool,
    },
    /// Translate page images (binary PPM) with a checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Source markdown for each image (teacher-output checkpoints only).
        #[arg(long = "source")]
        sources: Vec<PathBuf>,
        /// Emit one JSON object per image.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        beam: BeamArgs,
    },
    /// Score a checkpoint, a predictions.jsonl file or a directory of
    /// `<id>.hyp.md` files on a corpus split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        max_samples: Option<usize>,
        #[arg(long)]
        layout_k: Option<usize>,
        #[command(flatten)]
        beam: BeamArgs,
    },
    /// Train and evaluate the base model and the five ablation variants.
    Ablate {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train and evaluate one run per α.
    SweepAlpha {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Train and evaluate one run per alignment-loss variant.
    CompareLosses {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "cosine,mse,cross_entropy")]
        losses: Vec<LossArg>,
    },
    /// Write `H_align` and teacher states for the first N samples as .npy.
    ExportReps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 16)]
        n: usize,
    },
    /// Pretrain the text-to-text translator used for warm starts.
    PretrainText {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn load_spec(g: &Global) -> Result<ExperimentSpec> {
    let mut spec = match &g.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => match g.preset {
            Preset::Default => ExperimentSpec::default(),
            Preset::Desk => ExperimentSpec::desk(),
        },
    };
    if let Some(s) = g.seed {
        log::info!("override: seed = {s}");
        spec.seed = s;
    }
    for o in &g.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got `{o}`")))?;
        spec.set(k.trim(), v.trim()).map_err(|e| UsageError(format!("--set {o}: {e:#}")))?;
        log::info!("override: {} = {}", k.trim(), v.trim());
    }
    Ok(spec)
}

fn out_dir(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| UsageError("--out is required".into()).into())
}

fn corpus_dir(arg: &Option<PathBuf>, spec: &ExperimentSpec) -> Result<PathBuf> {
    arg.clone()
        .or_else(|| spec.corpus_dir.clone())
        .ok_or_else(|| UsageError("no corpus: pass --corpus or set corpus_dir in the spec".into()).into())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut spec = load_spec(g)?;
    match cli.command {
        Command::ShowConfig { resolved } => {
            if resolved {
                spec.resolve()?;
            }
            print!("{}", spec.to_toml()?);
        }
        Command::GenCorpus => {
            let out = out_dir(g)?;
            let c = runner::gen_corpus(&spec, out)?;
            println!(
                "wrote {} samples ({} train / {} valid / {} test) to {}",
                c.samples.len(),
                c.manifest.train.len(),
                c.manifest.valid.len(),
                c.manifest.test.len(),
                out.display()
            );
        }
        Command::Train {
            corpus,
            resume,
            stop_after,
            alpha,
            steps,
            align_loss,
            ablation,
            no_align_loss,
            no_alignment_encoder,
            use_teacher_output,
            no_teacher_image,
            no_teacher_text,
        } => {
            let t = &mut spec.train;
            if let Some(a) = alpha {
                log::info!("override: train.alpha = {a}");
                t.alpha = a;
            }
            if let Some(s) = steps {
                log::info!("override: train.max_steps = {s}");
                t.max_steps = s;
            }
            if let Some(l) = align_loss {
                t.align_loss = l.into();
                log::info!("override: train.align_loss = {}", t.align_loss.name());
            }
            let on = |flag: bool, a: Ablation| flag || ablation.contains(&a);
            let switches = [
                (on(no_align_loss, Ablation::NoAlignLoss), "no_align_loss"),
                (on(no_alignment_encoder, Ablation::NoAlignmentEncoder), "no_alignment_encoder"),
                (on(use_teacher_output, Ablation::UseTeacherOutput), "use_teacher_output"),
                (on(no_teacher_image, Ablation::NoTeacherImage), "no_teacher_image"),
                (on(no_teacher_text, Ablation::NoTeacherText), "no_teacher_text"),
            ];
            for (set, name) in switches {
                if set {
                    log::info!("override: ablation {name}");
                }
            }
            t.no_align_loss |= switches[0].0;
            t.no_alignment_encoder |= switches[1].0;
            t.use_teacher_output |= switches[2].0;
            t.mask.use_image &= !switches[3].0;
            t.mask.use_text &= !switches[4].0;
            let corpus = corpus_dir(&corpus, &spec)?;
            let o = runner::train(&spec, &corpus, out_dir(g)?, &TrainOptions { resume, stop_after })?;
            println!("{} steps, checkpoint {} (sha256 {})", o.steps, o.final_checkpoint.display(), o.checkpoint_hash);
        }
        Command::Translate { checkpoint, images, sources, json, beam } => {
            if !sources.is_empty() && sources.len() != images.len() {
                return Err(UsageError("give one --source per image".into()).into());
            }
            let st = runner::load_student(&checkpoint)?;
            let base = BeamConfig { max_len: st.model.config().decoder.max_positions.min(BeamConfig::default().max_len), ..BeamConfig::default() };
            let beam = beam.apply(base);
            beam.validate(st.model.config().decoder.max_positions)?;
            drop(st);
            let srcs = (!sources.is_empty()).then_some(sources.as_slice());
            for (path, (r, secs)) in images.iter().zip(runner::translate_images(&checkpoint, &images, srcs, &beam)?) {
                if json {
                    let v = serde_json::json!({
                        "image": path, "markdown": r.markdown, "tokens": r.tokens,
                        "log_prob": r.log_prob, "truncated": r.truncated, "seconds": secs,
                    });
                    println!("{v}");
                } else {
                    if r.truncated {
                        eprintln!("warning: {} hit max_len before EOS", path.display());
                    }
                    println!("{}", r.markdown);
                }
            }
        }
        Command::Evaluate { checkpoint, corpus, split, predictions, max_samples, layout_k, beam } => {
            let corpus = corpus_dir(&corpus, &spec)?;
            let opts = EvalOptions {
                split: split.map(Into::into),
                beam: beam.is_set().then(|| beam.apply(spec.eval.beam)),
                max_samples,
                layout_k,
                predictions,
            };
            let o = runner::evaluate(&spec, checkpoint.as_deref(), &corpus, out_dir(g)?, &opts)?;
            let c = o.report.corpus;
            println!("BLEU {:.2}  BLEU-PT {:.2}  STEDS {:.4}", c.bleu, c.bleu_pt, c.steds);
            if let Some(s) = o.mean_seconds {
                println!("{s:.3} s/page");
            }
        }
        Command::Ablate { corpus } => {
            let corpus = corpus_dir(&corpus, &spec)?;
            let rows = runner::ablate(&spec, &corpus, out_dir(g)?)?;
            print!("{}", runner::markdown_table(&rows));
        }
        Command::SweepAlpha { corpus, alphas } => {
            let corpus = corpus_dir(&corpus, &spec)?;
            let alphas = alphas.unwrap_or_else(|| spec.sweep.alphas.clone());
            let rows = runner::sweep_alpha(&spec, &corpus, out_dir(g)?, &alphas)?;
            print!("{}", runner::markdown_table(&rows));
        }
        Command::CompareLosses { corpus, losses } => {
            let corpus = corpus_dir(&corpus, &spec)?;
            let kinds: Vec<AlignLossKind> = losses.into_iter().map(Into::into).collect();
            let rows = runner::compare_losses(&spec, &corpus, out_dir(g)?, &kinds)?;
            print!("{}", runner::markdown_table(&rows));
        }
        Command::ExportReps { checkpoint, corpus, split, n } => {
            let corpus = corpus_dir(&corpus, &spec)?;
            let s = runner::export_reps(&checkpoint, &corpus, split.into(), n, out_dir(g)?)?;
            println!("exported {:?}; mean cosine {:.4}", s.shape, s.mean_cosine);
        }
        Command::PretrainText { corpus } => {
            let corpus = corpus_dir(&corpus, &spec)?;
            let p = runner::pretrain(&spec, &corpus, out_dir(g)?)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli).context("dimt failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
