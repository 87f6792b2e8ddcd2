//! On-disk corpus layout:
//!
//! ```text
//! manifest.json          generation config, seed and split assignment
//! lexicon.tsv            source<TAB>target, one entry per line
//! samples.jsonl          per-sample metadata
//! images/<id>.ppm        binary PPM (P6, 8-bit)
//! source/<id>.md         source markdown
//! reference/<id>.md      reference translation
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dimt_core::image::{RasterImage, CHANNELS};
use dimt_core::synthdoc::generate::{build_lexicon, source_vocab, target_vocab};
use dimt_core::synthdoc::{Corpus, CorpusManifest, DocumentSample, SourceText, Split};
use serde::{Deserialize, Serialize};

pub fn write_ppm(path: &Path, image: &RasterImage) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write!(f, "P6\n{} {}\n255\n", image.width(), image.height())?;
    let bytes: Vec<u8> = image.pixels().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

fn ppm_token(data: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    ensure!(start < *pos, "truncated PPM header");
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

pub fn read_ppm(path: &Path) -> Result<RasterImage> {
    let mut data = Vec::new();
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))?.read_to_end(&mut data)?;
    let mut pos = 0;
    ensure!(ppm_token(&data, &mut pos)? == "P6", "{}: not a binary PPM", path.display());
    let width: usize = ppm_token(&data, &mut pos)?.parse()?;
    let height: usize = ppm_token(&data, &mut pos)?.parse()?;
    let max: usize = ppm_token(&data, &mut pos)?.parse()?;
    ensure!(max == 255, "{}: only 8-bit PPM is supported", path.display());
    pos += 1;
    let need = width * height * CHANNELS;
    ensure!(data.len() >= pos + need, "{}: pixel data truncated", path.display());
    let pixels = data[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(RasterImage::new(height, width, pixels)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub context_length: usize,
    pub layout_nodes: usize,
    pub source_tokens: Vec<u32>,
}

fn split_of(manifest: &CorpusManifest, id: &str) -> Split {
    if manifest.valid.iter().any(|x| x == id) {
        Split::Valid
    } else if manifest.test.iter().any(|x| x == id) {
        Split::Test
    } else {
        Split::Train
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    for sub in ["images", "source", "reference"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    write_json(&dir.join("manifest.json"), &corpus.manifest)?;
    let lex: String = corpus
        .lexicon
        .source_words()
        .iter()
        .zip(corpus.lexicon.target_words())
        .map(|(s, t)| format!("{s}\t{t}\n"))
        .collect();
    fs::write(dir.join("lexicon.tsv"), lex)?;
    let mut records = Vec::with_capacity(corpus.samples.len());
    for s in &corpus.samples {
        write_ppm(&dir.join("images").join(format!("{}.ppm", s.id)), &s.image)?;
        fs::write(dir.join("source").join(format!("{}.md", s.id)), &s.source_markdown)?;
        fs::write(dir.join("reference").join(format!("{}.md", s.id)), &s.reference_markdown)?;
        records.push(SampleRecord {
            id: s.id.clone(),
            split: split_of(&corpus.manifest, &s.id),
            context_length: s.context_length,
            layout_nodes: s.layout_nodes,
            source_tokens: s.source.tokens.clone(),
        });
    }
    write_jsonl(&dir.join("samples.jsonl"), &records)
}

/// Loads a corpus and checks it against its own generation config: the
/// lexicon is regenerated and source tokens are re-encoded.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    ensure!(dir.join("manifest.json").exists(), "no corpus at {} (run gen-corpus first)", dir.display());
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    let lexicon = build_lexicon(&manifest.config)?;
    let stored = fs::read_to_string(dir.join("lexicon.tsv"))?;
    let expected: String =
        lexicon.source_words().iter().zip(lexicon.target_words()).map(|(s, t)| format!("{s}\t{t}\n")).collect();
    ensure!(stored == expected, "lexicon.tsv does not match the manifest's generation config");
    let src_vocab = source_vocab(&lexicon);
    let records: Vec<SampleRecord> = read_jsonl(&dir.join("samples.jsonl"))?;
    ensure!(records.len() == manifest.samples.len(), "samples.jsonl lists {} samples, manifest {}", records.len(), manifest.samples.len());
    let render = &manifest.config.render;
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let image = read_ppm(&dir.join("images").join(format!("{}.ppm", r.id)))?;
        if (image.height(), image.width()) != (render.height, render.width) {
            bail!("{}: image is {}x{}, config says {}x{}", r.id, image.height(), image.width(), render.height, render.width);
        }
        let source_markdown = fs::read_to_string(dir.join("source").join(format!("{}.md", r.id)))?;
        let reference_markdown = fs::read_to_string(dir.join("reference").join(format!("{}.md", r.id)))?;
        let tokens = src_vocab.encode(&source_markdown);
        ensure!(tokens == r.source_tokens, "{}: source tokens disagree with the source text", r.id);
        samples.push(DocumentSample {
            id: r.id,
            image,
            source: SourceText::new(tokens),
            source_markdown,
            reference_markdown,
            context_length: r.context_length,
            layout_nodes: r.layout_nodes,
        });
    }
    Ok(Corpus { manifest, target_vocab: target_vocab(&lexicon), source_vocab: src_vocab, lexicon, samples })
}

/// Per-run output directory helpers.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints")).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("step-{step}.ckpt"))
    }

    /// Highest-numbered `step-<N>.ckpt`.
    pub fn latest_checkpoint(&self) -> Result<Option<(usize, PathBuf)>> {
        let dir = self.root.join("checkpoints");
        if !dir.exists() {
            return Ok(None);
        }
        let mut best = None;
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if let Some(n) = name.strip_prefix("step-").and_then(|r| r.strip_suffix(".ckpt")).and_then(|n| n.parse::<usize>().ok()) {
                if best.as_ref().is_none_or(|(b, _)| n > *b) {
                    best = Some((n, path));
                }
            }
        }
        Ok(best)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact() {
        let gray: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let img = RasterImage::from_gray(3, 4, &gray).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        write_ppm(&p, &img).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), img);
    }
}
