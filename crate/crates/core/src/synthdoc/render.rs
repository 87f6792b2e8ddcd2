//! Rasterises markdown onto a white page with an 8×8 bitmap font scaled
//! to the requested pixel size. Glyph edges are anti-aliased by 4×4
//! supersampling and pixel values are quantised to multiples of 1/255 so
//! they survive an 8-bit lossless file round trip.

use alloc::vec;
use alloc::vec::Vec;
use font8x8::legacy::BASIC_LEGACY;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::image::RasterImage;
use crate::Error;

const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    /// Body text glyph size in pixels (advance and line box).
    pub body_px: usize,
    /// Glyph sizes for heading levels 1-3.
    pub heading_px: [usize; 3],
    pub margin: usize,
    /// Extra pixels between wrapped lines.
    pub line_gap: usize,
    /// Vertical space for a blank line.
    pub paragraph_gap: usize,
    /// Indentation of list items and display formulas, in body glyphs.
    pub indent_glyphs: usize,
    /// Maximum per-line font-size jitter in pixels (0 renders clean pages).
    pub jitter_px: usize,
    pub jitter_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 224,
            width: 168,
            body_px: 8,
            heading_px: [14, 12, 10],
            margin: 8,
            line_gap: 2,
            paragraph_gap: 4,
            indent_glyphs: 2,
            jitter_px: 0,
            jitter_seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.height == 0 || self.width == 0 || self.body_px == 0 || self.heading_px.contains(&0) {
            return Err(Error::InvalidConfig("page and font dimensions must be positive".into()));
        }
        if 2 * self.margin >= self.height.min(self.width) {
            return Err(Error::InvalidConfig("margins leave no printable area".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LineKind {
    Heading(usize),
    ListItem,
    Table,
    Formula,
    Text,
}

fn classify(trimmed: &str) -> (LineKind, &str) {
    let hashes = trimmed.bytes().take_while(|&b| b == b'#').count();
    if (1..=3).contains(&hashes) && (trimmed.len() == hashes || trimmed.as_bytes()[hashes] == b' ') {
        return (LineKind::Heading(hashes), &trimmed[hashes..]);
    }
    if trimmed == "-" || trimmed.starts_with("- ") || trimmed == "*" || trimmed.starts_with("* ") {
        return (LineKind::ListItem, &trimmed[1..]);
    }
    if trimmed.starts_with('|') {
        return (LineKind::Table, trimmed);
    }
    if trimmed.starts_with("$$") {
        return (LineKind::Formula, trimmed);
    }
    (LineKind::Text, trimmed)
}

struct Canvas {
    width: usize,
    height: usize,
    ink: Vec<f64>,
}

impl Canvas {
    fn glyph(&mut self, ch: char, x0: usize, y0: usize, px: usize) {
        let code = ch as usize;
        let bitmap = if code < 128 { BASIC_LEGACY[code] } else { BASIC_LEGACY[b'?' as usize] };
        let sub = px * SUPERSAMPLE;
        for dy in 0..px {
            let y = y0 + dy;
            if y >= self.height {
                break;
            }
            for dx in 0..px {
                let x = x0 + dx;
                if x >= self.width {
                    break;
                }
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    let gy = ((dy * SUPERSAMPLE + sy) * 8) / sub;
                    let row = bitmap[gy];
                    for sx in 0..SUPERSAMPLE {
                        let gx = ((dx * SUPERSAMPLE + sx) * 8) / sub;
                        hits += usize::from(row >> gx & 1);
                    }
                }
                let cov = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                let cell = &mut self.ink[y * self.width + x];
                if cov > *cell {
                    *cell = cov;
                }
            }
        }
    }
}

/// Renders `markdown` onto a `height × width` page.
///
/// Headings use the larger heading sizes, list items and display formulas
/// are indented, formula delimiters are not drawn, and long lines wrap at
/// word boundaries. Content that does not fit vertically is an error.
pub fn render_document(markdown: &str, cfg: &RenderConfig) -> Result<RasterImage, Error> {
    cfg.validate()?;
    let mut canvas = Canvas { width: cfg.width, height: cfg.height, ink: vec![0.0; cfg.width * cfg.height] };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.jitter_seed);
    let right = cfg.width - cfg.margin;
    let bottom = cfg.height - cfg.margin;
    let mut y = cfg.margin;
    let mut prev_blank = true;
    let mut in_display = false;
    for line in markdown.split('\n') {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if !prev_blank {
                y += cfg.paragraph_gap;
            }
            prev_blank = true;
            continue;
        }
        prev_blank = false;
        let (mut kind, body) = classify(trimmed);
        if in_display {
            kind = LineKind::Formula;
            if trimmed.ends_with("$$") {
                in_display = false;
            }
        } else if kind == LineKind::Formula {
            let rest = &trimmed[2..];
            in_display = !rest.trim_end().ends_with("$$");
        }
        let mut px = match kind {
            LineKind::Heading(level) => cfg.heading_px[level - 1],
            _ => cfg.body_px,
        };
        if cfg.jitter_px > 0 {
            let j = rng.random_range(0..=2 * cfg.jitter_px) as isize - cfg.jitter_px as isize;
            px = (px as isize + j).max(3) as usize;
        }
        let indent = match kind {
            LineKind::ListItem | LineKind::Formula => cfg.indent_glyphs * cfg.body_px,
            _ => 0,
        };
        let left = cfg.margin + indent;
        if kind == LineKind::ListItem {
            check_fits(y, px, bottom, cfg)?;
            canvas.glyph('-', cfg.margin, y, px);
        }
        let mut x = left;
        let mut line_has_text = false;
        for token in body.split_whitespace() {
            let text: Vec<char> = token.chars().filter(|&c| c != '$').collect();
            if text.is_empty() {
                continue;
            }
            let w = text.len() * px;
            if line_has_text && x + px + w > right {
                y += px + cfg.line_gap;
                x = left;
                line_has_text = false;
            }
            if line_has_text {
                x += px;
            }
            check_fits(y, px, bottom, cfg)?;
            for (i, &c) in text.iter().enumerate() {
                let gx = x + i * px;
                if gx + px <= cfg.width {
                    canvas.glyph(c, gx, y, px);
                }
            }
            x += w;
            line_has_text = true;
        }
        y += px + cfg.line_gap;
    }
    let gray: Vec<f64> = canvas.ink.iter().map(|&c| quantize(1.0 - c)).collect();
    RasterImage::from_gray(cfg.height, cfg.width, &gray)
}

fn check_fits(y: usize, px: usize, bottom: usize, cfg: &RenderConfig) -> Result<(), Error> {
    if y + px > bottom {
        return Err(Error::PageOverflow { needed: y + px + cfg.margin, available: cfg.height });
    }
    Ok(())
}

#[inline]
fn quantize(v: f64) -> f64 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RenderConfig {
        RenderConfig { height: 64, width: 96, body_px: 8, heading_px: [12, 10, 9], margin: 4, ..Default::default() }
    }

    fn ink_rows(img: &RasterImage) -> Vec<usize> {
        (0..img.height()).filter(|&y| (0..img.width()).any(|x| img.pixel(y, x, 0) < 1.0)).collect()
    }

    fn ink_cols(img: &RasterImage) -> Vec<usize> {
        (0..img.width()).filter(|&x| (0..img.height()).any(|y| img.pixel(y, x, 0) < 1.0)).collect()
    }

    #[test]
    fn blank_page_and_shape() {
        let cfg = RenderConfig::default();
        let img = render_document("", &cfg).unwrap();
        assert_eq!((img.height(), img.width()), (224, 168));
        assert!(img.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deterministic() {
        let md = "# title\n\nsome body text here\n\n- item";
        let cfg = RenderConfig { jitter_px: 1, jitter_seed: 5, ..small() };
        assert_eq!(render_document(md, &cfg).unwrap(), render_document(md, &cfg).unwrap());
    }

    #[test]
    fn headings_are_taller_than_body() {
        let h = render_document("# ab", &small()).unwrap();
        let p = render_document("ab", &small()).unwrap();
        assert!(ink_rows(&h).len() > ink_rows(&p).len());
    }

    #[test]
    fn list_items_are_indented() {
        let l = render_document("- ab", &small()).unwrap();
        let p = render_document("ab", &small()).unwrap();
        let first_text_col = |img: &RasterImage, from: usize| ink_cols(img).into_iter().find(|&c| c >= from).unwrap();
        // text of the list item starts after the bullet and the indent
        assert!(first_text_col(&l, 4 + 2 * 8) > first_text_col(&p, 0));
    }

    #[test]
    fn overflow_is_reported() {
        let md = "word ".repeat(200);
        assert!(matches!(render_document(&md, &small()), Err(Error::PageOverflow { .. })));
    }

    #[test]
    fn values_are_quantized() {
        let cfg = RenderConfig { body_px: 6, ..small() };
        let img = render_document("anti aliased", &cfg).unwrap();
        assert!(img.pixels().iter().any(|&v| v > 0.0 && v < 1.0));
        for &v in img.pixels() {
            let q = v * 255.0;
            assert!((q - libm::round(q)).abs() < 1e-9);
        }
    }
}
