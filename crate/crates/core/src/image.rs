//! RGB raster pages and patch extraction.

use alloc::vec::Vec;

use crate::tensor::Matrix;
use crate::Error;

pub const CHANNELS: usize = 3;

/// Row-major `height × width × 3` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, Error> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(alloc::format!("image dims must be positive, got {height}x{width}")));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::LengthMismatch { expected: height * width * CHANNELS, found: pixels.len() });
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, pixels })
    }

    /// Uniform page of one gray level.
    pub fn blank(height: usize, width: usize, level: f64) -> Self {
        assert!(height > 0 && width > 0 && (0.0..=1.0).contains(&level));
        Self { height, width, pixels: alloc::vec![level; height * width * CHANNELS] }
    }

    /// Builds a gray image from one value per pixel.
    pub fn from_gray(height: usize, width: usize, gray: &[f64]) -> Result<Self, Error> {
        let mut pixels = Vec::with_capacity(gray.len() * CHANNELS);
        for &g in gray {
            pixels.extend_from_slice(&[g; CHANNELS]);
        }
        Self::new(height, width, pixels)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    /// Splits the page into non-overlapping `patch_h × patch_w` tiles, one
    /// row per tile in raster order, each flattened as (row, col, channel).
    pub fn patches(&self, patch_h: usize, patch_w: usize) -> Result<Matrix, Error> {
        if patch_h == 0 || patch_w == 0 || !self.height.is_multiple_of(patch_h) || !self.width.is_multiple_of(patch_w) {
            return Err(Error::InvalidConfig(alloc::format!(
                "patch {patch_h}x{patch_w} does not tile a {}x{} page",
                self.height, self.width
            )));
        }
        let (gh, gw) = (self.height / patch_h, self.width / patch_w);
        let dim = patch_h * patch_w * CHANNELS;
        let mut out = Matrix::zeros(gh * gw, dim);
        for py in 0..gh {
            for px in 0..gw {
                let row = out.row_mut(py * gw + px);
                let mut k = 0;
                for y in 0..patch_h {
                    let start = ((py * patch_h + y) * self.width + px * patch_w) * CHANNELS;
                    let src = &self.pixels[start..start + patch_w * CHANNELS];
                    row[k..k + src.len()].copy_from_slice(src);
                    k += src.len();
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_enforced() {
        assert!(RasterImage::new(0, 2, alloc::vec![]).is_err());
        assert!(RasterImage::new(1, 1, alloc::vec![0.5; 3]).is_ok());
        assert!(RasterImage::new(1, 1, alloc::vec![1.5; 3]).is_err());
        assert!(RasterImage::new(1, 1, alloc::vec![0.5; 2]).is_err());
    }

    #[test]
    fn patch_layout() {
        let gray: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let img = RasterImage::from_gray(4, 4, &gray).unwrap();
        let p = img.patches(2, 2).unwrap();
        assert_eq!(p.shape(), (4, 12));
        // second tile of the first tile-row covers pixels (0,2),(0,3),(1,2),(1,3)
        let expect = [2.0, 3.0, 6.0, 7.0];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(p.get(1, i * 3), e / 16.0);
        }
        assert!(img.patches(3, 2).is_err());
    }
}
