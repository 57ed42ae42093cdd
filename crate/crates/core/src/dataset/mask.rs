//! Binary subject/background mask pairs.

use ndarray::{Array2, ArrayViewD, Ix2};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Complementary binary masks: `background = 1 - subject` elementwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    subject: Array2<u8>,
    background: Array2<u8>,
}

impl MaskPair {
    pub fn from_subject(subject: Array2<u8>) -> Result<Self> {
        if subject.iter().any(|&v| v > 1) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        let background = subject.mapv(|v| 1 - v);
        Ok(Self { subject, background })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::from_subject(Array2::ones((height, width))).expect("ones are binary")
    }

    pub fn subject(&self) -> &Array2<u8> {
        &self.subject
    }

    pub fn background(&self) -> &Array2<u8> {
        &self.background
    }

    pub fn dim(&self) -> (usize, usize) {
        self.subject.dim()
    }

    pub fn subject_count(&self) -> usize {
        self.subject.iter().filter(|&&v| v == 1).count()
    }

    /// Downsample by an integer factor. A cell becomes subject when at least
    /// half of its pixels are subject; the background is re-derived so the
    /// pair stays complementary.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Spec("downsample factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (h, w) = self.dim();
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "mask {h}x{w} not divisible by factor {factor}"
            )));
        }
        let cell = factor * factor;
        let out = Array2::from_shape_fn((h / factor, w / factor), |(i, j)| {
            let mut count = 0usize;
            for di in 0..factor {
                for dj in 0..factor {
                    count += self.subject[[i * factor + di, j * factor + dj]] as usize;
                }
            }
            u8::from(2 * count >= cell)
        });
        Self::from_subject(out)
    }
}

/// Binarize a grayscale mask (values in `[0, 1]`): subject where `value >= threshold`.
pub fn ingest_mask(mask_image: ArrayViewD<'_, f64>, threshold: f64) -> Result<MaskPair> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Spec(format!("mask threshold {threshold} not in (0, 1)")));
    }
    let grid = mask_image
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::Shape("mask image must be two-dimensional".into()))?;
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("mask contains non-finite values".into()));
    }
    MaskPair::from_subject(grid.mapv(|v| u8::from(v >= threshold)))
}
