//! The unit of synthesis: one 2D grayscale slice.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Fixed slice height after preprocessing.
pub const SLICE_HEIGHT: usize = 208;
/// Fixed slice width after preprocessing.
pub const SLICE_WIDTH: usize = 160;
/// Tolerance on the nominal [-1, 1] intensity range.
pub const RANGE_EPS: f64 = 1e-6;

/// A 208 x 160 grayscale slice with intensities in [-1, +1].
///
/// Construction validates shape, finiteness and range, so any `SliceImage`
/// in circulation satisfies the type invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pixels: Array2<f64>,
}

impl SliceImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if pixels.dim() != (SLICE_HEIGHT, SLICE_WIDTH) {
            return Err(Error::Shape {
                expected: format!("{SLICE_HEIGHT}x{SLICE_WIDTH}"),
                got: format!("{}x{}", pixels.dim().0, pixels.dim().1),
            });
        }
        for &v in pixels.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("slice image".into()));
            }
            if !(-1.0 - RANGE_EPS..=1.0 + RANGE_EPS).contains(&v) {
                return Err(Error::Argument(format!(
                    "pixel value {v} outside [-1, 1] (tolerance {RANGE_EPS})"
                )));
            }
        }
        Ok(SliceImage { pixels })
    }

    /// Constant-valued slice; `value` must lie in [-1, 1].
    pub fn constant(value: f64) -> Result<Self> {
        SliceImage::new(Array2::from_elem((SLICE_HEIGHT, SLICE_WIDTH), value))
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    /// Mean absolute pixel difference to another slice.
    pub fn mean_abs_diff(&self, other: &SliceImage) -> f64 {
        let n = (SLICE_HEIGHT * SLICE_WIDTH) as f64;
        self.pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n
    }

    /// Mean squared pixel difference to another slice (on the [-1, 1] scale).
    pub fn mean_sq_diff(&self, other: &SliceImage) -> f64 {
        let n = (SLICE_HEIGHT * SLICE_WIDTH) as f64;
        self.pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }
}
