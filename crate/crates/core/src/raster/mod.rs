//! Dense binary-mask primitives.
//!
//! Everything above this module (token grids, spatial queries, evaluation)
//! works on [`BinaryMask`] values. Masks are row-major boolean planes; the
//! run-length form [`RleMask`] is the wire format.

mod components;
mod distance;
mod morphology;
mod rle;

pub use components::{connected_components, ComponentLabeling, Connectivity};
pub use distance::{distance_transform, squared_distance_transform, DistanceField};
pub use morphology::{dilate, erode, open};
pub use rle::{rle_decode, rle_encode, RleMask};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("bit plane has {actual} entries, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("malformed RLE mask: counts sum to {sum}, expected {expected}")]
    MalformedRle { sum: u64, expected: u64 },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("distance transform of an empty mask is undefined")]
    EmptySource,
}

/// A single-class region on a `width x height` pixel grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-background mask.
    pub fn new(width: usize, height: usize) -> Result<Self, MaskError> {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroDimension { width, height });
        }
        Ok(Self {
            width,
            height,
            bits: vec![value; width * height],
        })
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroDimension { width, height });
        }
        if bits.len() != width * height {
            return Err(MaskError::LengthMismatch {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    /// Build a mask from a predicate evaluated at every `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self, MaskError> {
        let mut mask = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                mask.bits[y * width + x] = f(x, y);
            }
        }
        Ok(mask)
    }

    /// Parse rows of `#`/`.` characters. Handy for fixtures.
    pub fn from_ascii(rows: &[&str]) -> Result<Self, MaskError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut bits = Vec::with_capacity(width * height);
        for row in rows {
            bits.extend(row.chars().map(|c| c == '#' || c == '1'));
        }
        Self::from_bits(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when no pixel is foreground.
    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(MaskError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize, MaskError> {
        self.check_shape(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(BinaryMask { bits, ..*self })
    }

    pub fn intersects(&self, other: &BinaryMask) -> Result<bool, MaskError> {
        Ok(self.intersection_count(other)? > 0)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Iterator over `(x, y)` of foreground pixels in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Shorthand used in a few fixtures: intersection-over-union of two masks.
/// Two empty masks are identical and score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    a.check_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
