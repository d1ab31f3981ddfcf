//! Patch/token accounting and the pixel-mask to token-selection pipeline.
//!
//! An image is tiled into `n x m` patches, each encoded as `s x s` visual
//! tokens, giving a `(n*s) x (m*s)` token grid over the image. A multi-tile
//! layout also carries an `s x s` thumbnail, whose tokens follow the tile
//! tokens in feature order and are never selected by a mask.
//!
//! Token cells partition the image with floor-rational boundaries: along an
//! axis of `P` pixels and `T` tokens, cell `k` spans `[floor(kP/T),
//! floor((k+1)P/T))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::BinaryMask;

pub const DEFAULT_TILE_SIZE: usize = 448;
pub const DEFAULT_TOKENS_PER_SIDE: usize = 16;
pub const DEFAULT_MAX_TILES: usize = 12;
pub const DEFAULT_TOKEN_CAP: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("mask is {mask_w}x{mask_h} but layout expects {layout_w}x{layout_h}")]
    DimensionMismatch {
        mask_w: usize,
        mask_h: usize,
        layout_w: usize,
        layout_h: usize,
    },
    #[error("token index {index} out of range for {count} tokens")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("feature rows must share one dimension >= 1: {0}")]
    RaggedFeatures(String),
    #[error("selection indices must be strictly increasing")]
    UnorderedSelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    /// Tile rows.
    pub n: usize,
    /// Tile columns.
    pub m: usize,
    /// Tokens per tile side.
    pub s: usize,
    pub has_thumbnail: bool,
    pub image_width: usize,
    pub image_height: usize,
}

impl PatchLayout {
    pub fn new(
        n: usize,
        m: usize,
        s: usize,
        has_thumbnail: bool,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self, GridError> {
        if image_width == 0 || image_height == 0 {
            return Err(GridError::ZeroDimension {
                width: image_width,
                height: image_height,
            });
        }
        if n == 0 || m == 0 || s == 0 {
            return Err(GridError::InvalidLayout(format!("n={n} m={m} s={s}")));
        }
        Ok(Self {
            n,
            m,
            s,
            has_thumbnail,
            image_width,
            image_height,
        })
    }

    /// One tile, no thumbnail. Used for multi-temporal frames, which are fed
    /// to the encoder whole.
    pub fn single(image_width: usize, image_height: usize) -> Result<Self, GridError> {
        Self::new(1, 1, DEFAULT_TOKENS_PER_SIDE, false, image_width, image_height)
    }

    pub fn grid_rows(&self) -> usize {
        self.n * self.s
    }

    pub fn grid_cols(&self) -> usize {
        self.m * self.s
    }

    /// Tokens that map to pixel cells.
    pub fn tile_token_count(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn thumbnail_token_count(&self) -> usize {
        if self.has_thumbnail {
            self.s * self.s
        } else {
            0
        }
    }

    pub fn token_count(&self) -> usize {
        self.tile_token_count() + self.thumbnail_token_count()
    }

    /// `(row, col)` of a tile token.
    pub fn token_position(&self, index: usize) -> (usize, usize) {
        (index / self.grid_cols(), index % self.grid_cols())
    }

    /// Half-open pixel bounds `(x0, x1, y0, y1)` of a tile token's cell.
    pub fn cell_bounds(&self, index: usize) -> (usize, usize, usize, usize) {
        let (r, c) = self.token_position(index);
        let (x0, x1) = axis_bounds(c, self.grid_cols(), self.image_width);
        let (y0, y1) = axis_bounds(r, self.grid_rows(), self.image_height);
        (x0, x1, y0, y1)
    }
}

fn axis_bounds(k: usize, tokens: usize, pixels: usize) -> (usize, usize) {
    (k * pixels / tokens, (k + 1) * pixels / tokens)
}

/// Tile an image into `tile_size` patches, capped at `max_tiles`.
///
/// Without the cap, `n = ceil(h / tile)` and `m = ceil(w / tile)`. When
/// `n * m` exceeds the cap, the grid with `n * m <= max_tiles` whose aspect
/// ratio is closest to the image's is used (ties: more tiles, then fewer
/// rows).
pub fn plan_patches(
    image_width: usize,
    image_height: usize,
    tile_size: usize,
    max_tiles: usize,
) -> Result<PatchLayout, GridError> {
    if image_width == 0 || image_height == 0 {
        return Err(GridError::ZeroDimension {
            width: image_width,
            height: image_height,
        });
    }
    if tile_size == 0 || max_tiles == 0 {
        return Err(GridError::InvalidLayout(format!(
            "tile_size={tile_size} max_tiles={max_tiles}"
        )));
    }
    let mut n = image_height.div_ceil(tile_size);
    let mut m = image_width.div_ceil(tile_size);
    if n * m > max_tiles {
        let target = (image_width as f64 / image_height as f64).ln();
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for rows in 1..=max_tiles {
            for cols in 1..=max_tiles / rows {
                let err = ((cols as f64 / rows as f64).ln() - target).abs();
                let better = match best {
                    None => true,
                    Some((e, tiles, r, _)) => {
                        err < e - 1e-12
                            || ((err - e).abs() <= 1e-12 && (rows * cols > tiles || (rows * cols == tiles && rows < r)))
                    }
                };
                if better {
                    best = Some((err, rows * cols, rows, cols));
                }
            }
        }
        let (_, _, r, c) = best.expect("max_tiles >= 1");
        n = r;
        m = c;
    }
    PatchLayout::new(n, m, DEFAULT_TOKENS_PER_SIDE, n * m > 1, image_width, image_height)
}

/// Token-level view of a pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMask {
    pub layout: PatchLayout,
    /// Fraction of each tile token's cell covered by the mask.
    pub coverage: Vec<f64>,
    /// `coverage > 0.5`, decided on exact pixel counts.
    pub selected: Vec<bool>,
}

impl TokenMask {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

pub fn downsample_mask(mask: &BinaryMask, layout: &PatchLayout) -> Result<TokenMask, GridError> {
    if mask.width() != layout.image_width || mask.height() != layout.image_height {
        return Err(GridError::DimensionMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            layout_w: layout.image_width,
            layout_h: layout.image_height,
        });
    }
    let (w, h) = (mask.width(), mask.height());
    // integral image with a zero border row/column
    let stride = w + 1;
    let mut integral = vec![0usize; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0;
        for x in 0..w {
            row_sum += usize::from(mask.get(x, y));
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row_sum;
        }
    }
    let total = layout.tile_token_count();
    let mut coverage = Vec::with_capacity(total);
    let mut selected = Vec::with_capacity(total);
    for j in 0..total {
        let (x0, x1, y0, y1) = layout.cell_bounds(j);
        let area = (x1 - x0) * (y1 - y0);
        let covered = integral[y1 * stride + x1] + integral[y0 * stride + x0]
            - integral[y0 * stride + x1]
            - integral[y1 * stride + x0];
        if area == 0 {
            coverage.push(0.0);
            selected.push(false);
        } else {
            coverage.push(covered as f64 / area as f64);
            selected.push(2 * covered > area);
        }
    }
    Ok(TokenMask {
        layout: *layout,
        coverage,
        selected,
    })
}

/// Strictly increasing tile-token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSelection(Vec<usize>);

impl TokenSelection {
    pub fn new(indices: Vec<usize>) -> Result<Self, GridError> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::UnorderedSelection);
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Cap a token selection at `cap` while keeping it spread over the region.
///
/// At or below the cap every selected token is kept. Above it, a
/// `ceil(sqrt(cap))` square grid is laid over the bounding box of the
/// selected tokens and each nonempty cell contributes the selected token
/// nearest its centre (ties: lowest index). If that still yields more than
/// `cap` picks, the first `cap` in row-major cell order are kept.
pub fn spatial_uniform_sample(tok: &TokenMask, cap: usize) -> TokenSelection {
    let selected = tok.selected_indices();
    if selected.len() <= cap {
        return TokenSelection(selected);
    }
    if cap == 0 {
        return TokenSelection::default();
    }
    let g = ceil_sqrt(cap) as i64;
    let positions: Vec<(i64, i64)> = selected
        .iter()
        .map(|&j| {
            let (r, c) = tok.layout.token_position(j);
            (r as i64, c as i64)
        })
        .collect();
    let r0 = positions.iter().map(|p| p.0).min().unwrap();
    let r1 = positions.iter().map(|p| p.0).max().unwrap();
    let c0 = positions.iter().map(|p| p.1).min().unwrap();
    let c1 = positions.iter().map(|p| p.1).max().unwrap();
    let (span_r, span_c) = (r1 - r0 + 1, c1 - c0 + 1);

    // Work in units of 1/(2g) token: the token centre sits at 2g*(r-r0)+g and
    // the centre of overlay cell i at (2i+1)*span, so every comparison is an
    // exact integer one.
    let mut best: Vec<Option<(i64, usize)>> = vec![None; (g * g) as usize];
    for (&j, &(r, c)) in selected.iter().zip(&positions) {
        let cell_r = ((2 * (r - r0) + 1) * g / (2 * span_r)).min(g - 1);
        let cell_c = ((2 * (c - c0) + 1) * g / (2 * span_c)).min(g - 1);
        let dr = 2 * g * (r - r0) + g - (2 * cell_r + 1) * span_r;
        let dc = 2 * g * (c - c0) + g - (2 * cell_c + 1) * span_c;
        let dist = dr * dr + dc * dc;
        let slot = &mut best[(cell_r * g + cell_c) as usize];
        // `selected` is ascending, so keeping the first minimum breaks ties low
        if slot.is_none_or(|(d, _)| dist < d) {
            *slot = Some((dist, j));
        }
    }
    let mut picks: Vec<usize> = best.into_iter().flatten().map(|(_, j)| j).take(cap).collect();
    picks.sort_unstable();
    TokenSelection(picks)
}

fn ceil_sqrt(v: usize) -> usize {
    let mut r = (v as f64).sqrt() as usize;
    while r * r < v {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= v {
        r -= 1;
    }
    r
}

/// Visual features of one image (and one modality), one row per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenFeatures {
    rows: Vec<Vec<f64>>,
}

impl TokenFeatures {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, GridError> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| GridError::RaggedFeatures("no rows".into()))?;
        if dim == 0 {
            return Err(GridError::RaggedFeatures("zero-width rows".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(GridError::RaggedFeatures(format!(
                "row {i} has {} entries, expected {dim}",
                rows[i].len()
            )));
        }
        Ok(Self { rows })
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Feature rows gathered for a selection, in selection order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSequence {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn extract_features(features: &TokenFeatures, sel: &TokenSelection) -> Result<FeatureSequence, GridError> {
    let rows = sel
        .indices()
        .iter()
        .map(|&j| {
            features.rows.get(j).cloned().ok_or(GridError::IndexOutOfRange {
                index: j,
                count: features.count(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(FeatureSequence { rows })
}
