//! JSON scenario files: everything a scripted inference run needs.
//!
//! ```json
//! {
//!   "question": "Which is larger, water or road?",
//!   "max_tokens": 256,
//!   "images": [
//!     {"width": 64, "height": 64,
//!      "optical": {"synthetic": {"dim": 8, "seed": 1}},
//!      "sar": {"rows": [[0.1, 0.2], ...]}}
//!   ],
//!   "text_embeddings": {"synthetic": {"length": 4, "seed": 7}},
//!   "masks": [{"state": "water", "image": 1, "rect": [0, 0, 32, 16]}],
//!   "script": [{"token": "Image: t1 water "}, {"token": "[SEG]", "state": "water"}]
//! }
//! ```
//!
//! `image` in a mask entry is 1-based, matching the `Image: t<k>` markers.
//! Layouts default to a single tile with 16x16 tokens; `"tiling": {"tile_size":
//! 448, "max_tiles": 12}` plans a multi-tile layout instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    run_inference, GenerationConfig, ImageFeatures, ReasoningTrace, RuntimeError, ScriptStep, ScriptedGenerator,
    ScriptedMaskDecoder, StaticFeatureProvider,
};
use crate::grid::{plan_patches, PatchLayout, TokenFeatures};
use crate::modality::TextEmbeddings;
use crate::raster::{rle_decode, BinaryMask, RleMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub question: String,
    #[serde(default)]
    pub max_tokens: Option<usize>,
    pub images: Vec<ScenarioImage>,
    #[serde(default)]
    pub text_embeddings: Option<FeatureSource>,
    #[serde(default)]
    pub masks: Vec<ScenarioMask>,
    pub script: Vec<ScriptStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioImage {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub tiling: Option<Tiling>,
    #[serde(default)]
    pub optical: Option<FeatureSource>,
    #[serde(default)]
    pub sar: Option<FeatureSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub tile_size: usize,
    pub max_tiles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Rows(Vec<Vec<f64>>),
    Synthetic(SyntheticFeatures),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFeatures {
    /// Feature width; text embeddings default to the image feature width.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Rows for text embeddings; ignored for image features.
    #[serde(default)]
    pub length: Option<usize>,
    pub seed: u64,
}

/// Uniform values in [-1, 1) from a seeded ChaCha stream.
pub fn synthetic_rows(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMask {
    pub state: String,
    /// 1-based image number.
    #[serde(default = "first_image")]
    pub image: usize,
    #[serde(default)]
    pub rect: Option<[usize; 4]>,
    #[serde(default)]
    pub rle: Option<RleMask>,
}

fn first_image() -> usize {
    1
}

/// Scripted components built from a scenario.
pub struct ScenarioRun {
    pub generator: ScriptedGenerator,
    pub decoder: ScriptedMaskDecoder,
    pub provider: StaticFeatureProvider,
    pub config: GenerationConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, RuntimeError> {
        serde_json::from_str(text).map_err(|e| RuntimeError::Scenario(e.to_string()))
    }

    fn layout(image: &ScenarioImage) -> Result<PatchLayout, RuntimeError> {
        Ok(match image.tiling {
            Some(t) => plan_patches(image.width, image.height, t.tile_size, t.max_tiles)?,
            None => PatchLayout::single(image.width, image.height)?,
        })
    }

    fn features(
        source: &Option<FeatureSource>,
        count: usize,
        what: &str,
    ) -> Result<Option<TokenFeatures>, RuntimeError> {
        let rows = match source {
            None => return Ok(None),
            Some(FeatureSource::Rows(rows)) => rows.clone(),
            Some(FeatureSource::Synthetic(s)) => {
                let dim = s
                    .dim
                    .ok_or_else(|| RuntimeError::Scenario(format!("{what}: synthetic features need a dim")))?;
                synthetic_rows(count, dim, s.seed)
            }
        };
        Ok(Some(TokenFeatures::new(rows)?))
    }

    /// Assemble the scripted generator, decoder and feature provider.
    pub fn build(&self, base: &GenerationConfig) -> Result<ScenarioRun, RuntimeError> {
        if self.images.is_empty() {
            return Err(RuntimeError::Scenario("scenario declares no images".into()));
        }
        let mut images = Vec::with_capacity(self.images.len());
        for (i, img) in self.images.iter().enumerate() {
            let layout = Self::layout(img)?;
            let count = layout.token_count();
            let optical = Self::features(&img.optical, count, &format!("image {} optical", i + 1))?;
            let sar = Self::features(&img.sar, count, &format!("image {} sar", i + 1))?;
            if optical.is_none() && sar.is_none() {
                return Err(RuntimeError::Scenario(format!("image {} has no features", i + 1)));
            }
            images.push(ImageFeatures { layout, optical, sar });
        }

        let visual_dim = images
            .iter()
            .find_map(|i| i.optical.as_ref().or(i.sar.as_ref()).map(TokenFeatures::dim))
            .expect("every image has features");
        let text = match &self.text_embeddings {
            None => None,
            Some(FeatureSource::Rows(rows)) => Some(TextEmbeddings::new(rows.clone())?),
            Some(FeatureSource::Synthetic(s)) => {
                let length = s.length.unwrap_or(4).max(1);
                let dim = s.dim.unwrap_or(visual_dim);
                Some(TextEmbeddings::new(synthetic_rows(length, dim, s.seed))?)
            }
        };

        let mut decoder = ScriptedMaskDecoder::new();
        for m in &self.masks {
            let index = m
                .image
                .checked_sub(1)
                .filter(|&i| i < self.images.len())
                .ok_or_else(|| RuntimeError::Scenario(format!("mask {:?} names image {}", m.state, m.image)))?;
            let img = &self.images[index];
            let mask = match (&m.rect, &m.rle) {
                (Some([x0, y0, x1, y1]), None) => BinaryMask::from_fn(img.width, img.height, |x, y| {
                    (*x0..*x1).contains(&x) && (*y0..*y1).contains(&y)
                })?,
                (None, Some(rle)) => rle_decode(rle)?,
                _ => {
                    return Err(RuntimeError::Scenario(format!(
                        "mask {:?} needs exactly one of rect or rle",
                        m.state
                    )))
                }
            };
            decoder.insert(m.state.clone(), index, mask);
        }

        let mut config = base.clone();
        if let Some(max) = self.max_tokens {
            config.max_tokens = max;
        }
        Ok(ScenarioRun {
            generator: ScriptedGenerator::new(self.script.clone()),
            decoder,
            provider: StaticFeatureProvider { images, text },
            config,
        })
    }

    pub fn run(&self, base: &GenerationConfig) -> Result<ReasoningTrace, RuntimeError> {
        let mut run = self.build(base)?;
        let mut trace = run_inference(
            &mut run.generator,
            &mut run.decoder,
            &run.provider,
            &self.question,
            &run.config,
        )?;
        if !self.name.is_empty() {
            trace.id = Some(self.name.clone());
        }
        Ok(trace)
    }
}
