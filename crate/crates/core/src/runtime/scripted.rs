//! Deterministic stand-ins for the language model, mask decoder and vision
//! encoder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Context, FeatureProvider, GenStep, MaskDecoder, RuntimeError, SegPrompt, TextGenerator, DEFAULT_EOS};
use crate::grid::{PatchLayout, TokenFeatures};
use crate::modality::{Modality, TextEmbeddings};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

impl ScriptStep {
    pub fn text(token: impl Into<String>) -> Self {
        Self {
            token: token.into(),
            state: None,
        }
    }

    pub fn seg(state: impl Into<String>) -> Self {
        Self {
            token: super::SEG_TOKEN.into(),
            state: Some(state.into()),
        }
    }
}

/// Replays a fixed token script, then emits the end token forever.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    script: Vec<ScriptStep>,
    position: usize,
    eos: String,
}

impl ScriptedGenerator {
    pub fn new(script: Vec<ScriptStep>) -> Self {
        Self {
            script,
            position: 0,
            eos: DEFAULT_EOS.to_string(),
        }
    }

    /// Split plain text on `[SEG]`, attaching `states` to the markers in order.
    pub fn from_text(text: &str, states: &[&str]) -> Self {
        let mut script = Vec::new();
        let mut states = states.iter();
        for (i, part) in text.split(super::SEG_TOKEN).enumerate() {
            if i > 0 {
                script.push(ScriptStep::seg(*states.next().unwrap_or(&"")));
            }
            if !part.is_empty() {
                script.push(ScriptStep::text(part));
            }
        }
        Self::new(script)
    }
}

impl TextGenerator for ScriptedGenerator {
    fn step(&mut self, _context: &Context) -> Result<GenStep, RuntimeError> {
        let Some(next) = self.script.get(self.position) else {
            return Ok(GenStep {
                token: self.eos.clone(),
                seg_prompt: None,
            });
        };
        self.position += 1;
        Ok(GenStep {
            token: next.token.clone(),
            seg_prompt: next.state.clone().map(SegPrompt),
        })
    }

    fn eos_token(&self) -> &str {
        &self.eos
    }
}

/// Looks masks up by `(prompt, image_index)`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMaskDecoder {
    masks: BTreeMap<(String, usize), BinaryMask>,
}

impl ScriptedMaskDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: impl Into<String>, image_index: usize, mask: BinaryMask) {
        self.masks.insert((prompt.into(), image_index), mask);
    }

    pub fn with(mut self, prompt: impl Into<String>, image_index: usize, mask: BinaryMask) -> Self {
        self.insert(prompt, image_index, mask);
        self
    }
}

impl MaskDecoder for ScriptedMaskDecoder {
    fn decode(&mut self, prompt: &SegPrompt, image_index: usize) -> Result<BinaryMask, RuntimeError> {
        self.masks
            .get(&(prompt.0.clone(), image_index))
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownSegPrompt {
                prompt: prompt.0.clone(),
                image_index,
            })
    }
}

#[derive(Debug, Clone)]
pub struct ImageFeatures {
    pub layout: PatchLayout,
    pub optical: Option<TokenFeatures>,
    pub sar: Option<TokenFeatures>,
}

/// Precomputed features for a fixed set of images.
#[derive(Debug, Clone, Default)]
pub struct StaticFeatureProvider {
    pub images: Vec<ImageFeatures>,
    pub text: Option<TextEmbeddings>,
}

impl FeatureProvider for StaticFeatureProvider {
    fn image_count(&self) -> usize {
        self.images.len()
    }

    fn layout(&self, image_index: usize) -> Result<PatchLayout, RuntimeError> {
        self.images
            .get(image_index)
            .map(|i| i.layout)
            .ok_or(RuntimeError::MissingFeatures(image_index))
    }

    fn features(&self, image_index: usize, modality: Modality) -> Option<&TokenFeatures> {
        let image = self.images.get(image_index)?;
        match modality {
            Modality::Optical => image.optical.as_ref(),
            Modality::Sar => image.sar.as_ref(),
        }
    }

    fn text_embeddings(&self, _question: &str) -> Option<TextEmbeddings> {
        self.text.clone()
    }
}
