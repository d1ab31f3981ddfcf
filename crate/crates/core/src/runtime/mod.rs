//! Interleaved text generation with `[SEG]`-triggered mask decoding.
//!
//! [`run_inference`] drives a [`TextGenerator`] one token at a time. When
//! the generator emits the segmentation token, the loop
//!
//! 1. resolves the target image from the latest `Image: t<k>` marker,
//! 2. asks the [`MaskDecoder`] for a mask using the generator's opaque
//!    [`SegPrompt`],
//! 3. reduces the mask to tile tokens (coverage > 1/2) and caps the
//!    selection with spatial uniform sampling,
//! 4. gathers the selected features, choosing optical or SAR per token when
//!    the image has both (relevance computed once, before generation),
//! 5. appends those features to the context and keeps generating.
//!
//! Only generated text tokens count toward `max_tokens`.

mod prompt;
pub mod scenario;
mod scripted;

pub use prompt::{
    answer_span, assemble_prompt, extract_answer, parse_temporal_indicator, resolve_image_index, SYSTEM_PROMPT,
};
pub use scenario::Scenario;
pub use scripted::{ImageFeatures, ScriptStep, ScriptedGenerator, ScriptedMaskDecoder, StaticFeatureProvider};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    downsample_mask, extract_features, spatial_uniform_sample, FeatureSequence, GridError, PatchLayout, TokenFeatures,
    TokenSelection, DEFAULT_TOKEN_CAP,
};
use crate::modality::{
    fuse_features, relevance_scores, select_modality, Modality, ModalityError, RelevanceField, TextEmbeddings,
};
use crate::raster::{rle_decode, rle_encode, BinaryMask, MaskError, RleMask};

pub const SEG_TOKEN: &str = "[SEG]";
pub const DEFAULT_EOS: &str = "<|end|>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("feature provider has no images")]
    NoImages,
    #[error("temporal indicator t{k} out of range for {image_count} image(s)")]
    TemporalOutOfRange { k: u32, image_count: usize },
    #[error("generator emitted {SEG_TOKEN} without a prompt state")]
    MissingSegPrompt,
    #[error("mask decoder returned {got_w}x{got_h} for image {image_index} of size {want_w}x{want_h}")]
    DecoderDimensionMismatch {
        image_index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("image {0} has no features")]
    MissingFeatures(usize),
    #[error("image {image_index} {modality:?} features have {got} tokens, layout expects {want}")]
    FeatureCountMismatch {
        image_index: usize,
        modality: Modality,
        got: usize,
        want: usize,
    },
    #[error("image {0} has optical and SAR features but no question embeddings were provided")]
    MissingTextEmbeddings(usize),
    #[error("mask decoder has no mask for prompt {prompt:?} on image {image_index}")]
    UnknownSegPrompt { prompt: String, image_index: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Modality(#[from] ModalityError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Opaque state handed from the generator to the mask decoder. Stands in
/// for the hidden state of the segmentation token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegPrompt(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct GenStep {
    pub token: String,
    pub seg_prompt: Option<SegPrompt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextItem {
    Prompt(String),
    Text(String),
    Visual { step: usize, rows: Vec<Vec<f64>> },
}

/// Everything the generator has seen so far. Append-only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Context {
    items: Vec<ContextItem>,
}

impl Context {
    pub fn items(&self) -> &[ContextItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn push(&mut self, item: ContextItem) {
        self.items.push(item);
    }
}

pub trait TextGenerator {
    fn step(&mut self, context: &Context) -> Result<GenStep, RuntimeError>;
    fn eos_token(&self) -> &str;
}

pub trait MaskDecoder {
    /// Mask for `image_index`; must match that image's dimensions.
    fn decode(&mut self, prompt: &SegPrompt, image_index: usize) -> Result<BinaryMask, RuntimeError>;
}

pub trait FeatureProvider {
    fn image_count(&self) -> usize;
    fn layout(&self, image_index: usize) -> Result<PatchLayout, RuntimeError>;
    /// `None` when the image was not captured in this modality.
    fn features(&self, image_index: usize, modality: Modality) -> Option<&TokenFeatures>;
    fn text_embeddings(&self, question: &str) -> Option<TextEmbeddings>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Generated text tokens before the run is cut off.
    pub max_tokens: usize,
    /// Upper bound on injected visual tokens per segmentation step.
    pub token_cap: usize,
    pub seg_token: String,
    pub think_open: String,
    pub think_close: String,
    pub answer_open: String,
    pub answer_close: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_tokens: 1024,
            token_cap: DEFAULT_TOKEN_CAP,
            seg_token: SEG_TOKEN.to_string(),
            think_open: "<think>".into(),
            think_close: "</think>".into(),
            answer_open: "<answer>".into(),
            answer_close: "</answer>".into(),
        }
    }
}

impl GenerationConfig {
    fn validate(&self) -> Result<(), RuntimeError> {
        if self.max_tokens == 0 {
            return Err(RuntimeError::InvalidConfig("max_tokens must be >= 1".into()));
        }
        if self.token_cap == 0 {
            return Err(RuntimeError::InvalidConfig("token_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Text {
        token: String,
    },
    Seg {
        step: usize,
        /// 0-based position of the segmented image.
        image_index: usize,
        /// The `k` of the `Image: t<k>` marker that routed this step.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temporal: Option<u32>,
        mask: RleMask,
        selection: TokenSelection,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modality: Option<Vec<Modality>>,
    },
    Inject {
        step: usize,
        count: usize,
        rows: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub events: Vec<TraceEvent>,
    pub answer: String,
    pub masks: Vec<RleMask>,
    /// Generation hit `max_tokens` before the end token.
    #[serde(default)]
    pub truncated: bool,
    /// A segmentation step happened inside the answer tags.
    #[serde(default)]
    pub seg_in_answer: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceViolation {
    #[error("event {0}: seg step is not followed by its inject event")]
    SegWithoutInject(usize),
    #[error("event {0}: inject event without a preceding seg step")]
    OrphanInject(usize),
    #[error("event {index}: step {got}, expected {want}")]
    StepNumbering { index: usize, got: usize, want: usize },
    #[error("event {index}: {count} injected tokens exceed the cap of {cap}")]
    OverCap { index: usize, count: usize, cap: usize },
    #[error("event {0}: inject count disagrees with its selection or rows")]
    CountMismatch(usize),
    #[error("masks list does not mirror the seg events")]
    MaskListMismatch,
}

impl ReasoningTrace {
    /// Concatenated text tokens.
    pub fn text(&self) -> String {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Text { token } => Some(token.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn seg_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Seg { .. }))
            .count()
    }

    /// `(image_index, mask)` for each segmentation step.
    pub fn grounded_masks(&self) -> Vec<(usize, RleMask)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Seg { image_index, mask, .. } => Some((*image_index, mask.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    /// Structural checks: seg/inject adjacency, step numbering, cap.
    pub fn validate(&self, token_cap: usize) -> Result<(), TraceViolation> {
        let mut want_step = 1;
        let mut pending: Option<(usize, usize)> = None;
        for (i, event) in self.events.iter().enumerate() {
            match event {
                TraceEvent::Seg {
                    step,
                    selection,
                    modality,
                    ..
                } => {
                    if pending.is_some() {
                        return Err(TraceViolation::SegWithoutInject(i - 1));
                    }
                    if *step != want_step {
                        return Err(TraceViolation::StepNumbering {
                            index: i,
                            got: *step,
                            want: want_step,
                        });
                    }
                    if modality.as_ref().is_some_and(|m| m.len() != selection.len()) {
                        return Err(TraceViolation::CountMismatch(i));
                    }
                    want_step += 1;
                    pending = Some((*step, selection.len()));
                }
                TraceEvent::Inject { step, count, rows } => {
                    let Some((seg_step, sel_len)) = pending.take() else {
                        return Err(TraceViolation::OrphanInject(i));
                    };
                    if *step != seg_step {
                        return Err(TraceViolation::StepNumbering {
                            index: i,
                            got: *step,
                            want: seg_step,
                        });
                    }
                    if *count != sel_len || rows.len() != *count {
                        return Err(TraceViolation::CountMismatch(i));
                    }
                    if *count > token_cap {
                        return Err(TraceViolation::OverCap {
                            index: i,
                            count: *count,
                            cap: token_cap,
                        });
                    }
                }
                TraceEvent::Text { .. } => {
                    if pending.is_some() {
                        return Err(TraceViolation::SegWithoutInject(i - 1));
                    }
                }
            }
        }
        if pending.is_some() {
            return Err(TraceViolation::SegWithoutInject(self.events.len() - 1));
        }
        let seg_masks: Vec<&RleMask> = self
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Seg { mask, .. } => Some(mask),
                _ => None,
            })
            .collect();
        if seg_masks.len() != self.masks.len() || seg_masks.iter().zip(&self.masks).any(|(a, b)| *a != b) {
            return Err(TraceViolation::MaskListMismatch);
        }
        Ok(())
    }
}

/// Relevance fields of every image that has both modalities.
fn prefill_relevance(
    feat: &dyn FeatureProvider,
    question: &str,
) -> Result<Vec<Option<(RelevanceField, RelevanceField)>>, RuntimeError> {
    let mut text: Option<TextEmbeddings> = None;
    let mut out = Vec::with_capacity(feat.image_count());
    for i in 0..feat.image_count() {
        let layout = feat.layout(i)?;
        for modality in [Modality::Optical, Modality::Sar] {
            if let Some(f) = feat.features(i, modality) {
                if f.count() != layout.token_count() {
                    return Err(RuntimeError::FeatureCountMismatch {
                        image_index: i,
                        modality,
                        got: f.count(),
                        want: layout.token_count(),
                    });
                }
            }
        }
        match (feat.features(i, Modality::Optical), feat.features(i, Modality::Sar)) {
            (Some(opt), Some(sar)) => {
                if text.is_none() {
                    text = Some(
                        feat.text_embeddings(question)
                            .ok_or(RuntimeError::MissingTextEmbeddings(i))?,
                    );
                }
                let q = text.as_ref().unwrap();
                out.push(Some((
                    relevance_scores(opt, q, Modality::Optical)?,
                    relevance_scores(sar, q, Modality::Sar)?,
                )));
            }
            (None, None) => return Err(RuntimeError::MissingFeatures(i)),
            _ => out.push(None),
        }
    }
    Ok(out)
}

/// Gather the injected rows for one selection on one image.
fn gather(
    feat: &dyn FeatureProvider,
    relevance: Option<&(RelevanceField, RelevanceField)>,
    image_index: usize,
    sel: &TokenSelection,
) -> Result<(FeatureSequence, Option<Vec<Modality>>), RuntimeError> {
    let opt = feat.features(image_index, Modality::Optical);
    let sar = feat.features(image_index, Modality::Sar);
    match (opt, sar, relevance) {
        (Some(opt), Some(sar), Some((beta_opt, beta_sar))) => {
            let assign = select_modality(beta_opt, beta_sar, sel)?;
            let rows = fuse_features(&assign, opt, sar, sel)?;
            Ok((rows, Some(assign.choice)))
        }
        (Some(single), None, _) | (None, Some(single), _) => Ok((extract_features(single, sel)?, None)),
        _ => Err(RuntimeError::MissingFeatures(image_index)),
    }
}

pub fn run_inference(
    generator: &mut dyn TextGenerator,
    decoder: &mut dyn MaskDecoder,
    feat: &dyn FeatureProvider,
    question: &str,
    cfg: &GenerationConfig,
) -> Result<ReasoningTrace, RuntimeError> {
    cfg.validate()?;
    let prompt = assemble_prompt(question)?;
    if feat.image_count() == 0 {
        return Err(RuntimeError::NoImages);
    }
    let relevance = prefill_relevance(feat, question)?;

    let mut context = Context::default();
    context.push(ContextItem::Prompt(prompt));
    let mut events = Vec::new();
    let mut masks = Vec::new();
    let mut text = String::new();
    // byte offset in `text` just after each [SEG]
    let mut seg_offsets = Vec::new();
    let mut generated = 0;
    let mut finished = false;
    let mut step = 0;

    while generated < cfg.max_tokens {
        let GenStep { token, seg_prompt } = generator.step(&context)?;
        if token == generator.eos_token() {
            finished = true;
            break;
        }
        generated += 1;
        text.push_str(&token);
        events.push(TraceEvent::Text { token: token.clone() });
        context.push(ContextItem::Text(token.clone()));
        if token != cfg.seg_token {
            continue;
        }

        step += 1;
        seg_offsets.push(text.len());
        let temporal = parse_temporal_indicator(&text);
        let image_index = resolve_image_index(temporal, feat.image_count())?;
        let seg_prompt = seg_prompt.ok_or(RuntimeError::MissingSegPrompt)?;
        let layout = feat.layout(image_index)?;
        let mask = decoder.decode(&seg_prompt, image_index)?;
        if mask.width() != layout.image_width || mask.height() != layout.image_height {
            return Err(RuntimeError::DecoderDimensionMismatch {
                image_index,
                got_w: mask.width(),
                got_h: mask.height(),
                want_w: layout.image_width,
                want_h: layout.image_height,
            });
        }
        let tok = downsample_mask(&mask, &layout)?;
        let selection = spatial_uniform_sample(&tok, cfg.token_cap);
        let (rows, modality) = gather(feat, relevance[image_index].as_ref(), image_index, &selection)?;
        let rle = rle_encode(&mask);
        masks.push(rle.clone());
        events.push(TraceEvent::Seg {
            step,
            image_index,
            temporal,
            mask: rle,
            selection,
            modality,
        });
        events.push(TraceEvent::Inject {
            step,
            count: rows.len(),
            rows: rows.rows.clone(),
        });
        context.push(ContextItem::Visual { step, rows: rows.rows });
    }

    let span = answer_span(&text, &cfg.answer_open, &cfg.answer_close);
    let answer = span.map(|(s, e)| text[s..e].trim().to_string()).unwrap_or_default();
    let seg_in_answer = span.is_some_and(|(s, e)| seg_offsets.iter().any(|&o| o > s && o <= e));
    Ok(ReasoningTrace {
        id: None,
        events,
        answer,
        masks,
        truncated: !finished,
        seg_in_answer,
    })
}

/// Recompute every injection of `trace` from its recorded masks and check
/// that selections, modality choices and rows all agree.
pub fn verify_injections(
    trace: &ReasoningTrace,
    feat: &dyn FeatureProvider,
    question: &str,
    cfg: &GenerationConfig,
) -> Result<bool, RuntimeError> {
    let relevance = prefill_relevance(feat, question)?;
    let mut events = trace.events.iter().peekable();
    while let Some(event) = events.next() {
        let TraceEvent::Seg {
            image_index,
            mask,
            selection,
            modality,
            ..
        } = event
        else {
            continue;
        };
        let Some(TraceEvent::Inject { rows, .. }) = events.peek() else {
            return Ok(false);
        };
        let layout = feat.layout(*image_index)?;
        let dense = rle_decode(mask)?;
        let expected_sel = spatial_uniform_sample(&downsample_mask(&dense, &layout)?, cfg.token_cap);
        if &expected_sel != selection {
            return Ok(false);
        }
        let (expected_rows, expected_modality) =
            gather(feat, relevance[*image_index].as_ref(), *image_index, selection)?;
        if &expected_rows.rows != rows || &expected_modality != modality {
            return Ok(false);
        }
    }
    Ok(true)
}
