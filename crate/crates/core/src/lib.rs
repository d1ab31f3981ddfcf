//! Pixel-grounded reasoning mechanics for earth-observation imagery.
//!
//! The crate is organised bottom-up:
//!
//! * [`raster`]: binary masks, RLE codec, connectivity, morphology, exact EDT
//! * [`grid`]: patch/token accounting and mask-to-token selection
//! * [`modality`]: text-guided optical/SAR relevance and per-token fusion
//! * [`runtime`]: the interleaved generate/segment/inject inference loop
//! * [`geoquery`]: rule-based answers from semantic rasters
//! * [`benchforge`]: multiple-choice sample synthesis
//! * [`evalharness`]: option extraction, accuracy, grounding IoU, correlation
//! * [`losses`]: LM, Dice and pixel cross-entropy objectives with gradients

pub mod benchforge;
pub mod evalharness;
pub mod geoquery;
pub mod grid;
pub mod losses;
pub mod modality;
pub mod raster;
pub mod runtime;
