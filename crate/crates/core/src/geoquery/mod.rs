//! Rule-based answers from per-pixel class labels.
//!
//! Each query returns a [`SpatialAnswer`]. Queries that are well-formed but
//! fail a validity filter (too small, ambiguous, trivially adjacent, ...)
//! still return an answer, marked `valid: false` with a [`RejectReason`];
//! malformed queries (unknown class, identical classes) return an error.

mod polygon;
mod raster;
mod rules;

pub use polygon::{
    building_change, is_self_intersecting, rasterize_polygon, BuildingChange, BuildingRecord, BuildingSet, DamageLabel,
    FootprintFile, Vertex, MIN_BUILDINGS, MIN_DESTROYED,
};
pub use raster::SemanticRaster;
pub use rules::{
    adjacency, area, class_mask, compare_pair, coverage_percentage, existence, locate, min_distance, rank_areas,
    region_count, Region, ADJACENCY_MAX_COMPONENTS, ADJACENCY_MIN_PERCENT, MIN_DISTANCE_PX, SIGNIFICANT_PERCENT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::MaskError;

pub type ClassId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("class 0 is background and cannot be queried")]
    BackgroundClass,
    #[error("unknown class id {0}")]
    UnknownClass(ClassId),
    #[error("class {0} does not occur in the raster")]
    AbsentClass(ClassId),
    #[error("query needs two distinct classes, got {0} twice")]
    IdenticalClasses(ClassId),
    #[error("raster has no valid (non-background) pixels")]
    NoValidPixels,
    #[error("ranking needs at least 2 classes covering >= 5%, found {0}")]
    TooFewEligible(usize),
    #[error("polygon needs at least 3 vertices, got {0}")]
    DegeneratePolygon(usize),
    #[error("polygon {0} is self-intersecting")]
    SelfIntersecting(usize),
    #[error("{polygons} polygons but {labels} damage labels")]
    LabelCountMismatch { polygons: usize, labels: usize },
    #[error("building set is empty")]
    EmptyBuildingSet,
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Area,
    Coverage,
    Ranking,
    Distance,
    Adjacency,
    BuildingChange,
    Existence,
    Count,
    Location,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    SquareMeters,
    Percent,
    Meters,
    Count,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Number(f64),
    Ranking(Vec<ClassId>),
    Boolean(bool),
    Label(String),
    /// The quantity could not be measured (e.g. a region vanished under
    /// opening).
    Undefined,
}

impl AnswerValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AnswerValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AnswerValue::Boolean(b) => Some(*b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ZeroArea,
    BelowSignificance,
    AmbiguousSizes,
    TriviallyAdjacent,
    EmptyAfterOpening,
    RegionTooSmall,
    TooFragmented,
    TooFewBuildings,
    TooFewDestroyed,
}

impl RejectReason {
    pub fn describe(self) -> &'static str {
        match self {
            RejectReason::ZeroArea => "zero area",
            RejectReason::BelowSignificance => "below 5% significance",
            RejectReason::AmbiguousSizes => "ambiguous sizes",
            RejectReason::TriviallyAdjacent => "trivially adjacent (≤10 px)",
            RejectReason::EmptyAfterOpening => "region vanishes under opening",
            RejectReason::RegionTooSmall => "region below 3% coverage",
            RejectReason::TooFragmented => "more than 5 disconnected components",
            RejectReason::TooFewBuildings => "too few buildings",
            RejectReason::TooFewDestroyed => "too few destroyed buildings",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialAnswer {
    pub kind: AnswerKind,
    pub value: AnswerValue,
    pub units: Units,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
}

impl SpatialAnswer {
    pub(crate) fn new(kind: AnswerKind, value: AnswerValue, units: Units) -> Self {
        Self {
            kind,
            value,
            units,
            valid: true,
            reject_reason: None,
        }
    }

    pub(crate) fn reject(mut self, reason: RejectReason) -> Self {
        self.valid = false;
        self.reject_reason = Some(reason);
        self
    }

    pub(crate) fn reject_if(self, cond: bool, reason: RejectReason) -> Self {
        if cond && self.valid {
            self.reject(reason)
        } else {
            self
        }
    }
}
