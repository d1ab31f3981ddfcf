//! Building footprints: polygon rasterization and damage-rate answers.
//!
//! Pixel `(x, y)` has its centre at the integer point `(x, y)`. A pixel is
//! inside a polygon when its centre is inside under the even-odd rule or
//! lies on the boundary.

use serde::{Deserialize, Serialize};

use super::{AnswerKind, AnswerValue, GeoError, RejectReason, SpatialAnswer, Units};
use crate::raster::BinaryMask;

pub const MIN_BUILDINGS: usize = 10;
pub const MIN_DESTROYED: usize = 3;

const EPS: f64 = 1e-9;

pub type Vertex = [f64; 2];

/// Even-odd scanline fill of `poly` over pixel centres, clipped to the image.
pub fn rasterize_polygon(poly: &[Vertex], width: usize, height: usize) -> Result<BinaryMask, GeoError> {
    if poly.len() < 3 {
        return Err(GeoError::DegeneratePolygon(poly.len()));
    }
    let mut mask = BinaryMask::new(width, height)?;
    fill_into(&mut mask, poly);
    Ok(mask)
}

fn edges(poly: &[Vertex]) -> impl Iterator<Item = (Vertex, Vertex)> + '_ {
    (0..poly.len()).map(move |i| (poly[i], poly[(i + 1) % poly.len()]))
}

fn fill_into(mask: &mut BinaryMask, poly: &[Vertex]) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let ys = poly.iter().map(|v| v[1]);
    let y_lo = ys.clone().fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let y_hi = (ys.fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(h - 1);
    let set_span = |mask: &mut BinaryMask, y: i64, xa: f64, xb: f64| {
        let lo = ((xa - EPS).ceil() as i64).max(0);
        let hi = ((xb + EPS).floor() as i64).min(w - 1);
        for x in lo..=hi {
            mask.set(x as usize, y as usize, true);
        }
    };

    let mut xs = Vec::new();
    for y in y_lo..=y_hi {
        let yc = y as f64;
        xs.clear();
        for (a, b) in edges(poly) {
            // half-open in y so shared vertices count once
            if (a[1] <= yc && yc < b[1]) || (b[1] <= yc && yc < a[1]) {
                xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            set_span(mask, y, pair[0], pair[1]);
        }
        // centres lying on an edge (covers horizontal and closing edges)
        for (a, b) in edges(poly) {
            if (a[1] - b[1]).abs() < EPS {
                if (a[1] - yc).abs() < EPS {
                    set_span(mask, y, a[0].min(b[0]), a[0].max(b[0]));
                }
            } else if yc >= a[1].min(b[1]) - EPS && yc <= a[1].max(b[1]) + EPS {
                let x = a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                let xr = x.round();
                if (x - xr).abs() < EPS {
                    set_span(mask, y, xr, xr);
                }
            }
        }
    }
}

fn orient(a: Vertex, b: Vertex, c: Vertex) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Vertex, b: Vertex, p: Vertex) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_touch(p1: Vertex, p2: Vertex, q1: Vertex, q2: Vertex) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when two non-adjacent edges meet, or adjacent edges fold back onto
/// each other.
pub fn is_self_intersecting(poly: &[Vertex]) -> bool {
    let n = poly.len();
    let e: Vec<_> = edges(poly).collect();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // shared vertex is fine unless the edges overlap collinearly
                let (shared, other_i, other_j) = if j == i + 1 {
                    (e[i].1, e[i].0, e[j].1)
                } else {
                    (e[i].0, e[i].1, e[j].0)
                };
                if orient(shared, other_i, other_j) == 0.0 {
                    let dot = (other_i[0] - shared[0]) * (other_j[0] - shared[0])
                        + (other_i[1] - shared[1]) * (other_j[1] - shared[1]);
                    if dot > 0.0 {
                        return true;
                    }
                }
            } else if segments_touch(e[i].0, e[i].1, e[j].0, e[j].1) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum DamageLabel {
    Destroyed,
    /// Any other label (no-damage, minor, major, un-classified, ...).
    Other,
}

impl From<String> for DamageLabel {
    fn from(s: String) -> Self {
        if s.trim().eq_ignore_ascii_case("destroyed") {
            DamageLabel::Destroyed
        } else {
            DamageLabel::Other
        }
    }
}

impl From<DamageLabel> for String {
    fn from(l: DamageLabel) -> Self {
        match l {
            DamageLabel::Destroyed => "destroyed".into(),
            DamageLabel::Other => "other".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub polygon: Vec<Vertex>,
    pub label: DamageLabel,
}

/// On-disk footprint file: image size plus building records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintFile {
    pub width: usize,
    pub height: usize,
    pub buildings: Vec<BuildingRecord>,
}

impl FootprintFile {
    pub fn from_json(text: &str) -> Result<Self, GeoError> {
        serde_json::from_str(text).map_err(|e| GeoError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("footprints serialize")
    }

    pub fn building_set(&self) -> Result<BuildingSet, GeoError> {
        BuildingSet::new(
            self.buildings.iter().map(|b| b.polygon.clone()).collect(),
            self.buildings.iter().map(|b| b.label).collect(),
        )
    }
}

/// Validated building polygons with one damage label each.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingSet {
    polygons: Vec<Vec<Vertex>>,
    damage_labels: Vec<DamageLabel>,
}

impl BuildingSet {
    /// Strips a repeated closing vertex, then rejects polygons with fewer
    /// than 3 vertices or crossing edges.
    pub fn new(polygons: Vec<Vec<Vertex>>, damage_labels: Vec<DamageLabel>) -> Result<Self, GeoError> {
        if polygons.len() != damage_labels.len() {
            return Err(GeoError::LabelCountMismatch {
                polygons: polygons.len(),
                labels: damage_labels.len(),
            });
        }
        let mut cleaned = Vec::with_capacity(polygons.len());
        for (i, mut p) in polygons.into_iter().enumerate() {
            if p.len() > 1 && p.first() == p.last() {
                p.pop();
            }
            if p.len() < 3 {
                return Err(GeoError::DegeneratePolygon(p.len()));
            }
            if p.iter().flatten().any(|c| !c.is_finite()) || is_self_intersecting(&p) {
                return Err(GeoError::SelfIntersecting(i));
            }
            cleaned.push(p);
        }
        Ok(Self {
            polygons: cleaned,
            damage_labels,
        })
    }

    pub fn polygons(&self) -> &[Vec<Vertex>] {
        &self.polygons
    }

    pub fn damage_labels(&self) -> &[DamageLabel] {
        &self.damage_labels
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingChange {
    pub answer: SpatialAnswer,
    pub n_total: usize,
    pub n_destroyed: usize,
    /// Union of the destroyed buildings' footprints.
    pub destroyed_mask: BinaryMask,
}

/// Damage rate `100 * destroyed / total` over pre-event footprints, using
/// the post-event labels.
pub fn building_change(
    pre: &BuildingSet,
    post_labels: &[DamageLabel],
    width: usize,
    height: usize,
) -> Result<BuildingChange, GeoError> {
    if pre.is_empty() {
        return Err(GeoError::EmptyBuildingSet);
    }
    if post_labels.len() != pre.len() {
        return Err(GeoError::LabelCountMismatch {
            polygons: pre.len(),
            labels: post_labels.len(),
        });
    }
    let mut destroyed_mask = BinaryMask::new(width, height)?;
    let mut n_destroyed = 0;
    for (poly, label) in pre.polygons().iter().zip(post_labels) {
        if *label == DamageLabel::Destroyed {
            n_destroyed += 1;
            fill_into(&mut destroyed_mask, poly);
        }
    }
    let n_total = pre.len();
    let rate = 100.0 * n_destroyed as f64 / n_total as f64;
    let answer = SpatialAnswer::new(AnswerKind::BuildingChange, AnswerValue::Number(rate), Units::Percent)
        .reject_if(n_total < MIN_BUILDINGS, RejectReason::TooFewBuildings)
        .reject_if(n_destroyed < MIN_DESTROYED, RejectReason::TooFewDestroyed);
    Ok(BuildingChange {
        answer,
        n_total,
        n_destroyed,
        destroyed_mask,
    })
}
