//! Seeded synthetic scenes used as bundled fixtures and in tests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geoquery::{BuildingRecord, ClassId, DamageLabel, FootprintFile, SemanticRaster};

pub const LAND_COVER_CLASSES: [(ClassId, &str); 7] = [
    (1, "cropland"),
    (2, "forest"),
    (3, "water"),
    (4, "grassland"),
    (5, "built-up area"),
    (6, "bare soil"),
    (7, "wetland"),
];

/// A matrix class with rectangular patches of other classes, an occasional
/// void strip and a few isolated noise pixels. 10 m resolution.
pub fn land_cover_scene(seed: u64, width: usize, height: usize) -> SemanticRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<ClassId> = LAND_COVER_CLASSES.iter().map(|c| c.0).collect();
    ids.shuffle(&mut rng);
    let matrix = ids[0];
    let mut labels = vec![matrix; width * height];
    let patches = rng.gen_range(3..=5).min(ids.len() - 1);
    let side = width.min(height);
    for &class in &ids[1..=patches] {
        for _ in 0..rng.gen_range(1..=2) {
            let pw = rng.gen_range(side / 8..=side * 3 / 10).max(3);
            let ph = rng.gen_range(side / 8..=side * 3 / 10).max(3);
            let x0 = rng.gen_range(0..width.saturating_sub(pw).max(1));
            let y0 = rng.gen_range(0..height.saturating_sub(ph).max(1));
            for y in y0..(y0 + ph).min(height) {
                for x in x0..(x0 + pw).min(width) {
                    labels[y * width + x] = class;
                }
            }
        }
    }
    if rng.gen_bool(0.25) {
        let rows = rng.gen_range(1..=height / 10 + 1);
        labels[..rows * width].fill(0);
    }
    for _ in 0..rng.gen_range(0..6) {
        let i = rng.gen_range(0..width * height);
        labels[i] = ids[rng.gen_range(0..=patches)];
    }
    let names: BTreeMap<ClassId, String> = LAND_COVER_CLASSES
        .iter()
        .filter(|(id, _)| *id == matrix || ids[1..=patches].contains(id))
        .map(|(id, n)| (*id, n.to_string()))
        .collect();
    SemanticRaster::new(width, height, 10.0, labels, names).expect("synthetic raster is well formed")
}

/// Rectangular footprints on a jittered 8 px lattice with a scene-wide
/// destruction rate.
pub fn building_scene(seed: u64, width: usize, height: usize) -> FootprintFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cols, rows) = (width / 8, height / 8);
    let mut cells: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (c, r))).collect();
    cells.shuffle(&mut rng);
    let n = rng.gen_range(9..=24).min(cells.len());
    let rate = rng.gen_range(0.1..0.7);
    let other = ["no-damage", "minor-damage", "major-damage"];
    let buildings = cells[..n]
        .iter()
        .map(|&(c, r)| {
            let x0 = (c * 8 + rng.gen_range(1..=2)) as f64;
            let y0 = (r * 8 + rng.gen_range(1..=2)) as f64;
            let (w, h) = (rng.gen_range(2..=4) as f64, rng.gen_range(2..=4) as f64);
            let label = if rng.gen_bool(rate) {
                DamageLabel::Destroyed
            } else {
                DamageLabel::from(other[rng.gen_range(0..3)].to_string())
            };
            BuildingRecord {
                polygon: vec![[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]],
                label,
            }
        })
        .collect();
    FootprintFile {
        width,
        height,
        buildings,
    }
}
