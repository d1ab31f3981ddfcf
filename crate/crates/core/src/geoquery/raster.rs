use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassId, GeoError};

/// Per-pixel class labels with a ground sampling distance.
///
/// Label 0 is background/void; every other label present must have a name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RasterRepr", into = "RasterRepr")]
pub struct SemanticRaster {
    width: usize,
    height: usize,
    /// Meters per pixel.
    resolution: f64,
    labels: Vec<ClassId>,
    class_names: BTreeMap<ClassId, String>,
}

#[derive(Serialize, Deserialize)]
struct RasterRepr {
    width: usize,
    height: usize,
    resolution: f64,
    labels: Vec<ClassId>,
    class_names: BTreeMap<ClassId, String>,
}

impl TryFrom<RasterRepr> for SemanticRaster {
    type Error = GeoError;

    fn try_from(r: RasterRepr) -> Result<Self, GeoError> {
        SemanticRaster::new(r.width, r.height, r.resolution, r.labels, r.class_names)
    }
}

impl From<SemanticRaster> for RasterRepr {
    fn from(r: SemanticRaster) -> Self {
        RasterRepr {
            width: r.width,
            height: r.height,
            resolution: r.resolution,
            labels: r.labels,
            class_names: r.class_names,
        }
    }
}

impl SemanticRaster {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        labels: Vec<ClassId>,
        class_names: BTreeMap<ClassId, String>,
    ) -> Result<Self, GeoError> {
        if width == 0 || height == 0 {
            return Err(GeoError::InvalidRaster(format!("dimensions {width}x{height}")));
        }
        if labels.len() != width * height {
            return Err(GeoError::InvalidRaster(format!(
                "{} labels for a {width}x{height} grid",
                labels.len()
            )));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(GeoError::InvalidRaster(format!("resolution {resolution}")));
        }
        if class_names.contains_key(&0) {
            return Err(GeoError::InvalidRaster("class 0 is reserved for background".into()));
        }
        if let Some(&missing) = labels.iter().find(|&&l| l != 0 && !class_names.contains_key(&l)) {
            return Err(GeoError::InvalidRaster(format!("label {missing} has no class name")));
        }
        Ok(Self {
            width,
            height,
            resolution,
            labels,
            class_names,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, GeoError> {
        serde_json::from_str(text).map_err(|e| GeoError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("raster serializes")
    }

    /// Decode an 8-bit grayscale image (PGM/PPM/PNG) whose pixel values are
    /// class ids. Classes without a name in `class_names` get `class_<id>`.
    pub fn from_image_bytes(
        bytes: &[u8],
        resolution: f64,
        mut class_names: BTreeMap<ClassId, String>,
    ) -> Result<Self, GeoError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| GeoError::Parse(e.to_string()))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let labels: Vec<ClassId> = img.into_raw().into_iter().map(ClassId::from).collect();
        for &l in &labels {
            if l != 0 {
                class_names.entry(l).or_insert_with(|| format!("class_{l}"));
            }
        }
        Self::new(w, h, resolution, labels, class_names)
    }

    /// Binary PGM with one byte per label; ids above 255 do not fit.
    pub fn to_pgm_bytes(&self) -> Result<Vec<u8>, GeoError> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;
        let bytes: Vec<u8> = self
            .labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| GeoError::InvalidRaster(format!("label {l} exceeds 255"))))
            .collect::<Result<_, _>>()?;
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(
                &bytes,
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::L8,
            )
            .map_err(|e| GeoError::InvalidRaster(e.to_string()))?;
        Ok(out)
    }

    /// Load `.json` grids directly; other extensions are decoded as images,
    /// with resolution and names taken from a `<stem>.meta.json` sidecar
    /// (`{"resolution": 10.0, "class_names": {"1": "forest"}}`) when present.
    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let io = |e: std::io::Error| GeoError::Parse(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_json(&std::fs::read_to_string(path).map_err(io)?);
        }
        #[derive(Deserialize)]
        struct Meta {
            resolution: f64,
            #[serde(default)]
            class_names: BTreeMap<ClassId, String>,
        }
        let sidecar = path.with_extension("meta.json");
        let meta = if sidecar.exists() {
            serde_json::from_str::<Meta>(&std::fs::read_to_string(&sidecar).map_err(io)?)
                .map_err(|e| GeoError::Parse(format!("{}: {e}", sidecar.display())))?
        } else {
            Meta {
                resolution: 10.0,
                class_names: BTreeMap::new(),
            }
        };
        Self::from_image_bytes(&std::fs::read(path).map_err(io)?, meta.resolution, meta.class_names)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> ClassId {
        self.labels[y * self.width + x]
    }

    pub fn class_names(&self) -> &BTreeMap<ClassId, String> {
        &self.class_names
    }

    pub fn class_name(&self, id: ClassId) -> Option<&str> {
        self.class_names.get(&id).map(String::as_str)
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_names
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(&id, _)| id)
    }

    /// Pixel count of one class.
    pub fn pixel_count(&self, id: ClassId) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }

    /// Pixel counts of every named class, including absent ones.
    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts: BTreeMap<ClassId, usize> = self.class_names.keys().map(|&k| (k, 0)).collect();
        for &l in &self.labels {
            if l != 0 {
                *counts.entry(l).or_default() += 1;
            }
        }
        counts
    }

    /// Pixels with a nonzero label.
    pub fn valid_pixel_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Same raster with class ids renamed through `map` (names carried along).
    pub fn relabel(&self, map: &BTreeMap<ClassId, ClassId>) -> Result<Self, GeoError> {
        let lookup = |l: ClassId| if l == 0 { 0 } else { *map.get(&l).unwrap_or(&l) };
        let labels = self.labels.iter().map(|&l| lookup(l)).collect();
        let class_names = self.class_names.iter().map(|(&k, v)| (lookup(k), v.clone())).collect();
        Self::new(self.width, self.height, self.resolution, labels, class_names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(pairs: &[(ClassId, &str)]) -> BTreeMap<ClassId, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn json_round_trip() {
        let r = SemanticRaster::new(2, 2, 10.0, vec![0, 1, 2, 1], names(&[(1, "forest"), (2, "water")])).unwrap();
        let text = r.to_json();
        assert!(text.contains(r#""class_names":{"1":"forest","2":"water"}"#));
        assert_eq!(SemanticRaster::from_json(&text).unwrap(), r);
    }

    #[test]
    fn validation() {
        assert!(SemanticRaster::new(2, 2, 10.0, vec![0, 1, 0], names(&[(1, "a")])).is_err());
        assert!(SemanticRaster::new(2, 1, 0.0, vec![0, 1], names(&[(1, "a")])).is_err());
        assert!(SemanticRaster::new(2, 1, 1.0, vec![0, 3], names(&[(1, "a")])).is_err());
        assert!(
            SemanticRaster::from_json(r#"{"width":1,"height":1,"resolution":1,"labels":[5],"class_names":{}}"#)
                .is_err()
        );
    }

    #[test]
    fn pgm_labels() {
        let pgm = b"P5\n3 2\n255\n\x00\x01\x01\x02\x02\x02";
        let r = SemanticRaster::from_image_bytes(pgm, 10.0, names(&[(1, "forest")])).unwrap();
        assert_eq!((r.width(), r.height()), (3, 2));
        assert_eq!(r.class_name(2), Some("class_2"));
        assert_eq!(r.pixel_count(2), 3);
        assert_eq!(r.valid_pixel_count(), 5);
        let back = SemanticRaster::from_image_bytes(&r.to_pgm_bytes().unwrap(), 10.0, r.class_names().clone()).unwrap();
        assert_eq!(back, r);
    }
}
