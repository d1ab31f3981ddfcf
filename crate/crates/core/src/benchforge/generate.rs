use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    letter_index, make_options, render_value, stable_hash, BenchError, BenchSample, GtMask, ImageRef, QuestionTemplate,
    Task,
};
use crate::geoquery::{
    self, building_change, class_mask, AnswerKind, AnswerValue, BuildingSet, ClassId, FootprintFile, SemanticRaster,
    SpatialAnswer, Units,
};
use crate::modality::Modality;
use crate::raster::{BinaryMask, RleMask};

/// A land-cover raster and the path it is referenced by in samples.
#[derive(Debug, Clone)]
pub struct RasterSource {
    pub path: String,
    pub raster: SemanticRaster,
    pub modality: Modality,
}

#[derive(Debug, Clone)]
pub struct FootprintSource {
    pub path: String,
    pub footprints: FootprintFile,
}

#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub rasters: Vec<RasterSource>,
    pub footprints: Vec<FootprintSource>,
}

fn stem(path: &str) -> &str {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    name.split('.').next().unwrap_or(name)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_footprints(path: &Path) -> Result<FootprintFile, BenchError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    FootprintFile::from_json(&text).map_err(|e| BenchError::Parse {
        path: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct ModalityMeta {
    #[serde(default)]
    modality: Option<Modality>,
}

/// Scan a directory: `*.buildings.json` are footprint files, `*.meta.json`
/// are raster sidecars, other `.json`/`.pgm`/`.ppm`/`.png` files are rasters.
/// Files are taken in name order; paths in samples are relative to `dir`.
pub fn load_sources(dir: &Path) -> Result<Sources, BenchError> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut sources = Sources::default();
    for path in names {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let lower = name.to_ascii_lowercase();
        if lower.ends_with(".meta.json") {
            continue;
        }
        if lower.ends_with(".buildings.json") {
            sources.footprints.push(FootprintSource {
                path: name,
                footprints: load_footprints(&path)?,
            });
        } else if [".json", ".pgm", ".ppm", ".png"].iter().any(|e| lower.ends_with(e)) {
            let raster = SemanticRaster::load(&path).map_err(|e| BenchError::Parse {
                path: path.display().to_string(),
                line: 1,
                message: e.to_string(),
            })?;
            let sidecar = path.with_extension("meta.json");
            let modality = std::fs::read_to_string(&sidecar)
                .ok()
                .and_then(|t| serde_json::from_str::<ModalityMeta>(&t).ok())
                .and_then(|m| m.modality)
                .unwrap_or(Modality::Optical);
            sources.rasters.push(RasterSource {
                path: name,
                raster,
                modality,
            });
        }
    }
    if sources.rasters.is_empty() && sources.footprints.is_empty() {
        return Err(BenchError::EmptyInput(dir.display().to_string()));
    }
    Ok(sources)
}

fn rle(mask: &BinaryMask) -> RleMask {
    RleMask::from(mask)
}

fn class_gt(raster: &SemanticRaster, id: ClassId, role: &str) -> Result<GtMask, BenchError> {
    Ok(GtMask {
        role: role.to_string(),
        image_index: 0,
        mask: rle(&class_mask(raster, id)?),
    })
}

/// Answer and ground-truth masks for a land-cover question. `Ok(None)` when
/// the answer fails its validity filter.
fn raster_query(
    raster: &SemanticRaster,
    task: Task,
    classes: &[ClassId],
) -> Result<Option<(SpatialAnswer, Vec<GtMask>)>, BenchError> {
    let answer = match (task, classes) {
        (Task::Coverage, &[c]) => geoquery::coverage_percentage(raster, c)?,
        (Task::Area, &[c]) => geoquery::area(raster, c)?,
        (Task::Existence, &[c]) => geoquery::existence(raster, c)?,
        (Task::Localization, &[c]) => {
            let cov = geoquery::coverage_percentage(raster, c)?;
            if !cov.valid {
                return Ok(None);
            }
            geoquery::locate(raster, c)?
        }
        (Task::Ranking, &[a, b]) => geoquery::compare_pair(raster, a, b)?,
        (Task::Adjacency, &[a, b]) => geoquery::adjacency(raster, a, b)?,
        (Task::Distance, &[a, b]) => geoquery::min_distance(raster, a, b)?,
        _ => return Ok(None),
    };
    if !answer.valid {
        return Ok(None);
    }
    let masks = match *classes {
        [c] if raster.pixel_count(c) > 0 => vec![class_gt(raster, c, "target")?],
        [_] => vec![],
        [a, b] => vec![class_gt(raster, a, "class1")?, class_gt(raster, b, "class2")?],
        _ => vec![],
    };
    Ok(Some((answer, masks)))
}

fn sample_seed(seed: u64, id: &str) -> u64 {
    seed ^ stable_hash(id).rotate_left(17)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    id: String,
    task: Task,
    question: String,
    images: Vec<ImageRef>,
    classes: Vec<ClassId>,
    gt_masks: Vec<GtMask>,
    source: SpatialAnswer,
    seed: u64,
) -> Result<BenchSample, BenchError> {
    let (options, answer) = make_options(&source, sample_seed(seed, &id))?;
    Ok(BenchSample {
        id,
        task,
        question,
        options,
        answer,
        images,
        classes,
        gt_masks,
        source,
    })
}

/// Ordered class pairs for two-class tasks; order within a pair is flipped
/// by a stable hash of path and ids.
fn class_pairs(raster: &SemanticRaster, path: &str, task: Task) -> Vec<[ClassId; 2]> {
    let present: Vec<ClassId> = raster
        .class_counts()
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .map(|(c, _)| c)
        .collect();
    let mut pairs = Vec::new();
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            let flip = task != Task::Distance && stable_hash(&format!("{path}/{a}/{b}")) & 1 == 1;
            pairs.push(if flip { [b, a] } else { [a, b] });
        }
    }
    pairs
}

/// Every valid single-image question for `templates` on one raster.
pub fn generate_l1(
    source: &RasterSource,
    templates: &[QuestionTemplate],
    seed: u64,
) -> Result<Vec<BenchSample>, BenchError> {
    let raster = &source.raster;
    let image = ImageRef {
        path: source.path.clone(),
        modality: source.modality,
        timestamp: None,
    };
    let mut out = Vec::new();
    let mut per_task: BTreeMap<Task, usize> = BTreeMap::new();
    for template in templates {
        let choices: Vec<Vec<ClassId>> = match template.task.arity() {
            1 => raster.class_names().keys().map(|&c| vec![c]).collect(),
            2 => class_pairs(raster, &source.path, template.task)
                .into_iter()
                .map(|p| p.to_vec())
                .collect(),
            _ => continue,
        };
        for classes in choices {
            let Some((answer, masks)) = raster_query(raster, template.task, &classes)? else {
                continue;
            };
            let names: Vec<&str> = classes.iter().map(|&c| raster.class_name(c).unwrap_or("?")).collect();
            let n = per_task.entry(template.task).or_default();
            let id = format!(
                "{}-{}-{:02}",
                stem(&source.path),
                template.task.code().to_lowercase(),
                *n
            );
            *n += 1;
            out.push(finish(
                id,
                template.task,
                template.fill(&names),
                vec![image.clone()],
                classes,
                masks,
                answer,
                seed,
            )?);
        }
    }
    Ok(out)
}

fn footprint_union(set: &BuildingSet, w: usize, h: usize) -> Result<BinaryMask, BenchError> {
    let all_destroyed = vec![geoquery::DamageLabel::Destroyed; set.len()];
    Ok(building_change(set, &all_destroyed, w, h)?.destroyed_mask)
}

/// Answer and masks for a building question; `Ok(None)` when filtered out.
fn building_query(
    f: &FootprintFile,
    task: Task,
    units: Units,
) -> Result<Option<(SpatialAnswer, Vec<GtMask>)>, BenchError> {
    let set = f.building_set()?;
    if set.is_empty() {
        return Ok(None);
    }
    let change = building_change(&set, set.damage_labels(), f.width, f.height)?;
    let all = GtMask {
        role: "buildings".into(),
        image_index: 0,
        mask: rle(&footprint_union(&set, f.width, f.height)?),
    };
    let answer = match (task, units) {
        (Task::BuildingChange, Units::Percent) => change.answer.clone(),
        (Task::BuildingChange, Units::Count) => SpatialAnswer {
            value: AnswerValue::Number(change.n_destroyed as f64),
            units: Units::Count,
            ..change.answer.clone()
        },
        (Task::Counting, _) => SpatialAnswer {
            kind: AnswerKind::Count,
            value: AnswerValue::Number(set.len() as f64),
            units: Units::Count,
            valid: true,
            reject_reason: None,
        },
        _ => return Ok(None),
    };
    if !answer.valid {
        return Ok(None);
    }
    let masks = if task == Task::Counting {
        vec![all]
    } else {
        vec![
            all,
            GtMask {
                role: "destroyed".into(),
                image_index: 1,
                mask: rle(&change.destroyed_mask),
            },
        ]
    };
    Ok(Some((answer, masks)))
}

fn template_units(t: &QuestionTemplate) -> Units {
    if t.pattern.to_ascii_lowercase().contains("how many") {
        Units::Count
    } else {
        Units::Percent
    }
}

/// Building questions on one pre/post footprint file.
pub fn generate_buildings(
    source: &FootprintSource,
    templates: &[QuestionTemplate],
    seed: u64,
) -> Result<Vec<BenchSample>, BenchError> {
    let images = |task: Task| {
        let pre = ImageRef {
            path: source.path.clone(),
            modality: Modality::Optical,
            timestamp: Some("pre".into()),
        };
        let post = ImageRef {
            timestamp: Some("post".into()),
            ..pre.clone()
        };
        if task == Task::Counting {
            vec![pre]
        } else {
            vec![pre, post]
        }
    };
    let mut out = Vec::new();
    let mut per_task: BTreeMap<Task, usize> = BTreeMap::new();
    for template in templates.iter().filter(|t| t.task.arity() == 0) {
        let Some((answer, masks)) = building_query(&source.footprints, template.task, template_units(template))? else {
            continue;
        };
        let n = per_task.entry(template.task).or_default();
        let id = format!(
            "{}-{}-{:02}",
            stem(&source.path),
            template.task.code().to_lowercase(),
            *n
        );
        *n += 1;
        out.push(finish(
            id,
            template.task,
            template.pattern.clone(),
            images(template.task),
            vec![],
            masks,
            answer,
            seed,
        )?);
    }
    Ok(out)
}

/// Keep a subset whose per-task proportions follow the reference counts.
///
/// The scale is set by the scarcest task relative to its target; each task
/// then keeps `floor(scale * target)` candidates, chosen by stable hash of
/// the sample id (so the kept set does not depend on the seed). Tasks without
/// a reference count are kept whole. Input order is preserved.
pub fn balance_to_distribution(candidates: Vec<BenchSample>) -> Vec<BenchSample> {
    let mut by_task: BTreeMap<Task, Vec<usize>> = BTreeMap::new();
    for (i, s) in candidates.iter().enumerate() {
        by_task.entry(s.task).or_default().push(i);
    }
    let scale = by_task
        .iter()
        .filter_map(|(t, v)| t.reference_count().map(|w| v.len() as f64 / f64::from(w)))
        .fold(f64::INFINITY, f64::min);
    let mut keep = BTreeSet::new();
    for (task, mut idx) in by_task {
        let quota = match task.reference_count() {
            Some(w) => ((scale * f64::from(w)) + 1e-9).floor() as usize,
            None => idx.len(),
        };
        idx.sort_by_key(|&i| (stable_hash(&candidates[i].id), i));
        keep.extend(idx.into_iter().take(quota));
    }
    candidates
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, s)| s)
        .collect()
}

/// Generate, filter to `tasks`, and optionally balance.
pub fn build_benchmark(
    sources: &Sources,
    templates: &[QuestionTemplate],
    tasks: &[Task],
    seed: u64,
    balance: bool,
) -> Result<Vec<BenchSample>, BenchError> {
    let templates: Vec<QuestionTemplate> = templates.iter().filter(|t| tasks.contains(&t.task)).cloned().collect();
    let mut all = Vec::new();
    for r in &sources.rasters {
        all.extend(generate_l1(r, &templates, seed)?);
    }
    for f in &sources.footprints {
        all.extend(generate_buildings(f, &templates, seed)?);
    }
    Ok(if balance { balance_to_distribution(all) } else { all })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub total: usize,
    pub per_task: BTreeMap<Task, usize>,
    /// Option count -> number of samples.
    pub option_histogram: BTreeMap<usize, usize>,
}

impl BenchStats {
    pub fn from_samples(samples: &[BenchSample]) -> Self {
        let mut stats = BenchStats {
            total: samples.len(),
            ..Default::default()
        };
        for s in samples {
            *stats.per_task.entry(s.task).or_default() += 1;
            *stats.option_histogram.entry(s.options.len()).or_default() += 1;
        }
        stats
    }

    /// Share of each task, in [0, 1].
    pub fn proportions(&self) -> BTreeMap<Task, f64> {
        self.per_task
            .iter()
            .map(|(&t, &n)| (t, n as f64 / self.total.max(1) as f64))
            .collect()
    }
}

/// Write samples as JSON lines.
pub fn assemble_benchmark(samples: &[BenchSample], out_path: &Path) -> Result<BenchStats, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::EmptySamples);
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(out_path).map_err(io_err(out_path))?);
    for s in samples {
        writeln!(file, "{}", s.to_json_line()).map_err(io_err(out_path))?;
    }
    file.flush().map_err(io_err(out_path))?;
    Ok(BenchStats::from_samples(samples))
}

pub fn read_benchmark(path: &Path) -> Result<Vec<BenchSample>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BenchError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Recompute a sample from its source file under `root` and check the stored
/// answer, the rendered correct option, option shape, and masks.
pub fn verify_sample(sample: &BenchSample, root: &Path) -> Result<bool, BenchError> {
    let Some(image) = sample.images.first() else {
        return Ok(false);
    };
    let path = root.join(&image.path);
    let fresh = if sample.task.arity() == 0 {
        building_query(&load_footprints(&path)?, sample.task, sample.source.units)?
    } else {
        let raster = SemanticRaster::load(&path)?;
        raster_query(&raster, sample.task, &sample.classes)?
    };
    let Some((answer, masks)) = fresh else {
        return Ok(false);
    };
    let want_options = if sample.task.is_binary() { 2 } else { 4 };
    let distinct: BTreeSet<&String> = sample.options.iter().collect();
    let rendered = match &answer.value {
        AnswerValue::Number(v) => render_value(*v, answer.units),
        AnswerValue::Boolean(b) => (if *b { "Yes" } else { "No" }).to_string(),
        AnswerValue::Label(l) => l.clone(),
        _ => return Ok(false),
    };
    Ok(answer == sample.source
        && masks == sample.gt_masks
        && sample.options.len() == want_options
        && distinct.len() == want_options
        && letter_index(sample.answer).is_some_and(|i| i < want_options)
        && sample.correct_option() == Some(rendered.as_str())
        && sample.options.iter().filter(|o| **o == rendered).count() == 1)
}
