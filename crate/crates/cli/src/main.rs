use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use geoground::benchforge::{self, default_templates, synthetic, Task};
use geoground::evalharness;
use geoground::geoquery::{self, ClassId, FootprintFile, SemanticRaster};
use geoground::losses::{self, ProbMask};
use geoground::raster::{self, BinaryMask, Connectivity, RleMask};
use geoground::runtime::{GenerationConfig, Scenario};

#[derive(Parser)]
#[command(name = "geoground", version, about = "Pixel-grounded geospatial reasoning toolkit")]
struct Cli {
    #[command(flatten)]
    config: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunConfig {
    /// Seed for option order and distractors.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Maximum visual tokens injected per segmentation step.
    #[arg(long, global = true, default_value_t = 128)]
    token_cap: usize,
    /// Weight of the segmentation term in the total loss.
    #[arg(long, global = true, default_value_t = 0.5)]
    lambda_seg: f64,
    /// Comma-separated task names or codes (default: the six benchmark tasks).
    #[arg(long, global = true, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Output path (stdout when omitted, where that makes sense).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a multiple-choice benchmark from a directory of rasters and footprint files.
    BuildBench {
        dir: PathBuf,
        /// Keep every valid candidate instead of balancing task proportions.
        #[arg(long)]
        no_balance: bool,
    },
    /// Score responses (text or traces) against a benchmark file.
    Evaluate {
        bench: PathBuf,
        responses: PathBuf,
        /// Also write per-sample records as JSON lines.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Run a scripted inference scenario and write its trace.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Answer one rule-based question on a raster or footprint file.
    Query {
        source: PathBuf,
        /// coverage, area, distance, ranking, adjacency, building_change, existence, counting, localization
        task: String,
        /// Class names or ids, comma separated.
        #[arg(value_delimiter = ',')]
        classes: Vec<String>,
    },
    /// Mask utilities.
    MaskOps {
        #[command(subcommand)]
        op: MaskOp,
    },
    /// Write the synthetic raster and footprint fixtures.
    MakeFixtures {
        #[arg(long, default_value_t = 80)]
        rasters: usize,
        #[arg(long, default_value_t = 60)]
        buildings: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

#[derive(Subcommand)]
enum MaskOp {
    /// Encode a mask image (nonzero = foreground) as RLE JSON.
    Encode { mask: PathBuf },
    /// Decode RLE JSON to a PGM image (foreground 255).
    Decode { rle: PathBuf },
    /// Area, components, opened area and bounding box.
    Stats { mask: PathBuf },
    /// IoU of two masks.
    Iou { a: PathBuf, b: PathBuf },
    /// Dice, pixel CE and the weighted total for a probability map against a mask.
    Loss {
        /// JSON `{"width","height","probs"}`.
        pred: PathBuf,
        gt: PathBuf,
        /// Language-model loss to add.
        #[arg(long, default_value_t = 0.0)]
        lm: f64,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_mask(path: &Path) -> Result<BinaryMask> {
    if path.extension().is_some_and(|e| e == "json") {
        let rle: RleMask =
            serde_json::from_str(&read(path)?).with_context(|| format!("{}: not an RLE mask", path.display()))?;
        return Ok(rle.decode()?);
    }
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let r = SemanticRaster::from_image_bytes(&bytes, 1.0, BTreeMap::new())
        .with_context(|| format!("{}: not a mask image", path.display()))?;
    Ok(BinaryMask::from_bits(
        r.width(),
        r.height(),
        r.labels().iter().map(|&l| l != 0).collect(),
    )?)
}

fn parse_tasks(names: &[String]) -> Result<Vec<Task>> {
    if names.is_empty() {
        return Ok(Task::BENCH.to_vec());
    }
    names
        .iter()
        .map(|n| Task::parse(n).with_context(|| format!("unknown task {n:?}")))
        .collect()
}

fn build_bench(cfg: &RunConfig, dir: &Path, no_balance: bool) -> Result<()> {
    ensure!(dir.is_dir(), "{} is not a readable directory", dir.display());
    let out = cfg.out.clone().context("build-bench needs --out <file>")?;
    let tasks = parse_tasks(&cfg.tasks)?;
    let sources = benchforge::load_sources(dir)?;
    let samples = benchforge::build_benchmark(&sources, &default_templates(), &tasks, cfg.seed, !no_balance)?;
    ensure!(
        !samples.is_empty(),
        "no valid samples could be generated from {}",
        dir.display()
    );
    let stats = benchforge::assemble_benchmark(&samples, &out)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn evaluate(cfg: &RunConfig, bench: &Path, responses: &Path, records_out: Option<&Path>) -> Result<()> {
    let samples = benchforge::read_benchmark(bench)?;
    let text = read(responses)?;
    let responses = evalharness::parse_responses(&text).map_err(|e| anyhow::anyhow!("{}: {e}", responses.display()))?;
    let (records, report) = evalharness::evaluate(&samples, &responses)?;
    if let Some(path) = records_out {
        let mut body = String::new();
        for r in &records {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))?;
    }
    print!("{}", report.to_table());
    match &cfg.out {
        Some(_) => emit(&cfg.out, &report.to_json())?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, scenario: &Path, max_tokens: Option<usize>) -> Result<()> {
    let scenario =
        Scenario::from_json(&read(scenario)?).with_context(|| format!("{}: malformed scenario", scenario.display()))?;
    let mut base = GenerationConfig {
        token_cap: cfg.token_cap,
        ..GenerationConfig::default()
    };
    if let Some(m) = max_tokens {
        base.max_tokens = m;
    }
    let trace = scenario.run(&base)?;
    trace.validate(cfg.token_cap)?;
    emit(&cfg.out, &format!("{}\n", trace.to_json_line()))?;
    eprintln!(
        "{} segmentation step(s), answer {:?}{}",
        trace.seg_count(),
        trace.answer,
        if trace.truncated { ", truncated" } else { "" }
    );
    Ok(())
}

fn class_ids(raster: &SemanticRaster, classes: &[String]) -> Result<Vec<ClassId>> {
    classes
        .iter()
        .map(|c| {
            raster
                .class_id(c)
                .or_else(|| c.parse().ok())
                .with_context(|| format!("unknown class {c:?}"))
        })
        .collect()
}

fn query(source: &Path, task: &str, classes: &[String]) -> Result<()> {
    let task = Task::parse(task).with_context(|| format!("unknown task {task:?}"))?;
    let answer = if task.arity() == 0 {
        let f = FootprintFile::from_json(&read(source)?)?;
        let set = f.building_set()?;
        let change = geoquery::building_change(&set, set.damage_labels(), f.width, f.height)?;
        serde_json::json!({
            "answer": change.answer,
            "n_total": change.n_total,
            "n_destroyed": change.n_destroyed,
            "destroyed_mask": RleMask::from(&change.destroyed_mask),
        })
    } else {
        let raster = SemanticRaster::load(source)?;
        let ids = class_ids(&raster, classes)?;
        ensure!(
            ids.len() == task.arity() || task == Task::Ranking,
            "{task} needs {} class(es)",
            task.arity()
        );
        let a = match (task, ids.as_slice()) {
            (Task::Coverage, &[c]) => geoquery::coverage_percentage(&raster, c)?,
            (Task::Area, &[c]) => geoquery::area(&raster, c)?,
            (Task::Existence, &[c]) => geoquery::existence(&raster, c)?,
            (Task::Localization, &[c]) => geoquery::locate(&raster, c)?,
            (Task::Counting, &[c]) => geoquery::region_count(&raster, c)?,
            (Task::Ranking, &[]) => geoquery::rank_areas(&raster)?,
            (Task::Ranking, &[a, b]) => geoquery::compare_pair(&raster, a, b)?,
            (Task::Distance, &[a, b]) => geoquery::min_distance(&raster, a, b)?,
            (Task::Adjacency, &[a, b]) => geoquery::adjacency(&raster, a, b)?,
            _ => bail!("{task} does not take {} class(es)", ids.len()),
        };
        serde_json::to_value(a)?
    };
    println!("{}", serde_json::to_string_pretty(&answer)?);
    Ok(())
}

fn pgm_bytes(mask: &BinaryMask) -> Result<Vec<u8>> {
    let names: BTreeMap<ClassId, String> = [(255, "foreground".to_string())].into_iter().collect();
    let labels = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    Ok(SemanticRaster::new(mask.width(), mask.height(), 1.0, labels, names)?.to_pgm_bytes()?)
}

fn mask_op(cfg: &RunConfig, op: &MaskOp) -> Result<()> {
    match op {
        MaskOp::Encode { mask } => emit(
            &cfg.out,
            &format!("{}\n", serde_json::to_string(&RleMask::from(&load_mask(mask)?))?),
        ),
        MaskOp::Decode { rle } => {
            let out = cfg.out.as_ref().context("decode needs --out <file.pgm>")?;
            std::fs::write(out, pgm_bytes(&load_mask(rle)?)?).with_context(|| format!("cannot write {}", out.display()))
        }
        MaskOp::Stats { mask } => {
            let m = load_mask(mask)?;
            let (xs, ys): (BTreeSet<usize>, BTreeSet<usize>) = m.foreground().unzip();
            let stats = serde_json::json!({
                "width": m.width(),
                "height": m.height(),
                "area": m.count(),
                "components_4": raster::connected_components(&m, Connectivity::Four).count,
                "components_8": raster::connected_components(&m, Connectivity::Eight).count,
                "opened_area": raster::open(&m).count(),
                "bbox": xs.first().map(|x0| [*x0, *ys.first().unwrap(), *xs.last().unwrap() + 1, *ys.last().unwrap() + 1]),
            });
            emit(&cfg.out, &format!("{}\n", serde_json::to_string_pretty(&stats)?))
        }
        MaskOp::Iou { a, b } => {
            let v = raster::iou(&load_mask(a)?, &load_mask(b)?)?;
            emit(&cfg.out, &format!("{v}\n"))
        }
        MaskOp::Loss { pred, gt, lm } => {
            #[derive(Deserialize)]
            struct Probs {
                width: usize,
                height: usize,
                probs: Vec<f64>,
            }
            let p: Probs = serde_json::from_str(&read(pred)?)
                .with_context(|| format!("{}: expected width/height/probs", pred.display()))?;
            let p = ProbMask::new(p.width, p.height, p.probs)?;
            let g = load_mask(gt)?;
            let dice = losses::dice_loss(&p, &g)?.loss;
            let ce = losses::pixel_ce(&p, &g)?.loss;
            let total = losses::total_loss(*lm, dice, ce, Some(cfg.lambda_seg))?;
            emit(&cfg.out, &format!("{}\n", serde_json::to_string_pretty(&total)?))
        }
    }
}

#[derive(serde::Serialize)]
struct Sidecar<'a> {
    resolution: f64,
    class_names: &'a BTreeMap<ClassId, String>,
    modality: &'a str,
}

fn make_fixtures(cfg: &RunConfig, rasters: usize, buildings: usize, size: usize) -> Result<()> {
    let dir = cfg.out.clone().context("make-fixtures needs --out <dir>")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for i in 0..rasters {
        let r = synthetic::land_cover_scene(cfg.seed.wrapping_add(i as u64), size, size);
        let stem = format!("landcover_{i:03}");
        std::fs::write(dir.join(format!("{stem}.pgm")), r.to_pgm_bytes()?)?;
        let meta = Sidecar {
            resolution: r.resolution(),
            class_names: r.class_names(),
            modality: "optical",
        };
        std::fs::write(
            dir.join(format!("{stem}.meta.json")),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
    }
    for i in 0..buildings {
        let f = synthetic::building_scene(cfg.seed.wrapping_add(10_000 + i as u64), size, size);
        std::fs::write(dir.join(format!("xbd_{i:03}.buildings.json")), f.to_json() + "\n")?;
    }
    println!(
        "wrote {rasters} rasters and {buildings} footprint files to {}",
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = &cli.config;
    ensure!(
        cfg.lambda_seg >= 0.0 && cfg.lambda_seg.is_finite(),
        "--lambda-seg must be a nonnegative number"
    );
    ensure!(cfg.token_cap > 0, "--token-cap must be positive");
    match &cli.command {
        Command::BuildBench { dir, no_balance } => build_bench(cfg, dir, *no_balance),
        Command::Evaluate {
            bench,
            responses,
            records,
        } => evaluate(cfg, bench, responses, records.as_deref()),
        Command::Simulate { scenario, max_tokens } => simulate(cfg, scenario, *max_tokens),
        Command::Query { source, task, classes } => query(source, task, classes),
        Command::MaskOps { op } => mask_op(cfg, op),
        Command::MakeFixtures {
            rasters,
            buildings,
            size,
        } => make_fixtures(cfg, *rasters, *buildings, *size),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
