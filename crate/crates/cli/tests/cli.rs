use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geoground::benchforge::{read_benchmark, BenchSample};
use geoground::evalharness::{PredMask, Response, TextResponse};
use geoground::runtime::{ReasoningTrace, TraceEvent};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn geoground(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoground"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = geoground(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Build a small benchmark (rasters only, two tasks) into `dir`.
fn small_bench(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("bench-{seed}.jsonl"));
    let src = fixtures().join("bench");
    ok(&[
        "build-bench",
        s(&src),
        "--out",
        s(&out),
        "--seed",
        seed,
        "--tasks",
        "coverage,adjacency",
    ]);
    out
}

fn write_responses(path: &Path, samples: &[BenchSample], with_masks: bool) {
    let body: String = samples
        .iter()
        .map(|s| {
            let masks = if with_masks {
                s.gt_masks
                    .iter()
                    .map(|g| PredMask {
                        image_index: g.image_index,
                        mask: g.mask.clone(),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let r = Response::Text(TextResponse {
                id: s.id.clone(),
                response: format!("The answer is {}.", s.answer),
                masks,
            });
            serde_json::to_string(&r).unwrap() + "\n"
        })
        .collect();
    std::fs::write(path, body).unwrap();
}

fn report(dir: &Path, bench: &Path, responses: &Path) -> serde_json::Value {
    let out = dir.join("report.json");
    ok(&["evaluate", s(bench), s(responses), "--out", s(&out)]);
    serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn build_bench_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_bench(dir.path(), "5");
    let first = std::fs::read(&a).unwrap();
    let b = small_bench(dir.path(), "5");
    assert_eq!(first, std::fs::read(&b).unwrap());
    assert!(!first.is_empty());
}

#[test]
fn seeds_shuffle_options_but_keep_answers() {
    let dir = tempfile::tempdir().unwrap();
    let a = read_benchmark(&small_bench(dir.path(), "1")).unwrap();
    let b = read_benchmark(&small_bench(dir.path(), "2")).unwrap();
    assert_eq!(a.len(), b.len());
    let mut reordered = 0;
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.correct_option(), y.correct_option());
        let (mut ox, mut oy) = (x.options.clone(), y.options.clone());
        reordered += usize::from(ox != oy);
        ox.sort();
        oy.sort();
        assert_eq!(ox, oy);
    }
    assert!(reordered > 0);
}

#[test]
fn build_bench_rejects_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = geoground(&["build-bench", s(&empty), "--out", s(&dir.path().join("b.jsonl"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let missing = geoground(&[
        "build-bench",
        s(&dir.path().join("nope")),
        "--out",
        s(&dir.path().join("b.jsonl")),
    ]);
    assert!(!missing.status.success());
}

#[test]
fn ground_truth_responses_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let bench = small_bench(dir.path(), "0");
    let samples = read_benchmark(&bench).unwrap();
    let responses = dir.path().join("responses.jsonl");
    write_responses(&responses, &samples, true);
    let r = report(dir.path(), &bench, &responses);
    assert_eq!(r["macro_accuracy"], 100.0);
    assert_eq!(r["mean_iou"], 1.0);
    assert_eq!(r["samples"], samples.len());
}

#[test]
fn trace_responses_with_gt_masks_give_full_iou() {
    let dir = tempfile::tempdir().unwrap();
    let bench = small_bench(dir.path(), "0");
    let samples = read_benchmark(&bench).unwrap();
    let body: String = samples
        .iter()
        .map(|s| {
            let mut events = vec![TraceEvent::Text {
                token: "<think>".into(),
            }];
            let mut masks = Vec::new();
            for (k, g) in s.gt_masks.iter().enumerate() {
                events.push(TraceEvent::Seg {
                    step: k + 1,
                    image_index: g.image_index,
                    temporal: None,
                    mask: g.mask.clone(),
                    selection: Default::default(),
                    modality: None,
                });
                events.push(TraceEvent::Inject {
                    step: k + 1,
                    count: 0,
                    rows: Vec::new(),
                });
                masks.push(g.mask.clone());
            }
            let trace = ReasoningTrace {
                id: Some(s.id.clone()),
                events,
                answer: s.answer.to_string(),
                masks,
                truncated: false,
                seg_in_answer: false,
            };
            trace.to_json_line() + "\n"
        })
        .collect();
    let responses = dir.path().join("traces.jsonl");
    std::fs::write(&responses, body).unwrap();
    let r = report(dir.path(), &bench, &responses);
    assert_eq!(r["macro_accuracy"], 100.0);
    assert_eq!(r["mean_iou"], 1.0);
}

#[test]
fn response_order_does_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let bench = small_bench(dir.path(), "0");
    let mut samples = read_benchmark(&bench).unwrap();
    // answer every third one wrongly so the report is not trivial
    for s in samples.iter_mut().step_by(3) {
        s.answer = if s.answer == 'A' { 'B' } else { 'A' };
    }
    let forward = dir.path().join("forward.jsonl");
    write_responses(&forward, &samples, false);
    let first = report(dir.path(), &bench, &forward);
    samples.reverse();
    let third = samples.len() / 3;
    samples.rotate_left(third);
    let shuffled = dir.path().join("shuffled.jsonl");
    write_responses(&shuffled, &samples, false);
    assert_eq!(first, report(dir.path(), &bench, &shuffled));
    assert!(first["macro_accuracy"].as_f64().unwrap() < 100.0);
}

#[test]
fn malformed_response_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bench = small_bench(dir.path(), "0");
    let samples = read_benchmark(&bench).unwrap();
    let responses = dir.path().join("bad.jsonl");
    write_responses(&responses, &samples[..2], false);
    let mut body = std::fs::read_to_string(&responses).unwrap();
    body.push_str("{\"id\": 7, \"response\": \"A\"}\n");
    std::fs::write(&responses, body).unwrap();
    let out = geoground(&["evaluate", s(&bench), s(&responses)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

fn simulate(name: &str) -> (String, ReasoningTrace) {
    let path = fixtures().join("scenarios").join(format!("{name}.json"));
    let line = ok(&["simulate", s(&path)]);
    let trace: ReasoningTrace = serde_json::from_str(line.trim()).unwrap();
    (line, trace)
}

fn seg_images(trace: &ReasoningTrace) -> Vec<usize> {
    trace.grounded_masks().into_iter().map(|(i, _)| i).collect()
}

#[test]
fn simulate_bitemporal_segments_both_images() {
    let (_, trace) = simulate("bitemporal");
    assert_eq!(seg_images(&trace), vec![0, 1]);
    assert_eq!(trace.answer, "B");
    trace.validate(128).unwrap();
}

#[test]
fn simulate_without_seg_has_no_masks() {
    let (_, trace) = simulate("no_seg");
    assert_eq!(trace.seg_count(), 0);
    assert!(trace.masks.is_empty());
    assert_eq!(trace.answer, "A");
}

#[test]
fn simulate_reruns_are_byte_identical() {
    for name in ["single", "bitemporal", "optical_sar", "no_seg", "tiled"] {
        assert_eq!(simulate(name).0, simulate(name).0, "{name}");
    }
}

#[test]
fn simulate_respects_token_cap() {
    let path = fixtures().join("scenarios").join("tiled.json");
    let line = ok(&["simulate", s(&path), "--token-cap", "16"]);
    let trace: ReasoningTrace = serde_json::from_str(line.trim()).unwrap();
    trace.validate(16).unwrap();
    let (_, full) = simulate("tiled");
    let count = |t: &ReasoningTrace| {
        t.events
            .iter()
            .find_map(|e| match e {
                TraceEvent::Inject { count, .. } => Some(*count),
                _ => None,
            })
            .unwrap()
    };
    assert!(count(&trace) <= 16);
    assert!(count(&full) > 16 && count(&full) <= 128);
}

#[test]
fn query_and_mask_ops() {
    let src = fixtures().join("bench").join("landcover_000.pgm");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(src.with_extension("meta.json")).unwrap()).unwrap();
    let (id, _) = meta["class_names"].as_object().unwrap().iter().next().unwrap();
    let out = ok(&["query", s(&src), "coverage", id]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["units"], "percent");

    let dir = tempfile::tempdir().unwrap();
    let rle = dir.path().join("m.json");
    std::fs::write(&rle, r#"{"width":4,"height":2,"counts":[1,3,4]}"#).unwrap();
    let stats: serde_json::Value = serde_json::from_str(&ok(&["mask-ops", "stats", s(&rle)])).unwrap();
    assert_eq!(stats["area"], 3);
    assert_eq!(ok(&["mask-ops", "iou", s(&rle), s(&rle)]).trim(), "1");
}
