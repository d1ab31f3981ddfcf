//! Scoring: option extraction, per-task and macro accuracy, grounding IoU
//! with greedy mask matching, and the IoU/correctness correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchforge::{BenchSample, Task};
use crate::raster::{iou, BinaryMask, MaskError, RleMask};
use crate::runtime::ReasoningTrace;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no records to score")]
    EmptyRecords,
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("need at least 2 records with masks, got {0}")]
    TooFewMasked(usize),
    #[error("duplicate response for sample {0:?}")]
    DuplicateResponse(String),
    #[error("response for unknown sample {0:?}")]
    UnknownSample(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

fn option_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[A-D]\b").expect("static pattern"))
}

/// First standalone A-D letter in the response.
pub fn extract_option(response: &str) -> Option<char> {
    option_pattern().find(response).and_then(|m| m.as_str().chars().next())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub task: Task,
    pub predicted: Option<char>,
    pub gt: char,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub correct: usize,
    pub total: usize,
    /// Percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub mean_iou_correct: f64,
    pub mean_iou_incorrect: f64,
    pub r: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Samples whose response yielded a letter.
    pub answered: usize,
    /// Samples with no response at all (scored incorrect).
    pub missing_responses: usize,
    pub per_task: BTreeMap<Task, TaskScore>,
    /// Unweighted mean of per-task accuracies, percent.
    pub macro_accuracy: f64,
    /// Samples whose response carried at least one mask.
    pub masked_samples: usize,
    pub mean_iou: Option<f64>,
    pub mean_iou_correct: Option<f64>,
    pub mean_iou_incorrect: Option<f64>,
    /// Point-biserial r between correctness and mean IoU, when defined.
    pub pearson_r: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Accuracy per task and macro average, plus IoU summaries.
pub fn score_answers(records: &[EvalRecord]) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut per_task: BTreeMap<Task, TaskScore> = BTreeMap::new();
    for r in records {
        let s = per_task.entry(r.task).or_insert(TaskScore {
            correct: 0,
            total: 0,
            accuracy: 0.0,
        });
        s.total += 1;
        s.correct += usize::from(r.correct);
    }
    for s in per_task.values_mut() {
        s.accuracy = 100.0 * s.correct as f64 / s.total as f64;
    }
    let macro_accuracy = mean(per_task.values().map(|s| s.accuracy)).expect("records nonempty");
    let masked: Vec<&EvalRecord> = records.iter().filter(|r| r.mean_iou.is_some()).collect();
    let group = |want: bool| mean(masked.iter().filter(|r| r.correct == want).filter_map(|r| r.mean_iou));
    Ok(EvalReport {
        samples: records.len(),
        answered: records.iter().filter(|r| r.predicted.is_some()).count(),
        missing_responses: 0,
        per_task,
        macro_accuracy,
        masked_samples: masked.len(),
        mean_iou: mean(masked.iter().filter_map(|r| r.mean_iou)),
        mean_iou_correct: group(true),
        mean_iou_incorrect: group(false),
        pearson_r: iou_correlation(records).ok().map(|c| c.r),
    })
}

fn decode_all(m: &[(usize, RleMask)]) -> Result<Vec<(usize, &RleMask, BinaryMask)>, MaskError> {
    m.iter().map(|(i, r)| Ok((*i, r, r.decode()?))).collect()
}

/// Mean IoU over ground-truth masks after greedy matching.
///
/// Masks are `(image_index, mask)`; only masks on the same image are paired.
/// The highest-IoU pair is taken first (ties: smaller gt RLE, then smaller
/// predicted RLE), both are removed, and so on. Unmatched gt masks score 0.
/// With no gt masks the result is 0.
pub fn grounding_iou(pred: &[(usize, RleMask)], gt: &[(usize, RleMask)]) -> Result<f64, EvalError> {
    if gt.is_empty() {
        return Ok(0.0);
    }
    let (pred, gt) = (decode_all(pred)?, decode_all(gt)?);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, g) in gt.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            if g.0 == p.0 {
                pairs.push((iou(&g.2, &p.2)?, gi, pi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| gt[a.1].1.cmp(gt[b.1].1))
            .then_with(|| pred[a.2].1.cmp(pred[b.2].1))
            .then(a.1.cmp(&b.1))
    });
    let (mut used_g, mut used_p) = (BTreeSet::new(), BTreeSet::new());
    let mut total = 0.0;
    for (v, gi, pi) in pairs {
        if !used_g.contains(&gi) && !used_p.contains(&pi) {
            used_g.insert(gi);
            used_p.insert(pi);
            total += v;
        }
    }
    Ok(total / gt.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return Err(EvalError::TooFewMasked(n));
    }
    let (mx, my) = (
        mean(xs[..n].iter().copied()).unwrap(),
        mean(ys[..n].iter().copied()).unwrap(),
    );
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(EvalError::UndefinedCorrelation("first variable is constant"));
    }
    if syy == 0.0 {
        return Err(EvalError::UndefinedCorrelation("second variable is constant"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Group mean IoUs and the correlation between correctness (0/1) and IoU,
/// over records that carry masks.
pub fn iou_correlation(records: &[EvalRecord]) -> Result<Correlation, EvalError> {
    let masked: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.mean_iou.map(|v| (f64::from(u8::from(r.correct)), v)))
        .collect();
    if masked.len() < 2 {
        return Err(EvalError::TooFewMasked(masked.len()));
    }
    let (c, v): (Vec<f64>, Vec<f64>) = masked.iter().copied().unzip();
    let r = pearson(&c, &v).map_err(|e| match e {
        EvalError::UndefinedCorrelation(_) if c.iter().all(|&x| x == c[0]) => {
            EvalError::UndefinedCorrelation("correctness is constant")
        }
        EvalError::UndefinedCorrelation(_) => EvalError::UndefinedCorrelation("IoU is constant"),
        other => other,
    })?;
    let group = |want: f64| mean(masked.iter().filter(|m| m.0 == want).map(|m| m.1)).unwrap_or(0.0);
    Ok(Correlation {
        mean_iou_correct: group(1.0),
        mean_iou_incorrect: group(0.0),
        r,
        n: masked.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredMask {
    #[serde(default)]
    pub image_index: usize,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub id: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<PredMask>,
}

/// One line of a responses file: a full trace (with `id`) or a text answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Trace(ReasoningTrace),
    Text(TextResponse),
}

impl Response {
    pub fn id(&self) -> Option<&str> {
        match self {
            Response::Trace(t) => t.id.as_deref(),
            Response::Text(t) => Some(&t.id),
        }
    }

    /// Text searched for the option letter: a trace's answer span, or its
    /// whole text when it has none.
    pub fn text(&self) -> String {
        match self {
            Response::Trace(t) if !t.answer.is_empty() => t.answer.clone(),
            Response::Trace(t) => t.text(),
            Response::Text(t) => t.response.clone(),
        }
    }

    pub fn masks(&self) -> Vec<(usize, RleMask)> {
        match self {
            Response::Trace(t) => t.grounded_masks(),
            Response::Text(t) => t.masks.iter().map(|m| (m.image_index, m.mask.clone())).collect(),
        }
    }
}

/// Parse a JSON-lines responses file; errors name the 1-based line.
pub fn parse_responses(text: &str) -> Result<Vec<Response>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Response = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if r.id().is_none() {
            return Err(EvalError::Parse {
                line: i + 1,
                message: "response has no id".into(),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn score_sample(sample: &BenchSample, response: Option<&Response>) -> Result<EvalRecord, EvalError> {
    let predicted = response.and_then(|r| extract_option(&r.text()));
    let masks = response.map(Response::masks).unwrap_or_default();
    let mean_iou = if masks.is_empty() {
        None
    } else {
        let gt: Vec<(usize, RleMask)> = sample
            .gt_masks
            .iter()
            .map(|g| (g.image_index, g.mask.clone()))
            .collect();
        Some(grounding_iou(&masks, &gt)?)
    };
    Ok(EvalRecord {
        id: sample.id.clone(),
        task: sample.task,
        predicted,
        gt: sample.answer,
        correct: predicted == Some(sample.answer),
        mean_iou,
    })
}

/// Score responses against a benchmark. Records follow benchmark order, so
/// the report does not depend on response order. Samples without a
/// response count as incorrect.
pub fn evaluate(bench: &[BenchSample], responses: &[Response]) -> Result<(Vec<EvalRecord>, EvalReport), EvalError> {
    let known: BTreeSet<&str> = bench.iter().map(|s| s.id.as_str()).collect();
    let mut by_id: BTreeMap<&str, &Response> = BTreeMap::new();
    for r in responses {
        let id = r.id().unwrap_or_default();
        if !known.contains(id) {
            return Err(EvalError::UnknownSample(id.to_string()));
        }
        if by_id.insert(id, r).is_some() {
            return Err(EvalError::DuplicateResponse(id.to_string()));
        }
    }
    let records = bench
        .iter()
        .map(|s| score_sample(s, by_id.get(s.id.as_str()).copied()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = score_answers(&records)?;
    report.missing_responses = bench.len() - by_id.len();
    Ok((records, report))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>5} {:>7} {:>9}", "task", "code", "n", "accuracy");
        for (task, score) in &self.per_task {
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>7} {:>8.1}%",
                task.name(),
                task.code(),
                score.total,
                score.accuracy
            );
        }
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:>7} {:>8.1}%",
            "macro", "", self.samples, self.macro_accuracy
        );
        let _ = writeln!(
            s,
            "answered {}/{}, missing {}",
            self.answered, self.samples, self.missing_responses
        );
        let _ = writeln!(
            s,
            "mean IoU {} (correct {}, incorrect {}) over {} masked samples; r = {}",
            opt(self.mean_iou),
            opt(self.mean_iou_correct),
            opt(self.mean_iou_incorrect),
            self.masked_samples,
            opt(self.pearson_r)
        );
        s
    }
}
