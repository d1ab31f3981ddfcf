use std::sync::OnceLock;

use regex::Regex;

use super::RuntimeError;

/// System prompt of the reasoning mode, verbatim.
pub const SYSTEM_PROMPT: &str = "A conversation between User and Assistant. The user asks a question, \
and the Assistant solves it. The Assistant first thinks about the reasoning process in their mind, \
generating segmentation masks when needed using [SEG] tokens, and then provides the user a concise \
final answer in a short word or phrase. The reasoning process and answer are enclosed within \
<think> </think> and <answer> </answer> tags, respectively, i.e., <think> reasoning process with \
[SEG] for segmentation </think><answer> answer here </answer>.";

pub fn assemble_prompt(question: &str) -> Result<String, RuntimeError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(RuntimeError::EmptyQuestion);
    }
    Ok(format!("{SYSTEM_PROMPT}\nUser: {question}\nAssistant:"))
}

fn indicator_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Image:\s*t_?(\d+)").expect("valid regex"))
}

/// The `k` of the last `Image: t<k>` marker in `recent_text`, if any.
pub fn parse_temporal_indicator(recent_text: &str) -> Option<u32> {
    indicator_regex()
        .captures_iter(recent_text)
        .last()
        .and_then(|c| c[1].parse().ok())
}

/// Map an optional 1-based temporal indicator to a 0-based image index.
/// No indicator means the first image.
pub fn resolve_image_index(indicator: Option<u32>, image_count: usize) -> Result<usize, RuntimeError> {
    match indicator {
        None => Ok(0),
        Some(k) if k >= 1 && (k as usize) <= image_count => Ok(k as usize - 1),
        Some(k) => Err(RuntimeError::TemporalOutOfRange { k, image_count }),
    }
}

/// Byte span of the content of the last `open ... close` pair.
pub fn answer_span(text: &str, open: &str, close: &str) -> Option<(usize, usize)> {
    let start = text.rfind(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some((start, end))
}

/// Trimmed content of the last answer-tag pair, or "" when there is none.
pub fn extract_answer(text: &str, open: &str, close: &str) -> String {
    answer_span(text, open, close)
        .map(|(s, e)| text[s..e].trim().to_string())
        .unwrap_or_default()
}
