//! Multiple-choice benchmark samples built from rule-based answers.
//!
//! A sample file is JSON lines, one [`BenchSample`] per line:
//!
//! | field      | meaning                                                        |
//! |------------|----------------------------------------------------------------|
//! | `id`       | `<source stem>-<task code>-<nn>`, unique within a benchmark    |
//! | `task`     | task name (`coverage`, `area`, `distance`, ...)                |
//! | `question` | instantiated template text                                     |
//! | `options`  | 2 (binary tasks) or 4 rendered options, listed A..D            |
//! | `answer`   | correct letter                                                 |
//! | `images`   | source files with modality and optional timestamp             |
//! | `classes`  | queried class ids (empty for building tasks)                   |
//! | `gt_masks` | ground-truth masks: `role`, `image_index` (0-based), RLE `mask` |
//! | `source`   | the answer the sample was rendered from                        |

mod generate;
mod options;
pub mod synthetic;

pub use generate::{
    assemble_benchmark, balance_to_distribution, build_benchmark, generate_buildings, generate_l1, load_sources,
    read_benchmark, verify_sample, BenchStats, FootprintSource, RasterSource, Sources,
};
pub use options::{make_options, numeric_distractors, render_value, DISTRACTOR_FACTORS, EXTRA_FACTORS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geoquery::{ClassId, GeoError, SpatialAnswer};
use crate::modality::Modality;
use crate::raster::RleMask;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("answer is not valid: {0}")]
    InvalidAnswer(String),
    #[error("answer value cannot be rendered as options")]
    UnsupportedValue,
    #[error("template {pattern:?} does not fit task {task}")]
    TemplateArity { task: Task, pattern: String },
    #[error("no samples to write")]
    EmptySamples,
    #[error("no rasters or footprint files found in {0}")]
    EmptyInput(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Question families. The first six make up the benchmark proper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Coverage,
    Area,
    Distance,
    Ranking,
    Adjacency,
    BuildingChange,
    Existence,
    Counting,
    Localization,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Coverage,
        Task::Area,
        Task::Distance,
        Task::Ranking,
        Task::Adjacency,
        Task::BuildingChange,
        Task::Existence,
        Task::Counting,
        Task::Localization,
    ];

    pub const BENCH: [Task; 6] = [
        Task::Coverage,
        Task::Area,
        Task::Distance,
        Task::Ranking,
        Task::Adjacency,
        Task::BuildingChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Coverage => "coverage",
            Task::Area => "area",
            Task::Distance => "distance",
            Task::Ranking => "ranking",
            Task::Adjacency => "adjacency",
            Task::BuildingChange => "building_change",
            Task::Existence => "existence",
            Task::Counting => "counting",
            Task::Localization => "localization",
        }
    }

    /// Short column code used in reports.
    pub fn code(self) -> &'static str {
        match self {
            Task::Coverage => "CA",
            Task::Area => "AQ",
            Task::Distance => "DM",
            Task::Ranking => "CR",
            Task::Adjacency => "BRD",
            Task::BuildingChange => "BCE",
            Task::Existence => "EX",
            Task::Counting => "CNT",
            Task::Localization => "LOC",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        let s = s.trim();
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s) || t.code().eq_ignore_ascii_case(s))
    }

    /// Number of class slots in the question.
    pub fn arity(self) -> usize {
        match self {
            Task::Coverage | Task::Area | Task::Existence | Task::Localization => 1,
            Task::Distance | Task::Ranking | Task::Adjacency => 2,
            Task::BuildingChange | Task::Counting => 0,
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Task::Ranking | Task::Adjacency | Task::Existence)
    }

    /// Target sample count in the reference benchmark, for balancing.
    pub fn reference_count(self) -> Option<u32> {
        match self {
            Task::Coverage | Task::Area | Task::Ranking | Task::Adjacency => Some(855),
            Task::Distance => Some(129),
            Task::BuildingChange => Some(288),
            _ => None,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub task: Task,
    pub pattern: String,
}

impl QuestionTemplate {
    pub fn new(task: Task, pattern: impl Into<String>) -> Result<Self, BenchError> {
        let pattern = pattern.into();
        let has = |slot: &str| pattern.contains(slot);
        let fits = match task.arity() {
            0 => !has("{class"),
            1 => has("{class}") && !has("{class1}") && !has("{class2}"),
            _ => has("{class1}") && has("{class2}") && !has("{class}"),
        };
        if !fits {
            return Err(BenchError::TemplateArity { task, pattern });
        }
        Ok(Self { task, pattern })
    }

    pub fn fill(&self, classes: &[&str]) -> String {
        match classes {
            [c] => self.pattern.replace("{class}", c),
            [a, b] => self.pattern.replace("{class1}", a).replace("{class2}", b),
            _ => self.pattern.clone(),
        }
    }
}

/// One phrasing per question family; building change has a rate and a count form.
pub fn default_templates() -> Vec<QuestionTemplate> {
    [
        (Task::Coverage, "What percentage of the image is covered by {class}?"),
        (Task::Area, "What is the area of {class}?"),
        (Task::Distance, "What is the distance between {class1} and {class2}?"),
        (Task::Ranking, "Is {class1} larger than {class2}?"),
        (Task::Adjacency, "Does {class1} border {class2}?"),
        (Task::BuildingChange, "What percentage of buildings were destroyed?"),
        (Task::BuildingChange, "How many buildings were destroyed?"),
        (Task::Existence, "Is there any {class} in the image?"),
        (Task::Counting, "How many buildings are there in the image?"),
        (Task::Localization, "Where is the {class} located in the image?"),
    ]
    .into_iter()
    .map(|(t, p)| QuestionTemplate::new(t, p).expect("built-in templates fit"))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtMask {
    pub role: String,
    #[serde(default)]
    pub image_index: usize,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub id: String,
    pub task: Task,
    pub question: String,
    pub options: Vec<String>,
    pub answer: char,
    pub images: Vec<ImageRef>,
    #[serde(default)]
    pub classes: Vec<ClassId>,
    #[serde(default)]
    pub gt_masks: Vec<GtMask>,
    pub source: SpatialAnswer,
}

impl BenchSample {
    pub fn correct_option(&self) -> Option<&str> {
        letter_index(self.answer)
            .and_then(|i| self.options.get(i))
            .map(String::as_str)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }
}

pub const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

pub fn letter_index(letter: char) -> Option<usize> {
    LETTERS.iter().position(|&l| l == letter)
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_arity() {
        assert!(QuestionTemplate::new(Task::Distance, "between {class1} and {class2}").is_ok());
        assert!(QuestionTemplate::new(Task::Distance, "near {class}").is_err());
        assert!(QuestionTemplate::new(Task::Coverage, "{class1} share").is_err());
        assert!(QuestionTemplate::new(Task::BuildingChange, "{class} destroyed").is_err());
        let t = QuestionTemplate::new(Task::Adjacency, "Does {class1} border {class2}?").unwrap();
        assert_eq!(t.fill(&["forest", "water"]), "Does forest border water?");
    }

    #[test]
    fn task_names_parse() {
        for t in Task::ALL {
            assert_eq!(Task::parse(t.name()), Some(t));
            assert_eq!(Task::parse(&t.code().to_lowercase()), Some(t));
        }
        assert_eq!(Task::parse("nope"), None);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(stable_hash(""), 0xcbf29ce484222325);
        assert_eq!(stable_hash("a"), 0xaf63dc4c8601ec8c);
    }
}
