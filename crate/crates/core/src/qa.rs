//! Multiple-choice QA tasks, datasets and the canonical JSON-lines format.
//!
//! One record per line:
//!
//! ```json
//! {"id": "t1", "video": "v001", "question": "...", "options": ["...", "..."], "answer": 1, "type": "temporal"}
//! ```
//!
//! Keys other than the known ones are carried in [`QaTask::extra`] and written
//! back unchanged on serialization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Question category, carried as dataset metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    Temporal,
    Causal,
    Descriptive,
    Spatial,
    Action,
    Object,
    Unknown,
}

impl QuestionType {
    pub const ALL: [QuestionType; 7] = [
        QuestionType::Temporal,
        QuestionType::Causal,
        QuestionType::Descriptive,
        QuestionType::Spatial,
        QuestionType::Action,
        QuestionType::Object,
        QuestionType::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Temporal => "temporal",
            QuestionType::Causal => "causal",
            QuestionType::Descriptive => "descriptive",
            QuestionType::Spatial => "spatial",
            QuestionType::Action => "action",
            QuestionType::Object => "object",
            QuestionType::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<QuestionType> {
        let s = s.trim().to_ascii_lowercase();
        QuestionType::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub index: usize,
    pub text: String,
}

/// An N-way multiple-choice question over one video.
#[derive(Clone, Debug, PartialEq)]
pub struct QaTask {
    pub id: String,
    pub video_ref: String,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub ground_truth_index: Option<usize>,
    pub question_type: QuestionType,
    pub extra: Map<String, Value>,
}

impl QaTask {
    pub fn new(
        id: impl Into<String>,
        video_ref: impl Into<String>,
        question: impl Into<String>,
        options: Vec<String>,
        ground_truth_index: Option<usize>,
        question_type: QuestionType,
    ) -> Self {
        QaTask {
            id: id.into(),
            video_ref: video_ref.into(),
            question: question.into(),
            options: options
                .into_iter()
                .enumerate()
                .map(|(index, text)| AnswerOption { index, text })
                .collect(),
            ground_truth_index,
            question_type,
            extra: Map::new(),
        }
    }

    pub fn arity(&self) -> usize {
        self.options.len()
    }

    pub fn option_texts(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.text.as_str()).collect()
    }

    pub fn ground_truth_text(&self) -> Option<&str> {
        self.ground_truth_index
            .and_then(|i| self.options.get(i))
            .map(|o| o.text.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetVariant {
    #[default]
    Original,
    Rewritten,
}

impl fmt::Display for DatasetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetVariant::Original => f.write_str("Original"),
            DatasetVariant::Rewritten => f.write_str("Rewritten"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub tasks: Vec<QaTask>,
    pub variant: DatasetVariant,
}

/// A broken [`QaTask`] invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    EmptyId,
    EmptyQuestion,
    TooFewOptions { count: usize },
    EmptyOption { index: usize },
    DuplicateOption { first: usize, second: usize },
    OptionIndexMismatch { position: usize, index: usize },
    GroundTruthOutOfRange { index: usize, arity: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "id: must be non-empty"),
            Violation::EmptyQuestion => write!(f, "question: must be non-empty"),
            Violation::TooFewOptions { count } => {
                write!(f, "options: need at least 2, got {count}")
            }
            Violation::EmptyOption { index } => write!(f, "options[{index}]: empty text"),
            Violation::DuplicateOption { first, second } => {
                write!(f, "options[{second}]: duplicates options[{first}]")
            }
            Violation::OptionIndexMismatch { position, index } => {
                write!(f, "options[{position}]: carries index {index}")
            }
            Violation::GroundTruthOutOfRange { index, arity } => {
                write!(f, "answer: index {index} out of range for {arity} options")
            }
        }
    }
}

/// Checks every task invariant. An empty result means the task is valid.
pub fn validate_task(task: &QaTask) -> Vec<Violation> {
    let mut out = Vec::new();
    if task.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    if task.question.trim().is_empty() {
        out.push(Violation::EmptyQuestion);
    }
    if task.options.len() < 2 {
        out.push(Violation::TooFewOptions {
            count: task.options.len(),
        });
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (position, opt) in task.options.iter().enumerate() {
        if opt.index != position {
            out.push(Violation::OptionIndexMismatch {
                position,
                index: opt.index,
            });
        }
        if opt.text.trim().is_empty() {
            out.push(Violation::EmptyOption { index: position });
            continue;
        }
        if let Some(&first) = seen.get(opt.text.as_str()) {
            out.push(Violation::DuplicateOption {
                first,
                second: position,
            });
        } else {
            seen.insert(opt.text.as_str(), position);
        }
    }
    if let Some(index) = task.ground_truth_index {
        if index >= task.options.len() {
            out.push(Violation::GroundTruthOutOfRange {
                index,
                arity: task.options.len(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn join_lines(errors: &[LineError]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema errors: {}", join_lines(.0))]
    Schema(Vec<LineError>),
    #[error("duplicate task ids: {}", join_lines(.0))]
    DuplicateId(Vec<LineError>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatHint {
    /// Canonical JSON lines.
    JsonLines,
    /// NExT-QA style CSV: `video,...,question,answer,qid,type,a0..a4`.
    NextQaCsv,
}

impl FormatHint {
    fn from_path(path: &Path) -> FormatHint {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FormatHint::NextQaCsv,
            _ => FormatHint::JsonLines,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    video: String,
    question: String,
    options: Vec<String>,
    #[serde(default)]
    answer: Option<usize>,
    #[serde(default, rename = "type")]
    kind: Option<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

const VARIANT_KEY: &str = "variant";

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

pub fn load_dataset(path: &Path, hint: Option<FormatHint>) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    let name = dataset_name(path);
    match hint.unwrap_or_else(|| FormatHint::from_path(path)) {
        FormatHint::JsonLines => parse_jsonl(&name, BufReader::new(file)),
        FormatHint::NextQaCsv => parse_nextqa_csv(&name, file),
    }
}

fn task_from_record(rec: Record) -> Result<(QaTask, Option<DatasetVariant>), String> {
    let question_type = match rec.kind.as_deref() {
        None => QuestionType::Unknown,
        Some(s) => QuestionType::parse(s).ok_or_else(|| format!("unknown question type {s:?}"))?,
    };
    let mut extra = rec.extra;
    let variant = match extra.remove(VARIANT_KEY) {
        None => None,
        Some(Value::String(s)) if s == "Rewritten" => Some(DatasetVariant::Rewritten),
        Some(Value::String(s)) if s == "Original" => Some(DatasetVariant::Original),
        Some(other) => return Err(format!("bad variant {other}")),
    };
    let mut task = QaTask::new(
        rec.id,
        rec.video,
        rec.question,
        rec.options,
        rec.answer,
        question_type,
    );
    task.extra = extra;
    Ok((task, variant))
}

/// Parses canonical JSON lines. Blank lines are skipped.
pub fn parse_jsonl<R: BufRead>(name: &str, reader: R) -> Result<Dataset, DatasetError> {
    let mut tasks = Vec::new();
    let mut errors = Vec::new();
    let mut lines_of = Vec::new();
    let mut variant = DatasetVariant::Original;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError {
                    line: lineno,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match task_from_record(rec) {
            Ok((task, v)) => {
                let violations = validate_task(&task);
                if violations.is_empty() {
                    if v == Some(DatasetVariant::Rewritten) {
                        variant = DatasetVariant::Rewritten;
                    }
                    tasks.push(task);
                    lines_of.push(lineno);
                } else {
                    for v in violations {
                        errors.push(LineError {
                            line: lineno,
                            message: v.to_string(),
                        });
                    }
                }
            }
            Err(message) => errors.push(LineError {
                line: lineno,
                message,
            }),
        }
    }
    if !errors.is_empty() {
        return Err(DatasetError::Schema(errors));
    }
    check_unique_ids(&tasks, &lines_of)?;
    Ok(Dataset {
        name: name.to_string(),
        tasks,
        variant,
    })
}

fn check_unique_ids(tasks: &[QaTask], lines: &[usize]) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    let dups: Vec<LineError> = tasks
        .iter()
        .zip(lines)
        .filter(|(t, _)| !seen.insert(t.id.as_str()))
        .map(|(t, &line)| LineError {
            line,
            message: format!("id {:?} already used", t.id),
        })
        .collect();
    if dups.is_empty() {
        Ok(())
    } else {
        Err(DatasetError::DuplicateId(dups))
    }
}

fn nextqa_type(code: &str) -> QuestionType {
    match code.chars().next().map(|c| c.to_ascii_uppercase()) {
        Some('T') => QuestionType::Temporal,
        Some('C') => QuestionType::Causal,
        Some('D') => QuestionType::Descriptive,
        _ => QuestionType::Unknown,
    }
}

/// Thin adapter for the NExT-QA CSV layout. The original type code is kept
/// under the `type_code` extra key.
pub fn parse_nextqa_csv<R: Read>(name: &str, reader: R) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| {
            DatasetError::Schema(vec![LineError {
                line: 1,
                message: e.to_string(),
            }])
        })?
        .clone();
    let col = |n: &str| headers.iter().position(|h| h == n);
    let required = ["video", "question", "answer", "qid"];
    let missing: Vec<LineError> = required
        .iter()
        .filter(|c| col(c).is_none())
        .map(|c| LineError {
            line: 1,
            message: format!("missing column {c}"),
        })
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::Schema(missing));
    }
    let option_cols: Vec<usize> = (0..)
        .map_while(|i| col(&format!("a{i}")))
        .collect();
    let (c_video, c_question, c_answer, c_qid) = (
        col("video").unwrap(),
        col("question").unwrap(),
        col("answer").unwrap(),
        col("qid").unwrap(),
    );
    let c_type = col("type");

    let mut tasks = Vec::new();
    let mut lines_of = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let lineno = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError {
                    line: lineno,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let get = |c: usize| row.get(c).unwrap_or("").trim().to_string();
        let answer = match get(c_answer).parse::<usize>() {
            Ok(a) => Some(a),
            Err(_) => {
                errors.push(LineError {
                    line: lineno,
                    message: format!("answer {:?} is not an index", get(c_answer)),
                });
                continue;
            }
        };
        let code = c_type.map(get).unwrap_or_default();
        let mut task = QaTask::new(
            format!("{}_{}", get(c_video), get(c_qid)),
            get(c_video),
            get(c_question),
            option_cols.iter().map(|&c| get(c)).collect(),
            answer,
            nextqa_type(&code),
        );
        if !code.is_empty() {
            task.extra
                .insert("type_code".to_string(), Value::String(code));
        }
        let violations = validate_task(&task);
        if violations.is_empty() {
            tasks.push(task);
            lines_of.push(lineno);
        } else {
            errors.extend(violations.into_iter().map(|v| LineError {
                line: lineno,
                message: v.to_string(),
            }));
        }
    }
    if !errors.is_empty() {
        return Err(DatasetError::Schema(errors));
    }
    check_unique_ids(&tasks, &lines_of)?;
    Ok(Dataset {
        name: name.to_string(),
        tasks,
        variant: DatasetVariant::Original,
    })
}

/// Canonical JSON object for one task.
pub fn task_to_json(task: &QaTask, variant: DatasetVariant) -> Value {
    let mut extra = task.extra.clone();
    if variant == DatasetVariant::Rewritten {
        extra.insert(VARIANT_KEY.to_string(), Value::String("Rewritten".into()));
    }
    let rec = Record {
        id: task.id.clone(),
        video: task.video_ref.clone(),
        question: task.question.clone(),
        options: task.options.iter().map(|o| o.text.clone()).collect(),
        answer: task.ground_truth_index,
        kind: match task.question_type {
            QuestionType::Unknown => None,
            t => Some(t.as_str().to_string()),
        },
        extra,
    };
    serde_json::to_value(rec).expect("record serializes")
}

pub fn write_jsonl<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for task in &dataset.tasks {
        let line = serde_json::to_string(&task_to_json(task, dataset.variant))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(dataset, &mut w)?;
    w.flush()
}
