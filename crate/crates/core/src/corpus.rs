//! Data model for tasks, model families, prompts, and collected answers,
//! plus the on-disk JSONL/JSON formats.
//!
//! A task file is JSONL: the first line is a header object naming the task
//! and its kind, every following line is one test case. A runs file is
//! JSONL with one record per (case, scale, prompt) answer. Families and
//! prompts are single JSON documents. Everything is immutable after load
//! and freely shareable between threads.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::ExtractionPolicy;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate case id {0:?}")]
    DuplicateId(String),
    #[error("task file contains no cases")]
    EmptyTask,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("invalid prompt {id:?}: {message}")]
    InvalidPrompt { id: String, message: String },
    #[error("run record references unknown case id {0:?}")]
    UnknownCase(String),
    #[error("run record references unknown scale {0:?}")]
    UnknownScale(String),
    #[error("duplicate run record for case {case:?}, scale {scale:?}, prompt {prompt:?}")]
    DuplicateRecord {
        case: String,
        scale: String,
        prompt: String,
    },
    #[error(
        "incomplete run matrix for scale {scale:?}, prompt {prompt:?}: {missing} case(s) missing"
    )]
    IncompleteMatrix {
        scale: String,
        prompt: String,
        missing: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One graded unit: an input fragment and its reference solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    /// Input code, diff, or text; a single logical record.
    pub source: String,
    /// Expected output.
    pub reference: String,
    /// Id of the unperturbed original in the sibling base task, when this
    /// case is a perturbed variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_of: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    BugFixing,
    CodeTranslation,
    CommitMessageGeneration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceLanguage {
    Java,
    CSharp,
    Diff,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetLanguage {
    Java,
    CSharp,
    Text,
}

/// A named, ordered collection of test cases. Case order is significant:
/// testbeds are defined positionally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Task {
    pub name: String,
    pub kind: TaskKind,
    pub source_language: SourceLanguage,
    pub target_language: TargetLanguage,
    cases: Vec<TestCase>,
}

impl Task {
    pub fn new(
        name: String,
        kind: TaskKind,
        source_language: SourceLanguage,
        target_language: TargetLanguage,
        cases: Vec<TestCase>,
    ) -> Result<Self, CorpusError> {
        if cases.is_empty() {
            return Err(CorpusError::EmptyTask);
        }
        let expected = match kind {
            TaskKind::BugFixing => (SourceLanguage::Java, TargetLanguage::Java),
            TaskKind::CodeTranslation => (SourceLanguage::Java, TargetLanguage::CSharp),
            TaskKind::CommitMessageGeneration => (SourceLanguage::Diff, TargetLanguage::Text),
        };
        if (source_language, target_language) != expected {
            return Err(CorpusError::InvalidTask(format!(
                "kind {kind:?} requires languages {expected:?}, got ({source_language:?}, {target_language:?})"
            )));
        }
        let mut seen = HashSet::new();
        for case in &cases {
            if case.id.is_empty() {
                return Err(CorpusError::InvalidTask("empty case id".into()));
            }
            if case.reference.is_empty() {
                return Err(CorpusError::InvalidTask(format!(
                    "case {:?} has an empty reference",
                    case.id
                )));
            }
            if !seen.insert(case.id.clone()) {
                return Err(CorpusError::DuplicateId(case.id.clone()));
            }
        }
        Ok(Task {
            name,
            kind,
            source_language,
            target_language,
            cases,
        })
    }

    pub fn cases(&self) -> &[TestCase] {
        &self.cases
    }

    pub fn case_ids(&self) -> impl Iterator<Item = &str> {
        self.cases.iter().map(|c| c.id.as_str())
    }

    /// References aligned with case order.
    pub fn references(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.reference.as_str()).collect()
    }
}

/// One family member's size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScale {
    /// Human label, e.g. "350M" or "16.1B".
    pub label: String,
    /// Size in billions of parameters (or another unit, used consistently
    /// within one family; never mixed).
    pub parameters_billions: f64,
}

/// A set of models differing only by scale, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFamily {
    pub name: String,
    pub scales: Vec<ModelScale>,
}

impl ModelFamily {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.scales.len() < 2 {
            return Err(CorpusError::InvalidFamily(format!(
                "a family needs at least 2 scales for a regression, got {}",
                self.scales.len()
            )));
        }
        let mut labels = HashSet::new();
        for scale in &self.scales {
            if scale.parameters_billions <= 0.0 {
                return Err(CorpusError::InvalidFamily(format!(
                    "scale {:?} has non-positive size",
                    scale.label
                )));
            }
            if !labels.insert(scale.label.as_str()) {
                return Err(CorpusError::InvalidFamily(format!(
                    "duplicate scale label {:?}",
                    scale.label
                )));
            }
        }
        if self
            .scales
            .windows(2)
            .any(|w| w[1].parameters_billions <= w[0].parameters_billions)
        {
            return Err(CorpusError::InvalidFamily(
                "scales must be listed in strictly ascending size".into(),
            ));
        }
        Ok(())
    }

    pub fn scale_labels(&self) -> impl Iterator<Item = &str> {
        self.scales.iter().map(|s| s.label.as_str())
    }

    pub fn size_of(&self, label: &str) -> Option<f64> {
        self.scales
            .iter()
            .find(|s| s.label == label)
            .map(|s| s.parameters_billions)
    }
}

/// A prompt strategy: a template with a `{{source}}` placeholder and the
/// policy for extracting a single answer from raw completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub template: String,
    #[serde(rename = "extraction")]
    pub answer_extraction: ExtractionPolicy,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let occurrences = self.template.matches(SOURCE_PLACEHOLDER).count();
        if occurrences != 1 {
            return Err(CorpusError::InvalidPrompt {
                id: self.id.clone(),
                message: format!(
                    "template must contain exactly one {SOURCE_PLACEHOLDER}, found {occurrences}"
                ),
            });
        }
        self.answer_extraction
            .validate()
            .map_err(|message| CorpusError::InvalidPrompt {
                id: self.id.clone(),
                message,
            })
    }
}

/// Placeholder token substituted with a test case's source.
pub const SOURCE_PLACEHOLDER: &str = "{{source}}";

/// One model answer for one case at one scale under one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_id: String,
    #[serde(rename = "scale")]
    pub scale_label: String,
    #[serde(rename = "prompt")]
    pub prompt_id: String,
    /// Untruncated model completion, kept so answers can be re-extracted
    /// under a new policy without re-querying.
    pub raw_output: String,
    /// Post-extraction answer; empty when the model failed to answer.
    pub answer: String,
}

/// The full matrix of answers for one task and family.
#[derive(Debug, Clone)]
pub struct RunSet {
    pub task_name: String,
    pub family_name: String,
    records: Vec<RunRecord>,
    by_key: HashMap<(String, String, String), usize>,
}

impl RunSet {
    /// Builds and validates a run set: every record must reference a known
    /// case and scale, no (case, scale, prompt) may repeat, and every
    /// (scale, prompt) pair present must cover every case in the task.
    /// Missing answers must be stored as empty strings, not omitted.
    pub fn new(
        task: &Task,
        family: &ModelFamily,
        records: Vec<RunRecord>,
    ) -> Result<Self, CorpusError> {
        let case_ids: HashSet<&str> = task.case_ids().collect();
        let scale_labels: HashSet<&str> = family.scale_labels().collect();
        let mut by_key = HashMap::with_capacity(records.len());
        for (idx, record) in records.iter().enumerate() {
            if !case_ids.contains(record.case_id.as_str()) {
                return Err(CorpusError::UnknownCase(record.case_id.clone()));
            }
            if !scale_labels.contains(record.scale_label.as_str()) {
                return Err(CorpusError::UnknownScale(record.scale_label.clone()));
            }
            let key = (
                record.scale_label.clone(),
                record.prompt_id.clone(),
                record.case_id.clone(),
            );
            if by_key.insert(key, idx).is_some() {
                return Err(CorpusError::DuplicateRecord {
                    case: record.case_id.clone(),
                    scale: record.scale_label.clone(),
                    prompt: record.prompt_id.clone(),
                });
            }
        }
        let pairs: BTreeSet<(String, String)> = records
            .iter()
            .map(|r| (r.scale_label.clone(), r.prompt_id.clone()))
            .collect();
        for (scale, prompt) in &pairs {
            let missing = task
                .case_ids()
                .filter(|id| {
                    !by_key.contains_key(&(scale.clone(), prompt.clone(), (*id).to_string()))
                })
                .count();
            if missing > 0 {
                return Err(CorpusError::IncompleteMatrix {
                    scale: scale.clone(),
                    prompt: prompt.clone(),
                    missing,
                });
            }
        }
        Ok(RunSet {
            task_name: task.name.clone(),
            family_name: family.name.clone(),
            records,
            by_key,
        })
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// Prompt ids present, sorted.
    pub fn prompt_ids(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.prompt_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Answers for one (scale, prompt) pair, aligned with task case order.
    pub fn answers(&self, task: &Task, scale_label: &str, prompt_id: &str) -> Option<Vec<&str>> {
        let mut out = Vec::with_capacity(task.cases().len());
        for id in task.case_ids() {
            let key = (
                scale_label.to_string(),
                prompt_id.to_string(),
                id.to_string(),
            );
            out.push(self.records[*self.by_key.get(&key)?].answer.as_str());
        }
        Some(out)
    }
}

/// Header object on the first line of a task file.
#[derive(Debug, Serialize, Deserialize)]
struct TaskHeader {
    name: String,
    kind: TaskKind,
    source_language: SourceLanguage,
    target_language: TargetLanguage,
}

/// Loads and validates a JSONL task file, preserving case order.
pub fn load_task(path: impl AsRef<Path>) -> Result<Task, CorpusError> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_line, header_text) = lines.next().ok_or(CorpusError::EmptyTask)?;
    let header: TaskHeader =
        serde_json::from_str(header_text).map_err(|e| malformed(path, header_line + 1, e))?;
    let mut cases = Vec::new();
    for (line, text) in lines {
        let case: TestCase =
            serde_json::from_str(text).map_err(|e| malformed(path, line + 1, e))?;
        cases.push(case);
    }
    Task::new(
        header.name,
        header.kind,
        header.source_language,
        header.target_language,
        cases,
    )
}

/// Writes a task back to the JSONL format accepted by [`load_task`].
pub fn save_task(path: impl AsRef<Path>, task: &Task) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let header = TaskHeader {
        name: task.name.clone(),
        kind: task.kind,
        source_language: task.source_language,
        target_language: task.target_language,
    };
    let mut write_line = |value: String| -> Result<(), CorpusError> {
        out.write_all(value.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| io_err(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for case in task.cases() {
        write_line(serde_json::to_string(case).expect("case serializes"))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Loads a runs file and validates it against an already-validated task
/// and family.
pub fn load_runs(
    path: impl AsRef<Path>,
    task: &Task,
    family: &ModelFamily,
) -> Result<RunSet, CorpusError> {
    let records = read_run_records(path.as_ref())?;
    RunSet::new(task, family, records)
}

/// Raw run records without matrix validation; used for resumable collection
/// over partially written files.
pub fn read_run_records(path: &Path) -> Result<Vec<RunRecord>, CorpusError> {
    let text = read(path)?;
    let mut records = Vec::new();
    for (line, content) in text.lines().enumerate() {
        if content.trim().is_empty() {
            continue;
        }
        let record: RunRecord =
            serde_json::from_str(content).map_err(|e| malformed(path, line + 1, e))?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_family(path: impl AsRef<Path>) -> Result<ModelFamily, CorpusError> {
    let path = path.as_ref();
    let family: ModelFamily = serde_json::from_str(&read(path)?)
        .map_err(|e| malformed(path, 1, e))?;
    family.validate()?;
    Ok(family)
}

pub fn load_prompt(path: impl AsRef<Path>) -> Result<PromptTemplate, CorpusError> {
    let path = path.as_ref();
    let prompt: PromptTemplate = serde_json::from_str(&read(path)?)
        .map_err(|e| malformed(path, 1, e))?;
    prompt.validate()?;
    Ok(prompt)
}

/// Loads several prompt files, rejecting duplicate ids.
pub fn load_prompts(paths: &[impl AsRef<Path>]) -> Result<Vec<PromptTemplate>, CorpusError> {
    let mut prompts: Vec<PromptTemplate> = Vec::with_capacity(paths.len());
    let mut seen = BTreeSet::new();
    for path in paths {
        let prompt = load_prompt(path)?;
        if !seen.insert(prompt.id.clone()) {
            return Err(CorpusError::InvalidPrompt {
                id: prompt.id,
                message: "duplicate prompt id across prompt files".into(),
            });
        }
        prompts.push(prompt);
    }
    Ok(prompts)
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, line: usize, err: impl std::fmt::Display) -> CorpusError {
    CorpusError::MalformedRecord {
        path: path.display().to_string(),
        line,
        message: err.to_string(),
    }
}
