//! Unified JSONL dataset schema, upstream adapters and MCQ/FTG projection.
//!
//! Every dataset file holds one JSON object per line: a [`TaskInstance`]
//! plus a `schema_version` field. The `body` object is polymorphic on its
//! `type` tag (`analogy` or `icl`).

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_instance, AnalogyInstance, DatasetKind, Difficulty, TaskBody, TaskFormat,
    TaskInstance, Violation,
};
use crate::seeding;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema_version {found} (expected {expected})")]
    SchemaVersion {
        line: usize,
        found: u32,
        expected: u32,
    },
    #[error("line {line}: dataset `{found}` in a `{expected}` file")]
    KindMismatch {
        line: usize,
        found: DatasetKind,
        expected: DatasetKind,
    },
    #[error("line {line}: instance `{id}` is invalid: {violations:?}")]
    Invalid {
        line: usize,
        id: String,
        violations: Vec<Violation>,
    },
    #[error("line {line}: duplicate instance id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("nothing to write")]
    Empty,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProjectionError {
    #[error("instance `{0}` is already {1}")]
    WrongFormat(String, &'static str),
    #[error("distractor list is empty")]
    NoDistractors,
    #[error("distractor `{0}` equals the gold answer")]
    DistractorIsGold(String),
    #[error("duplicate distractor `{0}`")]
    DuplicateDistractor(String),
    #[error("visual instance `{0}` is evaluated in MCQ format only")]
    VisualFtg(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize)]
struct LineOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    instance: &'a TaskInstance,
}

#[derive(Deserialize)]
struct LineIn {
    schema_version: u32,
    #[serde(flatten)]
    instance: TaskInstance,
}

/// Loads every instance of a dataset file, in file order.
pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Vec<TaskInstance>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LineIn = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if parsed.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::SchemaVersion {
                line: lineno,
                found: parsed.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let inst = parsed.instance;
        if inst.dataset != kind {
            return Err(DatasetError::KindMismatch {
                line: lineno,
                found: inst.dataset,
                expected: kind,
            });
        }
        let violations = validate_instance(&inst);
        if !violations.is_empty() {
            return Err(DatasetError::Invalid {
                line: lineno,
                id: inst.id,
                violations,
            });
        }
        if !seen.insert(inst.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: lineno,
                id: inst.id,
            });
        }
        out.push(inst);
    }
    Ok(out)
}

/// Writes instances as a fresh JSONL dataset file (truncating).
pub fn write_dataset(instances: &[TaskInstance], path: &Path) -> Result<usize, DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        let line = serde_json::to_string(&LineOut {
            schema_version: SCHEMA_VERSION,
            instance: inst,
        })
        .expect("task instances always serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(instances.len())
}

/// Appends records to a JSONL file, one object per line.
///
/// Each record is serialized up front and written with a single `write_all`
/// so partially written lines never interleave with a previous run's tail.
pub fn write_run_records<T: Serialize>(records: &[T], path: &Path) -> Result<usize, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("records always serialize"));
        buf.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    file.write_all(buf.as_bytes()).map_err(io_err(path))?;
    file.flush().map_err(io_err(path))?;
    Ok(records.len())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Turns an FTG instance into an MCQ one.
///
/// Candidates are `{gold} ∪ distractors`, shuffled with a stream keyed by
/// `(seed, instance id)` so the order is independent of corpus position.
pub fn project_mcq(
    instance: &TaskInstance,
    distractors: &[String],
    seed: u64,
) -> Result<TaskInstance, ProjectionError> {
    if instance.format != TaskFormat::Ftg {
        return Err(ProjectionError::WrongFormat(instance.id.clone(), "mcq"));
    }
    if distractors.is_empty() {
        return Err(ProjectionError::NoDistractors);
    }
    let gold = instance.gold().to_string();
    let mut seen = HashSet::new();
    for d in distractors {
        if *d == gold {
            return Err(ProjectionError::DistractorIsGold(d.clone()));
        }
        if !seen.insert(d.as_str()) {
            return Err(ProjectionError::DuplicateDistractor(d.clone()));
        }
    }
    let mut candidates = Vec::with_capacity(distractors.len() + 1);
    candidates.push(gold);
    candidates.extend(distractors.iter().cloned());
    let mut rng = seeding::rng_for(seed, &["mcq-shuffle", &instance.id]);
    candidates.shuffle(&mut rng);

    let mut out = instance.clone();
    out.format = TaskFormat::Mcq;
    *out.candidates_mut() = Some(candidates);
    Ok(out)
}

/// Drops candidates from an MCQ instance. Visual instances stay MCQ-only.
pub fn project_ftg(instance: &TaskInstance) -> Result<TaskInstance, ProjectionError> {
    if instance.dataset == DatasetKind::Vasr {
        return Err(ProjectionError::VisualFtg(instance.id.clone()));
    }
    if instance.format != TaskFormat::Mcq {
        return Err(ProjectionError::WrongFormat(instance.id.clone(), "ftg"));
    }
    let mut out = instance.clone();
    out.format = TaskFormat::Ftg;
    *out.candidates_mut() = None;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Upstream adapters. Upstream files are inputs; nothing here rewrites them.

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    Record { record: usize, message: String },
}

#[derive(Deserialize)]
struct EkarChoices {
    label: Vec<String>,
    text: Vec<String>,
}

#[derive(Deserialize)]
struct EkarRecord {
    id: String,
    question: String,
    choices: EkarChoices,
    #[serde(rename = "answerKey")]
    answer_key: String,
    #[serde(default)]
    explanation: Option<serde_json::Value>,
}

fn split_wordset(s: &str) -> Vec<String> {
    s.split(':').map(|w| w.trim().to_string()).collect()
}

/// Maps an E-KAR release (JSON lines with `question`, `choices`,
/// `answerKey`) onto analogy instances.
///
/// The question wordset `x:x'` becomes the source pair; the answer choice
/// `y:y'` provides `B = y` and gold `B' = y'`. Wordsets with more than two
/// members keep everything after the first member, joined by `:`. The
/// candidates are the completions of every choice. Difficulty is
/// provisional (`medium`) until the `annotate` step runs.
pub fn ingest_ekar(path: &Path) -> Result<Vec<TaskInstance>, AdapterError> {
    let text = std::fs::read_to_string(path).map_err(|source| AdapterError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let trimmed = text.trim_start();
    let records: Vec<EkarRecord> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| AdapterError::Record {
            record: 0,
            message: e.to_string(),
        })?
    } else {
        trimmed
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| AdapterError::Record {
                    record: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?
    };

    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = |message: String| AdapterError::Record {
                record: i + 1,
                message,
            };
            let q = split_wordset(&r.question);
            if q.len() < 2 {
                return Err(bad(format!("question `{}` is not a wordset", r.question)));
            }
            let answer_idx = r
                .choices
                .label
                .iter()
                .position(|l| l.eq_ignore_ascii_case(r.answer_key.trim()))
                .ok_or_else(|| bad(format!("answer key `{}` not among labels", r.answer_key)))?;
            let mut stems = Vec::new();
            let mut completions = Vec::new();
            for c in &r.choices.text {
                let parts = split_wordset(c);
                if parts.len() < 2 {
                    return Err(bad(format!("choice `{c}` is not a wordset")));
                }
                stems.push(parts[0].clone());
                completions.push(parts[1..].join(":"));
            }
            let gold = completions
                .get(answer_idx)
                .cloned()
                .ok_or_else(|| bad("answer index outside choices".into()))?;
            // Duplicate completions would make the MCQ ambiguous; keep the first.
            let mut seen = HashSet::new();
            let candidates: Vec<String> = completions
                .into_iter()
                .enumerate()
                .filter(|(j, c)| *j == answer_idx || c != &gold)
                .map(|(_, c)| c)
                .filter(|c| seen.insert(c.clone()))
                .collect();
            let pattern_gold = r.explanation.and_then(|e| match e {
                serde_json::Value::String(s) => Some(s),
                serde_json::Value::Array(a) => Some(
                    a.iter()
                        .filter_map(|v| v.as_str())
                        .collect::<Vec<_>>()
                        .join(" "),
                ),
                _ => None,
            });
            Ok(TaskInstance {
                id: format!("ekar-{}", r.id),
                dataset: DatasetKind::Ekar,
                modality: DatasetKind::Ekar.modality(),
                difficulty: Difficulty::Medium,
                format: TaskFormat::Mcq,
                body: TaskBody::Analogy(AnalogyInstance {
                    source: (q[0].clone(), q[1..].join(":")),
                    target: stems[answer_idx].clone(),
                    gold,
                    candidates: Some(candidates),
                    pattern_gold: pattern_gold.filter(|s| !s.trim().is_empty()),
                }),
            })
        })
        .collect()
}

fn parse_list_cell(cell: &str) -> Option<Vec<String>> {
    let normalized = cell.trim().replace('\'', "\"");
    serde_json::from_str::<Vec<String>>(&normalized).ok()
}

/// Maps a VASR CSV release onto analogy instances.
///
/// Expected columns: `A_img`, `B_img`, `C_img`, `candidates` (a JSON or
/// Python-style list of image ids) and either `label` (index of the answer
/// within `candidates`) or `D_img` (the answer image id). An optional `id`
/// column is used for instance ids; otherwise the row number is.
pub fn ingest_vasr(path: &Path) -> Result<Vec<TaskInstance>, AdapterError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| AdapterError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| AdapterError::Record {
            record: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (a, b, c, cands) = match (col("A_img"), col("B_img"), col("C_img"), col("candidates")) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => {
            return Err(AdapterError::Record {
                record: 0,
                message: "missing one of A_img, B_img, C_img, candidates".into(),
            })
        }
    };
    let label = col("label");
    let d_img = col("D_img");
    let id_col = col("id");

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let bad = |message: String| AdapterError::Record {
            record: i + 1,
            message,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let get = |j: usize| row.get(j).unwrap_or("").trim().to_string();
        let candidates = parse_list_cell(&get(cands))
            .ok_or_else(|| bad("unparseable candidates list".into()))?;
        let gold = match (label, d_img) {
            (Some(l), _) if !get(l).is_empty() => {
                let idx: usize = get(l)
                    .parse()
                    .map_err(|_| bad(format!("bad label `{}`", get(l))))?;
                candidates
                    .get(idx)
                    .cloned()
                    .ok_or_else(|| bad(format!("label {idx} outside candidates")))?
            }
            (_, Some(d)) => get(d),
            _ => return Err(bad("neither label nor D_img present".into())),
        };
        let id = id_col.map(&get).unwrap_or_else(|| (i + 1).to_string());
        out.push(TaskInstance {
            id: format!("vasr-{id}"),
            dataset: DatasetKind::Vasr,
            modality: DatasetKind::Vasr.modality(),
            difficulty: Difficulty::Medium,
            format: TaskFormat::Mcq,
            body: TaskBody::Analogy(AnalogyInstance {
                source: (get(a), get(b)),
                target: get(c),
                gold,
                candidates: Some(candidates),
                pattern_gold: None,
            }),
        });
    }
    Ok(out)
}
