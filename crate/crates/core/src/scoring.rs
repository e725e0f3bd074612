//! Answer extraction, correctness, aggregation and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::listfn::{self, DslExecutor, Registry};
use crate::model::{DatasetKind, Difficulty, Modality, TaskFormat, TaskInstance};
use crate::pipeline::{PipelineKind, PipelineResult};
use crate::raven;
use crate::seeding;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no JSON object in response")]
    NoJsonObject,
    #[error("field `{0}` absent")]
    FieldAbsent(String),
    #[error("field `{0}` is not a scalar")]
    NonScalar(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("filter selects no records")]
    EmptySelection,
    #[error("induction accuracy is zero")]
    ZeroBaseline,
    #[error("record sets cover different instances")]
    UniverseMismatch,
}

fn first_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(m))) = stream.next() {
            return Some(m);
        }
    }
    None
}

/// Finds the first JSON object in `text`, tolerating prose, code fences and
/// a missing comma between string fields on separate lines.
pub fn extract_json_object(text: &str) -> Result<serde_json::Map<String, Value>, ExtractError> {
    if let Some(m) = first_object(text) {
        return Ok(m);
    }
    static COMMA: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = COMMA.get_or_init(|| Regex::new(r#""([ \t]*\r?\n[ \t]*")"#).expect("valid regex"));
    let repaired = re.replace_all(text, "\",$1");
    first_object(&repaired).ok_or(ExtractError::NoJsonObject)
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// The named scalar field, trimmed.
pub fn extract_json_field(text: &str, field: &str) -> Result<String, ExtractError> {
    let obj = extract_json_object(text)?;
    let v = obj
        .get(field)
        .ok_or_else(|| ExtractError::FieldAbsent(field.to_string()))?;
    scalar(v).ok_or_else(|| ExtractError::NonScalar(field.to_string()))
}

/// Like [`extract_json_field`] but renders arrays and objects as compact
/// JSON, for list answers and structured hypotheses.
pub fn extract_json_text(text: &str, field: &str) -> Result<String, ExtractError> {
    let obj = extract_json_object(text)?;
    let v = obj
        .get(field)
        .ok_or_else(|| ExtractError::FieldAbsent(field.to_string()))?;
    match v {
        Value::Array(_) | Value::Object(_) => Ok(v.to_string()),
        Value::Null => Err(ExtractError::NonScalar(field.to_string())),
        _ => Ok(scalar(v).expect("scalar")),
    }
}

fn option_label(pred: &str) -> Option<usize> {
    let t = pred
        .trim()
        .trim_start_matches(['(', '['])
        .trim_end_matches([')', ']', '.', ':', ',']);
    let t = t
        .strip_prefix("Option ")
        .or_else(|| t.strip_prefix("option "))
        .unwrap_or(t)
        .trim();
    let mut chars = t.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => {
            Some((c.to_ascii_uppercase() as u8 - b'A') as usize)
        }
        _ => None,
    }
}

fn salt_tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn ftg_equal(pred: &str, gold: &str, dataset: DatasetKind) -> bool {
    match dataset {
        DatasetKind::Raven => match (raven::parse_symbolic(pred), raven::parse_symbolic(gold)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        },
        DatasetKind::Listfn => match (listfn::parse_list(pred), listfn::parse_list(gold)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        },
        DatasetKind::Salt => {
            let p = salt_tokens(pred);
            !p.is_empty() && p == salt_tokens(gold)
        }
        DatasetKind::Ekar | DatasetKind::Vasr => {
            !pred.trim().is_empty() && pred.trim().to_lowercase() == gold.trim().to_lowercase()
        }
    }
}

/// Judges an extracted prediction. MCQ accepts the option label (`B`,
/// `B)`, `(b)`, `Option B`) or the option text.
pub fn match_answer(
    pred: &str,
    gold: &str,
    dataset: DatasetKind,
    format: TaskFormat,
    candidates: Option<&[String]>,
) -> bool {
    match format {
        TaskFormat::Ftg => ftg_equal(pred, gold, dataset),
        TaskFormat::Mcq => {
            let cands = candidates.unwrap_or_default();
            let gold_idx = cands.iter().position(|c| c == gold);
            if let (Some(i), Some(g)) = (option_label(pred), gold_idx) {
                if i < cands.len() {
                    return i == g;
                }
            }
            if pred.trim().eq_ignore_ascii_case(gold.trim()) {
                return true;
            }
            let hits: Vec<usize> = cands
                .iter()
                .enumerate()
                .filter(|(_, c)| ftg_equal(pred, c, dataset))
                .map(|(i, _)| i)
                .collect();
            hits.len() == 1 && Some(hits[0]) == gold_idx
        }
    }
}

/// One executed (instance, pipeline) pair. Carries gold and candidates so
/// that re-scoring needs no dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub dataset: DatasetKind,
    pub modality: Modality,
    pub difficulty: Difficulty,
    pub format: TaskFormat,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_id: Option<String>,
    pub pipeline: PipelineKind,
    pub model: String,
    pub seed: u64,
    #[serde(default)]
    pub dummy_tokens: usize,
    pub result: PipelineResult,
    pub correct: bool,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub const HELD_OUT_INPUTS: usize = 10;

/// Fresh inputs for checking an abduced list function, keyed by the run
/// seed and instance id.
pub fn held_out_inputs(seed: u64, instance_id: &str) -> Vec<Vec<i64>> {
    let mut rng = seeding::rng_for(seed, &["held-out", instance_id]);
    (0..HELD_OUT_INPUTS)
        .map(|_| listfn::random_input(&mut rng))
        .collect()
}

impl RunRecord {
    pub fn new(
        instance: &TaskInstance,
        pipeline: PipelineKind,
        model: &str,
        seed: u64,
        dummy_tokens: usize,
        result: PipelineResult,
        timestamp: u64,
    ) -> RunRecord {
        let function_id = match &instance.body {
            crate::model::TaskBody::Icl(i) => Some(i.function_id.clone()),
            crate::model::TaskBody::Analogy(_) => None,
        };
        let mut r = RunRecord {
            instance_id: instance.id.clone(),
            dataset: instance.dataset,
            modality: instance.modality,
            difficulty: instance.difficulty,
            format: instance.format,
            gold: instance.gold().to_string(),
            candidates: instance.candidates().map(<[String]>::to_vec),
            function_id,
            pipeline,
            model: model.to_string(),
            seed,
            dummy_tokens,
            result,
            correct: false,
            timestamp,
        };
        r.correct = score_record(&r);
        r
    }
}

/// Pure re-scoring of a record. Abduction probes are correct when the
/// hypothesis reproduces the registry function on held-out inputs.
pub fn score_record(r: &RunRecord) -> bool {
    if r.pipeline == PipelineKind::ProbeAbduction {
        let Some(h) = r.result.hypothesis_trail.last() else {
            return false;
        };
        let f = r
            .function_id
            .as_deref()
            .and_then(|id| id.parse::<u32>().ok())
            .and_then(|id| Registry::bundled().get(id).ok());
        return match f {
            Some(f) => listfn::hypothesis_reproduces(
                &DslExecutor,
                h.slot("function").unwrap_or(&h.text),
                f,
                &held_out_inputs(r.seed, &r.instance_id),
            ),
            None => false,
        };
    }
    match &r.result.final_answer {
        Some(pred) => match_answer(pred, &r.gold, r.dataset, r.format, r.candidates.as_deref()),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub group: String,
    /// Unrounded percentage.
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
}

pub fn accuracy<F>(records: &[RunRecord], group: &str, filter: F) -> Result<ReportCell, ScoreError>
where
    F: Fn(&RunRecord) -> bool,
{
    let selected: Vec<&RunRecord> = records.iter().filter(|r| filter(r)).collect();
    if selected.is_empty() {
        return Err(ScoreError::EmptySelection);
    }
    let correct = selected.iter().filter(|r| r.correct).count();
    Ok(ReportCell {
        group: group.to_string(),
        accuracy: 100.0 * correct as f64 / selected.len() as f64,
        correct,
        n: selected.len(),
    })
}

/// Relative improvement (in percent) of System 2 over direct induction.
pub fn system2_advantage(acc_sys2: f64, acc_induction: f64) -> Result<f64, ScoreError> {
    if acc_induction == 0.0 {
        return Err(ScoreError::ZeroBaseline);
    }
    Ok(100.0 * (acc_sys2 - acc_induction) / acc_induction)
}

/// Rounds half away from zero at `places` decimals, absorbing binary
/// representation error just below the midpoint.
pub fn round_half_up(x: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    let v = x * scale;
    let nudged = v + v.signum() * 1e-9 * v.abs().max(1.0);
    nudged.round() / scale
}

pub fn format_pct(x: f64) -> String {
    format!("{:.2}", round_half_up(x, 2))
}

pub fn format_advantage(x: f64) -> String {
    let r = round_half_up(x, 2);
    if r > 0.0 {
        format!("+{r:.2}%")
    } else if r < 0.0 {
        format!("{r:.2}%")
    } else {
        "0.00%".into()
    }
}

/// (abduction accuracy, deduction accuracy) over the same instances.
pub fn abduction_deduction_decoupled(
    records_abd: &[RunRecord],
    records_ded: &[RunRecord],
) -> Result<(f64, f64), ScoreError> {
    let ids = |rs: &[RunRecord]| {
        rs.iter()
            .map(|r| r.instance_id.clone())
            .collect::<BTreeSet<_>>()
    };
    if records_abd.is_empty() || records_ded.is_empty() {
        return Err(ScoreError::EmptySelection);
    }
    if ids(records_abd) != ids(records_ded) {
        return Err(ScoreError::UniverseMismatch);
    }
    Ok((
        accuracy(records_abd, "abduction", |_| true)?.accuracy,
        accuracy(records_ded, "deduction", |_| true)?.accuracy,
    ))
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<ReportCell>>)>,
    /// Advantage of abduction+deduction over induction per column.
    pub advantage: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenCell {
    pub mean_tokens: f64,
    pub mean_rounds: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenGrid {
    pub columns: Vec<String>,
    pub rows: Vec<(String, bool, Vec<Option<TokenCell>>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub by_modality: Grid,
    pub by_difficulty: Grid,
    pub by_format: Grid,
    pub tokens: TokenGrid,
}

fn pipeline_order(records: &[RunRecord]) -> Vec<PipelineKind> {
    let mut seen: Vec<PipelineKind> = Vec::new();
    for r in records {
        if !seen.contains(&r.pipeline) {
            seen.push(r.pipeline);
        }
    }
    seen.sort_by_key(|p| p.sort_key());
    seen
}

fn grid<K: Ord + Clone>(
    title: &str,
    records: &[RunRecord],
    key: impl Fn(&RunRecord) -> K,
    name: impl Fn(&K) -> String,
) -> Grid {
    let cols: Vec<K> = records
        .iter()
        .map(&key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pipes = pipeline_order(records);
    let rows: Vec<(String, Vec<Option<ReportCell>>)> = pipes
        .iter()
        .map(|p| {
            let cells = cols
                .iter()
                .map(|c| accuracy(records, &name(c), |r| r.pipeline == *p && key(r) == *c).ok())
                .collect();
            (p.display_name(), cells)
        })
        .collect();
    let find = |want: PipelineKind| pipes.iter().position(|p| *p == want);
    let advantage = match (find(PipelineKind::Induction), find(PipelineKind::AbdDed)) {
        (Some(i), Some(s)) => Some(
            (0..cols.len())
                .map(|c| match (&rows[s].1[c], &rows[i].1[c]) {
                    (Some(sys2), Some(ind)) => system2_advantage(sys2.accuracy, ind.accuracy).ok(),
                    _ => None,
                })
                .collect(),
        ),
        _ => None,
    };
    Grid {
        title: title.to_string(),
        columns: cols.iter().map(name).collect(),
        rows,
        advantage,
    }
}

fn token_grid(records: &[RunRecord]) -> TokenGrid {
    let cols: Vec<Difficulty> = records
        .iter()
        .map(|r| r.difficulty)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rows = pipeline_order(records)
        .into_iter()
        .map(|p| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.pipeline == p).collect();
            let cells = cols
                .iter()
                .map(|d| {
                    let sel: Vec<&&RunRecord> =
                        mine.iter().filter(|r| r.difficulty == *d).collect();
                    if sel.is_empty() {
                        return None;
                    }
                    let n = sel.len() as f64;
                    Some(TokenCell {
                        mean_tokens: sel
                            .iter()
                            .map(|r| r.result.ledger.completion_tokens() as f64)
                            .sum::<f64>()
                            / n,
                        mean_rounds: sel.iter().map(|r| r.result.rounds_used as f64).sum::<f64>()
                            / n,
                        n: sel.len(),
                    })
                })
                .collect();
            let acc = 100.0 * mine.iter().filter(|r| r.correct).count() as f64 / mine.len() as f64;
            (p.display_name(), p.has_rounds(), cells, acc)
        })
        .collect();
    TokenGrid {
        columns: cols.iter().map(|d| d.as_str().to_string()).collect(),
        rows,
    }
}

pub fn build_report(records: &[RunRecord]) -> Report {
    Report {
        by_modality: grid(
            "Modality",
            records,
            |r| r.modality,
            |m| m.as_str().to_string(),
        ),
        by_difficulty: grid(
            "Difficulty",
            records,
            |r| r.difficulty,
            |d| d.as_str().to_string(),
        ),
        by_format: grid(
            "Task Format",
            records,
            |r| (r.modality, r.format),
            |(m, f)| format!("{} {}", m.as_str(), f.as_str()),
        ),
        tokens: token_grid(records),
    }
}

pub fn format_token_cell(c: &TokenCell, with_rounds: bool) -> String {
    if with_rounds {
        format!(
            "{:.1} ({:.1})",
            round_half_up(c.mean_tokens, 1),
            round_half_up(c.mean_rounds, 1)
        )
    } else {
        format!("{:.1}", round_half_up(c.mean_tokens, 1))
    }
}

impl Grid {
    /// Header row, body rows and the advantage footer as display strings.
    pub fn table(&self) -> Vec<Vec<String>> {
        let mut out = vec![std::iter::once("Pipeline".to_string())
            .chain(self.columns.iter().cloned())
            .collect::<Vec<_>>()];
        for (name, cells) in &self.rows {
            let mut row = vec![name.clone()];
            row.extend(cells.iter().map(|c| match c {
                Some(c) => format_pct(c.accuracy),
                None => "-".into(),
            }));
            out.push(row);
        }
        if let Some(adv) = &self.advantage {
            let mut row = vec!["System 2 Advantage".to_string()];
            row.extend(adv.iter().map(|a| match a {
                Some(a) => format_advantage(*a),
                None => "-".into(),
            }));
            out.push(row);
        }
        out
    }
}

impl TokenGrid {
    pub fn table(&self) -> Vec<Vec<String>> {
        let mut header = vec!["Configuration".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("Accuracy".into());
        let mut out = vec![header];
        for (name, rounds, cells, acc) in &self.rows {
            let mut row = vec![name.clone()];
            row.extend(cells.iter().map(|c| match c {
                Some(c) => format_token_cell(c, *rounds),
                None => "-".into(),
            }));
            row.push(format!("{:.1}", round_half_up(*acc, 1)));
            out.push(row);
        }
        out
    }
}

fn render_text(title: &str, table: &[Vec<String>]) -> String {
    let ncols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|c| {
            table
                .iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = format!("{title}\n");
    for row in table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if i == 0 {
                    format!("{cell:<w$}", w = widths[i])
                } else {
                    format!("{cell:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(s, "{}", line.join("  ").trim_end());
    }
    s
}

fn render_csv(title: &str, table: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in table {
        let mut r = vec![title.to_string()];
        r.extend(row.iter().cloned());
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

impl Report {
    fn sections(&self) -> Vec<(String, Vec<Vec<String>>)> {
        vec![
            (
                format!("Pipeline x {}", self.by_modality.title),
                self.by_modality.table(),
            ),
            (
                format!("Pipeline x {}", self.by_difficulty.title),
                self.by_difficulty.table(),
            ),
            (
                format!("Pipeline x {}", self.by_format.title),
                self.by_format.table(),
            ),
            ("Completion Tokens (# Rounds)".into(), self.tokens.table()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.sections()
            .iter()
            .map(|(t, tab)| render_text(t, tab))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_csv(&self) -> String {
        self.sections()
            .iter()
            .map(|(t, tab)| render_csv(t, tab))
            .collect()
    }
}

/// Per-dataset counts, handy for sanity output.
pub fn counts_by_dataset(records: &[RunRecord]) -> BTreeMap<DatasetKind, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.dataset).or_insert(0) += 1;
    }
    m
}
