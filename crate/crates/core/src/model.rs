//! Domain vocabulary shared by generators, pipelines and scoring.
//!
//! Items are plain strings in a per-dataset canonical form: symbolic panels
//! use the RAVEN serialization from [`crate::raven`], integer lists are
//! rendered as `[a, b, c]`, and images are opaque file references.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Textual,
    Visual,
    Symbolic,
    MathCode,
    TextualIcl,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Textual,
        Modality::Visual,
        Modality::Symbolic,
        Modality::MathCode,
        Modality::TextualIcl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Textual => "textual",
            Modality::Visual => "visual",
            Modality::Symbolic => "symbolic",
            Modality::MathCode => "math_code",
            Modality::TextualIcl => "textual_icl",
        }
    }
}

/// Relative difficulty tier. Ordered `Easy < Medium < Hard`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFormat {
    Mcq,
    Ftg,
}

impl TaskFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskFormat::Mcq => "mcq",
            TaskFormat::Ftg => "ftg",
        }
    }
}

impl fmt::Display for TaskFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mcq" => Ok(TaskFormat::Mcq),
            "ftg" => Ok(TaskFormat::Ftg),
            other => Err(format!("unknown task format `{other}` (expected mcq|ftg)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Ekar,
    Vasr,
    Raven,
    Listfn,
    Salt,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Ekar,
        DatasetKind::Vasr,
        DatasetKind::Raven,
        DatasetKind::Listfn,
        DatasetKind::Salt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Ekar => "ekar",
            DatasetKind::Vasr => "vasr",
            DatasetKind::Raven => "raven",
            DatasetKind::Listfn => "listfn",
            DatasetKind::Salt => "salt",
        }
    }

    /// The modality each dataset is evaluated under.
    pub fn modality(self) -> Modality {
        match self {
            DatasetKind::Ekar => Modality::Textual,
            DatasetKind::Vasr => Modality::Visual,
            DatasetKind::Raven => Modality::Symbolic,
            DatasetKind::Listfn => Modality::MathCode,
            DatasetKind::Salt => Modality::TextualIcl,
        }
    }

    pub fn hypothesis_kind(self) -> HypothesisKind {
        match self {
            DatasetKind::Ekar | DatasetKind::Vasr | DatasetKind::Raven => {
                HypothesisKind::FreeTextPattern
            }
            DatasetKind::Listfn => HypothesisKind::CodeFunction,
            DatasetKind::Salt => HypothesisKind::VocabAndGrammar,
        }
    }

    pub fn is_icl(self) -> bool {
        matches!(self, DatasetKind::Listfn | DatasetKind::Salt)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dataset `{s}` (expected ekar|vasr|raven|listfn|salt)"))
    }
}

/// `A : A' :: B : B'` with an optional candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyInstance {
    pub source: (String, String),
    pub target: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_gold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub input: String,
    pub output: String,
}

/// n-shot in-context learning item: infer `f` from the demos and apply it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclInstance {
    pub demos: Vec<Demo>,
    pub test_input: String,
    pub gold_output: String,
    pub function_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskBody {
    Analogy(AnalogyInstance),
    Icl(IclInstance),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub dataset: DatasetKind,
    pub modality: Modality,
    pub difficulty: Difficulty,
    pub format: TaskFormat,
    pub body: TaskBody,
}

impl TaskInstance {
    pub fn gold(&self) -> &str {
        match &self.body {
            TaskBody::Analogy(a) => &a.gold,
            TaskBody::Icl(i) => &i.gold_output,
        }
    }

    pub fn candidates(&self) -> Option<&[String]> {
        match &self.body {
            TaskBody::Analogy(a) => a.candidates.as_deref(),
            TaskBody::Icl(i) => i.candidates.as_deref(),
        }
    }

    pub(crate) fn candidates_mut(&mut self) -> &mut Option<Vec<String>> {
        match &mut self.body {
            TaskBody::Analogy(a) => &mut a.candidates,
            TaskBody::Icl(i) => &mut i.candidates,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    FreeTextPattern,
    CodeFunction,
    VocabAndGrammar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "stage", content = "round", rename_all = "snake_case")]
pub enum HypothesisOrigin {
    Abduction,
    Selection,
    Refinement(u32),
    /// Supplied from the ground truth (deduction-only probes).
    Gold,
}

/// An abduced pattern `P_h`.
///
/// `slots` holds the raw JSON fields the hypothesis was extracted from
/// (`pattern`, `function`, or `vocabulary` + `grammar`); `text` is the
/// rendering shown to the model in later stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub kind: HypothesisKind,
    pub origin: HypothesisOrigin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<(String, String)>,
}

impl Hypothesis {
    pub fn slot(&self, name: &str) -> Option<&str> {
        self.slots
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn with_origin(&self, origin: HypothesisOrigin) -> Self {
        Hypothesis {
            origin,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    EmptyId,
    ModalityMismatch,
    BodyMismatch,
    VisualNotMcq,
    EmptyGold,
    MissingCandidates,
    GoldNotInCandidates,
    GoldRepeatedInCandidates,
    CandidatesInFtg,
    EmptyDemos,
    EmptyDemoField,
    DemoInconsistent,
}

/// Checks every structural invariant of a task instance.
///
/// Returns one violation per broken invariant; an empty list means the
/// instance is well formed. Dataset-specific semantic checks (e.g. demo
/// outputs agreeing with the registered list function) live with the
/// generators.
pub fn validate_instance(instance: &TaskInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    if instance.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    if instance.dataset.modality() != instance.modality {
        out.push(Violation::ModalityMismatch);
    }
    if instance.dataset == DatasetKind::Vasr && instance.format != TaskFormat::Mcq {
        out.push(Violation::VisualNotMcq);
    }
    let body_ok = match &instance.body {
        TaskBody::Analogy(_) => !instance.dataset.is_icl(),
        TaskBody::Icl(_) => instance.dataset.is_icl(),
    };
    if !body_ok {
        out.push(Violation::BodyMismatch);
    }
    if let TaskBody::Icl(icl) = &instance.body {
        if icl.demos.is_empty() {
            out.push(Violation::EmptyDemos);
        }
        if icl
            .demos
            .iter()
            .any(|d| d.input.trim().is_empty() || d.output.trim().is_empty())
        {
            out.push(Violation::EmptyDemoField);
        }
    }

    let gold = instance.gold();
    if gold.trim().is_empty() {
        out.push(Violation::EmptyGold);
    }
    match (instance.format, instance.candidates()) {
        (TaskFormat::Mcq, None) => out.push(Violation::MissingCandidates),
        (TaskFormat::Mcq, Some(c)) => match c.iter().filter(|x| x.as_str() == gold).count() {
            0 => out.push(Violation::GoldNotInCandidates),
            1 => {}
            _ => out.push(Violation::GoldRepeatedInCandidates),
        },
        (TaskFormat::Ftg, Some(_)) => out.push(Violation::CandidatesInFtg),
        (TaskFormat::Ftg, None) => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ekar(format: TaskFormat, gold: &str, candidates: Option<Vec<&str>>) -> TaskInstance {
        TaskInstance {
            id: "ekar-1".into(),
            dataset: DatasetKind::Ekar,
            modality: Modality::Textual,
            difficulty: Difficulty::Easy,
            format,
            body: TaskBody::Analogy(AnalogyInstance {
                source: ("sun".into(), "planet".into()),
                target: "nucleus".into(),
                gold: gold.into(),
                candidates: candidates.map(|c| c.into_iter().map(String::from).collect()),
                pattern_gold: None,
            }),
        }
    }

    #[test]
    fn well_formed_mcq_has_no_violations() {
        let inst = ekar(
            TaskFormat::Mcq,
            "electron",
            Some(vec!["proton", "electron", "photon"]),
        );
        assert!(validate_instance(&inst).is_empty());
    }

    #[test]
    fn gold_missing_from_candidates() {
        let inst = ekar(TaskFormat::Mcq, "electron", Some(vec!["proton", "photon"]));
        assert_eq!(
            validate_instance(&inst),
            vec![Violation::GoldNotInCandidates]
        );
    }

    #[test]
    fn empty_gold_in_ftg() {
        let inst = ekar(TaskFormat::Ftg, "", None);
        assert_eq!(validate_instance(&inst), vec![Violation::EmptyGold]);
    }

    #[test]
    fn duplicated_gold_is_flagged() {
        let inst = ekar(
            TaskFormat::Mcq,
            "electron",
            Some(vec!["electron", "electron"]),
        );
        assert_eq!(
            validate_instance(&inst),
            vec![Violation::GoldRepeatedInCandidates]
        );
    }

    #[test]
    fn visual_ftg_and_wrong_modality() {
        let mut inst = ekar(TaskFormat::Ftg, "img9.jpg", None);
        inst.dataset = DatasetKind::Vasr;
        let v = validate_instance(&inst);
        assert!(v.contains(&Violation::VisualNotMcq));
        assert!(v.contains(&Violation::ModalityMismatch));
    }

    #[test]
    fn validation_is_idempotent() {
        let inst = ekar(TaskFormat::Mcq, "x", Some(vec!["y"]));
        assert_eq!(validate_instance(&inst), validate_instance(&inst));
    }

    #[test]
    fn difficulty_is_totally_ordered() {
        assert!(Difficulty::Easy < Difficulty::Medium);
        assert!(Difficulty::Medium < Difficulty::Hard);
    }
}
