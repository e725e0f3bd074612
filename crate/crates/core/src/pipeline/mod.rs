//! Inference pipelines: induction, automatic (zero-shot CoT), abduction +
//! deduction, hypothesis selection, verify-and-refine, adaptive scaling and
//! the probes used for the abduction/deduction decoupling analysis.
//!
//! Stages within one instance run strictly in sequence. Batches run on a
//! bounded rayon pool and come back in input order.

pub mod prompts;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    ChatRequest, Endpoint, GatewayError, Message, UsageLedger, DEFAULT_MAX_TOKENS,
    MAIN_TEMPERATURE, SAMPLING_TEMPERATURE,
};
use crate::listfn::Registry;
use crate::model::{DatasetKind, Hypothesis, HypothesisOrigin, TaskBody, TaskInstance};
use crate::scoring::{self, RunRecord};
use crate::seeding;

pub use prompts::{build_prompt, inject_dummy_tokens, PromptError, Stage, StageInput};

pub const MAX_MALFORMED_RETRIES: u32 = 2;
pub const MAX_SAMPLES: u32 = 10;
pub const MAX_ROUNDS: u32 = 5;
pub const DEFAULT_FILLER: &str = "hmm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Low,
    High,
}

impl Budget {
    pub fn candidates(self) -> u32 {
        match self {
            Budget::Low => 3,
            Budget::High => 5,
        }
    }

    pub fn max_rounds(self) -> u32 {
        match self {
            Budget::Low => 3,
            Budget::High => 5,
        }
    }
}

impl FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Budget::Low),
            "high" => Ok(Budget::High),
            _ => Err(format!("unknown budget `{s}` (expected low|high)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineKind {
    Induction,
    Automatic,
    AbdDed,
    Selection {
        k: u32,
    },
    Refinement {
        rounds: u32,
    },
    Adaptive {
        budget: Budget,
    },
    /// One abduction call; scored by executing the hypothesis.
    ProbeAbduction,
    /// Deduction given the ground-truth function.
    ProbeGoldDeduction,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KindError {
    #[error("unknown pipeline `{0}`")]
    Unknown(String),
    #[error("selection needs 1 <= k <= 10, got {0}")]
    K(u32),
    #[error("refinement needs 0 <= rounds <= 5, got {0}")]
    Rounds(u32),
    #[error("pipeline `{0}` needs --{1}")]
    MissingParam(String, &'static str),
}

impl PipelineKind {
    /// Builds a kind from a CLI name plus its parameter flags.
    pub fn from_parts(
        name: &str,
        k: Option<u32>,
        rounds: Option<u32>,
        budget: Option<Budget>,
    ) -> Result<PipelineKind, KindError> {
        let kind = match name {
            "induction" => PipelineKind::Induction,
            "automatic" => PipelineKind::Automatic,
            "abd_ded" | "abd-ded" => PipelineKind::AbdDed,
            "selection" => PipelineKind::Selection {
                k: k.ok_or_else(|| KindError::MissingParam(name.into(), "k"))?,
            },
            "refinement" => PipelineKind::Refinement {
                rounds: rounds.ok_or_else(|| KindError::MissingParam(name.into(), "rounds"))?,
            },
            "adaptive" => PipelineKind::Adaptive {
                budget: budget.ok_or_else(|| KindError::MissingParam(name.into(), "budget"))?,
            },
            "probe_abduction" => PipelineKind::ProbeAbduction,
            "probe_gold_deduction" => PipelineKind::ProbeGoldDeduction,
            other => return Err(KindError::Unknown(other.into())),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(self) -> Result<(), KindError> {
        match self {
            PipelineKind::Selection { k } if !(1..=MAX_SAMPLES).contains(&k) => {
                Err(KindError::K(k))
            }
            PipelineKind::Refinement { rounds } if rounds > MAX_ROUNDS => {
                Err(KindError::Rounds(rounds))
            }
            _ => Ok(()),
        }
    }

    pub fn display_name(self) -> String {
        match self {
            PipelineKind::Induction => "Induction".into(),
            PipelineKind::Automatic => "Automatic".into(),
            PipelineKind::AbdDed => "Abduction+Deduction".into(),
            PipelineKind::Selection { k } => format!("Selection (k={k})"),
            PipelineKind::Refinement { rounds } => format!("Refinement (rounds={rounds})"),
            PipelineKind::Adaptive {
                budget: Budget::Low,
            } => "Sys2 Scaling (low)".into(),
            PipelineKind::Adaptive {
                budget: Budget::High,
            } => "Sys2 Scaling (high)".into(),
            PipelineKind::ProbeAbduction => "Abduction probe".into(),
            PipelineKind::ProbeGoldDeduction => "Deduction probe".into(),
        }
    }

    pub fn has_rounds(self) -> bool {
        matches!(
            self,
            PipelineKind::Refinement { .. } | PipelineKind::Adaptive { .. }
        )
    }

    pub(crate) fn sort_key(self) -> (u8, u32) {
        match self {
            PipelineKind::Induction => (0, 0),
            PipelineKind::Automatic => (1, 0),
            PipelineKind::AbdDed => (2, 0),
            PipelineKind::Selection { k } => (3, k),
            PipelineKind::Refinement { rounds } => (4, rounds),
            PipelineKind::Adaptive { budget } => (5, budget as u32),
            PipelineKind::ProbeAbduction => (6, 0),
            PipelineKind::ProbeGoldDeduction => (7, 0),
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineKind::Induction => f.write_str("induction"),
            PipelineKind::Automatic => f.write_str("automatic"),
            PipelineKind::AbdDed => f.write_str("abd_ded"),
            PipelineKind::Selection { k } => write!(f, "selection({k})"),
            PipelineKind::Refinement { rounds } => write!(f, "refinement({rounds})"),
            PipelineKind::Adaptive { budget } => {
                write!(
                    f,
                    "adaptive({})",
                    if *budget == Budget::Low {
                        "low"
                    } else {
                        "high"
                    }
                )
            }
            PipelineKind::ProbeAbduction => f.write_str("probe_abduction"),
            PipelineKind::ProbeGoldDeduction => f.write_str("probe_gold_deduction"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No answer could be extracted; scored incorrect.
    Unanswered,
    /// Abduction produced no usable hypothesis; deduction skipped.
    AbductionFailed,
    /// A sampled candidate was unparseable and dropped.
    CandidateDropped,
    /// Selection reply was not a valid index; candidate 1 used.
    SelectionFallback,
    /// Verdict unparseable; treated as invalid.
    UnparseableVerdict,
    /// Refinement reply unparseable; previous hypothesis kept.
    RefinementFailed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub final_answer: Option<String>,
    pub hypothesis_trail: Vec<Hypothesis>,
    /// Sampled hypotheses offered to the selection stage, in sampled order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Hypothesis>,
    pub calls: u32,
    pub rounds_used: u32,
    pub ledger: UsageLedger,
    pub malformed_retries: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
}

impl PipelineResult {
    fn flag(&mut self, f: Flag) {
        self.flags.push(f);
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Kind(#[from] KindError),
    #[error("{pipeline} is not supported for {dataset}: {reason}")]
    Unsupported {
        pipeline: PipelineKind,
        dataset: DatasetKind,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerConfig {
    pub model: String,
    pub seed: u64,
    pub max_output_tokens: u32,
    pub dummy_tokens: usize,
    pub filler: String,
    pub main_temperature: f64,
    pub sampling_temperature: f64,
}

impl RunnerConfig {
    pub fn new(model: impl Into<String>, seed: u64) -> Self {
        RunnerConfig {
            model: model.into(),
            seed,
            max_output_tokens: DEFAULT_MAX_TOKENS,
            dummy_tokens: 0,
            filler: DEFAULT_FILLER.into(),
            main_temperature: MAIN_TEMPERATURE,
            sampling_temperature: SAMPLING_TEMPERATURE,
        }
    }
}

pub struct Runner<'a> {
    endpoint: &'a dyn Endpoint,
    pub config: RunnerConfig,
}

enum Verdict {
    Valid,
    Invalid,
    Stop,
}

impl<'a> Runner<'a> {
    pub fn new(endpoint: &'a dyn Endpoint, config: RunnerConfig) -> Self {
        Runner { endpoint, config }
    }

    /// Sends `messages`, re-asking up to twice when any of `fields` cannot
    /// be extracted. Every call, retries included, is ledgered.
    fn ask(
        &self,
        res: &mut PipelineResult,
        messages: Vec<Message>,
        temperature: f64,
        seed: Option<u64>,
        label: &str,
        fields: &[&str],
    ) -> Result<Option<Vec<String>>, GatewayError> {
        let mut messages = messages;
        for attempt in 0..=MAX_MALFORMED_RETRIES {
            let req = ChatRequest {
                model: self.config.model.clone(),
                messages: messages.clone(),
                temperature,
                max_output_tokens: self.config.max_output_tokens,
                seed,
            };
            let resp = self.endpoint.complete(&req)?;
            res.calls += 1;
            res.ledger.record(&resp, label, attempt > 0);
            if attempt > 0 {
                res.malformed_retries += 1;
            }
            let got: Result<Vec<String>, _> = fields
                .iter()
                .map(|f| scoring::extract_json_text(&resp.text, f))
                .collect();
            match got {
                Ok(v) => return Ok(Some(v)),
                Err(e) => {
                    tracing::debug!(label, attempt, error = %e, "malformed reply");
                    messages.push(Message::assistant(resp.text));
                    messages.push(Message::user(prompts::JSON_REMINDER));
                }
            }
        }
        Ok(None)
    }

    fn answer_stage(
        &self,
        inst: &TaskInstance,
        stage: Stage,
        hyp: Option<&Hypothesis>,
        res: &mut PipelineResult,
    ) -> Result<(), PipelineError> {
        let msgs = build_prompt(
            inst,
            stage,
            StageInput {
                hypothesis: hyp,
                ..Default::default()
            },
        )?;
        let msgs = inject_dummy_tokens(&msgs, self.config.dummy_tokens, &self.config.filler);
        let field = prompts::answer_field(inst.dataset);
        let label = match stage {
            Stage::Induction => "induction",
            Stage::Automatic => "automatic",
            _ => "deduction",
        };
        match self.ask(
            res,
            msgs,
            self.config.main_temperature,
            None,
            label,
            &[field],
        )? {
            Some(mut v) => res.final_answer = Some(v.remove(0)),
            None => res.flag(Flag::Unanswered),
        }
        Ok(())
    }

    fn hypothesis_from(
        &self,
        inst: &TaskInstance,
        values: Vec<String>,
        origin: HypothesisOrigin,
    ) -> Hypothesis {
        let names = prompts::hypothesis_fields(inst.dataset);
        let slots: Vec<(String, String)> =
            names.iter().map(|n| n.to_string()).zip(values).collect();
        let text = if inst.dataset == DatasetKind::Salt {
            format!(
                "Vocabulary mapping: {}; Syntax rules: {}",
                slots[0].1, slots[1].1
            )
        } else {
            slots[0].1.clone()
        };
        Hypothesis {
            text,
            kind: inst.dataset.hypothesis_kind(),
            origin,
            slots,
        }
    }

    /// Abduction or refinement call. `sample_seed` switches to the sampling
    /// temperature with that request seed.
    fn abduce(
        &self,
        inst: &TaskInstance,
        res: &mut PipelineResult,
        stage: Stage,
        input: StageInput<'_>,
        origin: HypothesisOrigin,
        sample_seed: Option<u64>,
    ) -> Result<Option<Hypothesis>, PipelineError> {
        let msgs = build_prompt(inst, stage, input)?;
        let fields = prompts::hypothesis_fields(inst.dataset);
        let temperature = match sample_seed {
            Some(_) => self.config.sampling_temperature,
            None => self.config.main_temperature,
        };
        let label = if stage == Stage::Refinement {
            "refinement"
        } else {
            "abduction"
        };
        Ok(self
            .ask(res, msgs, temperature, sample_seed, label, fields)?
            .map(|v| self.hypothesis_from(inst, v, origin)))
    }

    fn sample_seed(&self, inst: &TaskInstance, i: u32) -> u64 {
        seeding::derive_seed(self.config.seed, &["sample", &inst.id, &i.to_string()])
    }

    /// `n` sampled abductions, then a selection call when more than one
    /// survived.
    fn select(
        &self,
        inst: &TaskInstance,
        n: u32,
        res: &mut PipelineResult,
    ) -> Result<Option<Hypothesis>, PipelineError> {
        let mut cands = Vec::new();
        for i in 0..n {
            let seed = Some(self.sample_seed(inst, i));
            match self.abduce(
                inst,
                res,
                Stage::Abduction,
                StageInput::default(),
                HypothesisOrigin::Abduction,
                seed,
            )? {
                Some(h) => cands.push(h),
                None => res.flag(Flag::CandidateDropped),
            }
        }
        if cands.is_empty() {
            res.flag(Flag::AbductionFailed);
            return Ok(None);
        }
        if n == 1 || cands.len() == 1 {
            return Ok(cands.pop());
        }
        let msgs = build_prompt(
            inst,
            Stage::Selection,
            StageInput {
                candidates: &cands,
                ..Default::default()
            },
        )?;
        let choice = self.ask(
            res,
            msgs,
            self.config.main_temperature,
            None,
            "selection",
            &["choice"],
        )?;
        let idx = choice
            .and_then(|v| v[0].trim().parse::<usize>().ok())
            .filter(|i| (1..=cands.len()).contains(i));
        let idx = match idx {
            Some(i) => i - 1,
            None => {
                res.flag(Flag::SelectionFallback);
                0
            }
        };
        let chosen = cands[idx].with_origin(HypothesisOrigin::Selection);
        res.candidates = cands;
        Ok(Some(chosen))
    }

    fn verify(
        &self,
        inst: &TaskInstance,
        h: &Hypothesis,
        allow_stop: bool,
        round: u32,
        res: &mut PipelineResult,
    ) -> Result<Verdict, PipelineError> {
        let msgs = build_prompt(
            inst,
            Stage::Verification,
            StageInput {
                hypothesis: Some(h),
                allow_stop,
                round,
                ..Default::default()
            },
        )?;
        let v = self.ask(
            res,
            msgs,
            self.config.main_temperature,
            None,
            "verification",
            &["verdict"],
        )?;
        let verdict = v.map(|mut v| v.remove(0).trim().to_lowercase());
        Ok(match verdict.as_deref() {
            Some("valid") => Verdict::Valid,
            Some("invalid") => Verdict::Invalid,
            Some("stop") if allow_stop => Verdict::Stop,
            _ => {
                res.flag(Flag::UnparseableVerdict);
                Verdict::Invalid
            }
        })
    }

    /// Verify-and-refine loop over `h`, at most `max_rounds` verifications.
    fn refine(
        &self,
        inst: &TaskInstance,
        h: Hypothesis,
        max_rounds: u32,
        allow_stop: bool,
        res: &mut PipelineResult,
    ) -> Result<Hypothesis, PipelineError> {
        let mut current = h;
        for round in 1..=max_rounds {
            res.rounds_used = round;
            match self.verify(inst, &current, allow_stop, round, res)? {
                Verdict::Valid | Verdict::Stop => break,
                Verdict::Invalid => {}
            }
            let revised = self.abduce(
                inst,
                res,
                Stage::Refinement,
                StageInput {
                    hypothesis: Some(&current),
                    round,
                    ..Default::default()
                },
                HypothesisOrigin::Refinement(round),
                None,
            )?;
            match revised {
                Some(r) => {
                    res.hypothesis_trail.push(r.clone());
                    current = r;
                }
                None => res.flag(Flag::RefinementFailed),
            }
        }
        Ok(current)
    }

    fn gold_hypothesis(&self, inst: &TaskInstance) -> Result<Hypothesis, PipelineError> {
        let unsupported = |reason| PipelineError::Unsupported {
            pipeline: PipelineKind::ProbeGoldDeduction,
            dataset: inst.dataset,
            reason,
        };
        let (slot, text) = match (&inst.body, inst.dataset) {
            (TaskBody::Icl(icl), DatasetKind::Listfn) => {
                let id: u32 = icl
                    .function_id
                    .parse()
                    .map_err(|_| unsupported("function id is not a registry id"))?;
                let f = Registry::bundled()
                    .get(id)
                    .map_err(|_| unsupported("function id not in registry"))?;
                ("function", f.program.to_string())
            }
            (TaskBody::Analogy(a), _) => (
                "pattern",
                a.pattern_gold
                    .clone()
                    .ok_or_else(|| unsupported("instance has no gold pattern"))?,
            ),
            _ => return Err(unsupported("no ground-truth hypothesis")),
        };
        Ok(Hypothesis {
            text: text.clone(),
            kind: inst.dataset.hypothesis_kind(),
            origin: HypothesisOrigin::Gold,
            slots: vec![(slot.to_string(), text)],
        })
    }

    pub fn run(
        &self,
        inst: &TaskInstance,
        kind: PipelineKind,
    ) -> Result<PipelineResult, PipelineError> {
        kind.validate()?;
        let mut res = PipelineResult::default();
        let hypothesis = match kind {
            PipelineKind::Induction => {
                self.answer_stage(inst, Stage::Induction, None, &mut res)?;
                return Ok(res);
            }
            PipelineKind::Automatic => {
                self.answer_stage(inst, Stage::Automatic, None, &mut res)?;
                return Ok(res);
            }
            PipelineKind::ProbeGoldDeduction => {
                let h = self.gold_hypothesis(inst)?;
                res.hypothesis_trail.push(h.clone());
                self.answer_stage(inst, Stage::Deduction, Some(&h), &mut res)?;
                return Ok(res);
            }
            PipelineKind::AbdDed
            | PipelineKind::ProbeAbduction
            | PipelineKind::Refinement { .. } => {
                let h = self.abduce(
                    inst,
                    &mut res,
                    Stage::Abduction,
                    StageInput::default(),
                    HypothesisOrigin::Abduction,
                    None,
                )?;
                match h {
                    Some(h) => {
                        res.hypothesis_trail.push(h.clone());
                        match kind {
                            PipelineKind::ProbeAbduction => return Ok(res),
                            PipelineKind::Refinement { rounds } => {
                                self.refine(inst, h, rounds, false, &mut res)?
                            }
                            _ => h,
                        }
                    }
                    None => {
                        res.flag(Flag::AbductionFailed);
                        res.flag(Flag::Unanswered);
                        return Ok(res);
                    }
                }
            }
            PipelineKind::Selection { k } => match self.select(inst, k, &mut res)? {
                Some(h) => {
                    res.hypothesis_trail.push(h.clone());
                    h
                }
                None => {
                    res.flag(Flag::Unanswered);
                    return Ok(res);
                }
            },
            PipelineKind::Adaptive { budget } => {
                match self.select(inst, budget.candidates(), &mut res)? {
                    Some(h) => {
                        res.hypothesis_trail.push(h.clone());
                        self.refine(inst, h, budget.max_rounds(), true, &mut res)?
                    }
                    None => {
                        res.flag(Flag::Unanswered);
                        return Ok(res);
                    }
                }
            }
        };
        self.answer_stage(inst, Stage::Deduction, Some(&hypothesis), &mut res)?;
        Ok(res)
    }

    /// Runs and scores one instance.
    pub fn record(
        &self,
        inst: &TaskInstance,
        kind: PipelineKind,
        timestamp: u64,
    ) -> Result<RunRecord, PipelineError> {
        let res = self.run(inst, kind)?;
        Ok(RunRecord::new(
            inst,
            kind,
            &self.config.model,
            self.config.seed,
            self.config.dummy_tokens,
            res,
            timestamp,
        ))
    }
}

/// Runs every instance on a pool of `parallelism` workers. Output order
/// follows input order regardless of completion order.
pub fn run_batch(
    runner: &Runner<'_>,
    instances: &[TaskInstance],
    kind: PipelineKind,
    parallelism: usize,
    timestamp: u64,
) -> Vec<Result<RunRecord, PipelineError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        instances
            .par_iter()
            .map(|inst| runner.record(inst, kind, timestamp))
            .collect()
    })
}

#[cfg(test)]
mod tests;
