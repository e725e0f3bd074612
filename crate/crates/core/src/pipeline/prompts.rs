//! Prompt templates.
//!
//! Induction, automatic, abduction and deduction prompts reproduce the
//! published templates for each dataset family, filling only their slots.
//! Selection, verification and refinement prompts reuse the abduction
//! prompt's task statement and append a short instruction in the same
//! strict-JSON style.

use thiserror::Error;

use crate::gateway::Message;
use crate::model::{DatasetKind, Hypothesis, TaskBody, TaskFormat, TaskInstance};
use crate::raven;

pub const RESPONSE_LEAD: &str = "Your response should strictly follow the JSON dict format:";
pub const JSON_REMINDER: &str =
    "Your previous response could not be parsed. Respond with valid JSON only, using exactly the fields requested above.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Induction,
    Automatic,
    Abduction,
    Deduction,
    Selection,
    Verification,
    Refinement,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no {stage:?} template for {dataset} in {format} format")]
    NoTemplate {
        dataset: DatasetKind,
        stage: Stage,
        format: TaskFormat,
    },
    #[error("stage {0:?} needs a hypothesis")]
    MissingHypothesis(Stage),
    #[error("instance body does not match dataset {0}")]
    Body(DatasetKind),
}

/// Per-stage extras: the hypothesis under deduction, verification or
/// refinement; the candidates under selection.
#[derive(Debug, Default, Clone, Copy)]
pub struct StageInput<'a> {
    pub hypothesis: Option<&'a Hypothesis>,
    pub candidates: &'a [Hypothesis],
    pub allow_stop: bool,
    pub round: u32,
}

/// The field carrying the final answer for a dataset.
pub fn answer_field(dataset: DatasetKind) -> &'static str {
    match dataset {
        DatasetKind::Salt => "translation",
        _ => "answer",
    }
}

/// JSON fields an abduction reply must carry.
pub fn hypothesis_fields(dataset: DatasetKind) -> &'static [&'static str] {
    match dataset {
        DatasetKind::Listfn => &["function"],
        DatasetKind::Salt => &["vocabulary", "grammar"],
        _ => &["pattern"],
    }
}

fn label(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

fn options_block(title: &str, candidates: &[String]) -> String {
    let mut s = format!("{title}:\n");
    for (i, c) in candidates.iter().enumerate() {
        s.push_str(&format!("{}. {c}\n", label(i)));
    }
    s
}

fn mcq_options(inst: &TaskInstance) -> String {
    match (inst.format, inst.candidates()) {
        (TaskFormat::Mcq, Some(c)) => format!("{}\n", options_block("Options", c)),
        _ => String::new(),
    }
}

/// Renders a hypothesis the way deduction-style prompts quote it.
pub fn hypothesis_text(dataset: DatasetKind, h: &Hypothesis) -> String {
    match dataset {
        DatasetKind::Salt => format!(
            "Vocabulary mapping: {}; Syntax rules: {}",
            h.slot("vocabulary").unwrap_or(&h.text),
            h.slot("grammar").unwrap_or("")
        ),
        _ => h.text.clone(),
    }
}

struct Parts {
    header: String,
    body: String,
}

fn analogy_body(inst: &TaskInstance) -> Result<&crate::model::AnalogyInstance, PromptError> {
    match &inst.body {
        TaskBody::Analogy(a) => Ok(a),
        TaskBody::Icl(_) => Err(PromptError::Body(inst.dataset)),
    }
}

fn icl_body(inst: &TaskInstance) -> Result<&crate::model::IclInstance, PromptError> {
    match &inst.body {
        TaskBody::Icl(i) => Ok(i),
        TaskBody::Analogy(_) => Err(PromptError::Body(inst.dataset)),
    }
}

fn parts(
    inst: &TaskInstance,
    stage: Stage,
    hyp: Option<&Hypothesis>,
) -> Result<Parts, PromptError> {
    let abd = stage == Stage::Abduction;
    let pattern = hyp.map(|h| hypothesis_text(inst.dataset, h));
    match inst.dataset {
        DatasetKind::Ekar => {
            let a = analogy_body(inst)?;
            let mut header = String::from(
                "Below is an analogy question, where analogy x:y::x':y' exists between the two wordsets, ",
            );
            header.push_str(if abd {
                "your task is to infer the relational pattern within wordsets."
            } else {
                "your task is to finish the second wordset to complete the analogy."
            });
            if let Some(p) = pattern.filter(|_| stage == Stage::Deduction) {
                header.push_str(&format!(" Here's the relational pattern: {p}"));
            }
            let body = format!(
                "Wordset1: {}:{}\nWordset2: {}:[missing_word]\n  \n{}",
                a.source.0,
                a.source.1,
                a.target,
                mcq_options(inst)
            );
            Ok(Parts { header, body })
        }
        DatasetKind::Vasr => {
            let a = analogy_body(inst)?;
            let mut header = String::from(
                "Below is an analogy question, where analogy x:y::x':y' exists between the two image pairs, ",
            );
            header.push_str(if abd {
                "your task is to infer the relational pattern within image pairs."
            } else {
                "your task is to complete the second image pair to complete the analogy."
            });
            if let Some(p) = pattern.filter(|_| stage == Stage::Deduction) {
                header.push_str(&format!(" Here's the relational pattern: {p}"));
            }
            let candidates = a.candidates.as_deref().unwrap_or_default();
            let body = format!(
                "Image Pair 1: {}:{}\nImage Pair 2: {}:[missing_img]\n\n{}\n",
                a.source.0,
                a.source.1,
                a.target,
                options_block("Candidate Images", candidates)
            );
            Ok(Parts { header, body })
        }
        DatasetKind::Raven => {
            let a = analogy_body(inst)?;
            let mut header = String::from(
                "Below is a 3x3 matrix of abstracted symbols. The symbols follow a certain rule or pattern in rows. ",
            );
            header.push_str(if abd {
                "Your task is to infer the relational pattern."
            } else {
                "Your task is to infer the missing symbol."
            });
            if let Some(p) = pattern.filter(|_| stage == Stage::Deduction) {
                header.push_str(&format!(" Here's the relational pattern: {p}"));
            }
            let body = format!(
                "Incomplete Matrix: {}\n\n{}",
                raven::render_incomplete(&a.source, &a.target),
                mcq_options(inst)
            );
            Ok(Parts { header, body })
        }
        DatasetKind::Listfn => {
            let icl = icl_body(inst)?;
            let mut header = String::from(
                "Below are several examples of input and output lists. There exists an unified function that maps the input list to the output list.",
            );
            if let Some(p) = pattern.filter(|_| stage == Stage::Deduction) {
                header.push_str(&format!(" The python code for the function is: {p}"));
            }
            let mut body = String::from("\n");
            for (i, d) in icl.demos.iter().enumerate() {
                body.push_str(&format!(
                    "Input {n}: {}, Output {n}: {}\n",
                    d.input,
                    d.output,
                    n = i + 1
                ));
            }
            body.push('\n');
            if abd {
                body.push_str("Please infer the mapping function in python.\n");
            } else {
                body.push_str(&format!(
                    "Please infer the output list for the new input list below:\nNew Input: {}\n\n{}",
                    icl.test_input,
                    mcq_options(inst)
                ));
            }
            Ok(Parts { header, body })
        }
        DatasetKind::Salt => {
            let icl = icl_body(inst)?;
            let mut header = String::from(if abd {
                "You are required to study translations from english sentences to an artificial language.\nThe translation involves both vocabulary mapping and syntax rules transition."
            } else {
                "You are required to translate english sentences to an artificial language.\nThe translation involves both vocabulary mapping and syntax rules transition."
            });
            if let Some(p) = pattern.filter(|_| stage == Stage::Deduction) {
                header.push_str(&format!(" {p}."));
            }
            header.push_str(" Below are translation examples:");
            let mut body = String::from("\n");
            for (i, d) in icl.demos.iter().enumerate() {
                body.push_str(&format!(
                    "English {n}: {}, Translation {n}: {}\n",
                    d.input,
                    d.output,
                    n = i + 1
                ));
            }
            body.push('\n');
            if abd {
                body.push_str("Please infer the word mappings and syntax rules.\n");
            } else {
                body.push_str(&format!(
                    "Please translate this sentence: {}\n{}",
                    icl.test_input,
                    mcq_options(inst)
                ));
            }
            Ok(Parts { header, body })
        }
    }
}

fn answer_hint(dataset: DatasetKind) -> &'static str {
    match dataset {
        DatasetKind::Ekar => "missing word here",
        DatasetKind::Vasr => "missing image choice here",
        DatasetKind::Raven => "missing symbol here",
        DatasetKind::Listfn => "output list here",
        DatasetKind::Salt => "translated sentence here",
    }
}

fn schema_lines(dataset: DatasetKind, stage: Stage, allow_stop: bool) -> String {
    let field = answer_field(dataset);
    let answer = format!("    \"{field}\": \"{}\"", answer_hint(dataset));
    let reasoning = "    \"reasoning\":\"reasoning steps here\",";
    match stage {
        Stage::Induction => answer,
        Stage::Automatic | Stage::Deduction => format!("{reasoning}\n{answer}"),
        Stage::Abduction | Stage::Refinement => match dataset {
            // The textual template is reproduced as published, including
            // its missing comma.
            DatasetKind::Ekar => "    \"reasoning\": \"reasoning steps here\"\n    \"pattern\": \"relational pattern here\"".into(),
            DatasetKind::Vasr | DatasetKind::Raven => {
                format!("{reasoning}\n    \"pattern\": \"relational pattern here\"")
            }
            DatasetKind::Listfn => format!("{reasoning}\n    \"function\": \"python function here\""),
            DatasetKind::Salt => format!(
                "{reasoning}\n    \"vocabulary\": \"word mappings here\",\n    \"grammar\": \"syntax rules here\""
            ),
        },
        Stage::Selection => {
            format!("{reasoning}\n    \"choice\": \"number of the best hypothesis here\"")
        }
        Stage::Verification => {
            let verdict = if allow_stop {
                "valid, invalid or stop"
            } else {
                "valid or invalid"
            };
            format!("{reasoning}\n    \"verdict\": \"{verdict}\"")
        }
    }
}

fn schema(dataset: DatasetKind, stage: Stage, allow_stop: bool) -> String {
    let gap = if dataset == DatasetKind::Salt {
        "\n"
    } else {
        "\n\n"
    };
    format!(
        "{RESPONSE_LEAD}{gap}{{\n{}\n}}",
        schema_lines(dataset, stage, allow_stop)
    )
}

/// Builds the single user message for `stage`.
pub fn build_prompt(
    inst: &TaskInstance,
    stage: Stage,
    input: StageInput<'_>,
) -> Result<Vec<Message>, PromptError> {
    if inst.dataset == DatasetKind::Vasr && inst.format == TaskFormat::Ftg {
        return Err(PromptError::NoTemplate {
            dataset: inst.dataset,
            stage,
            format: inst.format,
        });
    }
    let needs_hyp = matches!(
        stage,
        Stage::Deduction | Stage::Verification | Stage::Refinement
    );
    if needs_hyp && input.hypothesis.is_none() {
        return Err(PromptError::MissingHypothesis(stage));
    }
    let text = match stage {
        Stage::Induction | Stage::Automatic | Stage::Abduction | Stage::Deduction => {
            let p = parts(inst, stage, input.hypothesis)?;
            format!(
                "{}\n{}{}",
                p.header,
                p.body,
                schema(inst.dataset, stage, false)
            )
        }
        Stage::Selection | Stage::Verification | Stage::Refinement => {
            let p = parts(inst, Stage::Abduction, None)?;
            let mut s = format!("{}\n{}\n", p.header, p.body);
            match stage {
                Stage::Selection => {
                    s.push_str("Candidate hypotheses:\n");
                    for (i, h) in input.candidates.iter().enumerate() {
                        s.push_str(&format!(
                            "Hypothesis {}: {}\n",
                            i + 1,
                            hypothesis_text(inst.dataset, h)
                        ));
                    }
                    s.push_str("\nSelect the hypothesis that best explains the examples.\n");
                }
                Stage::Verification => {
                    let h = input.hypothesis.expect("checked above");
                    s.push_str(&format!(
                        "Hypothesis: {}\n\nVerify whether the hypothesis is consistent with every example above.",
                        hypothesis_text(inst.dataset, h)
                    ));
                    if input.allow_stop {
                        s.push_str(" Answer \"stop\" if the hypothesis needs no further revision.");
                    }
                    s.push('\n');
                }
                _ => {
                    let h = input.hypothesis.expect("checked above");
                    s.push_str(&format!(
                        "Hypothesis: {}\nThe hypothesis is inconsistent with the examples. Revision round: {}\nPlease propose a revised hypothesis.\n",
                        hypothesis_text(inst.dataset, h),
                        input.round
                    ));
                }
            }
            s.push_str(&schema(inst.dataset, stage, input.allow_stop));
            s
        }
    };
    Ok(vec![Message::user(text)])
}

/// Inserts `length` whitespace-separated filler words in a reasoning line
/// placed just before the response-format instruction of the last message.
pub fn inject_dummy_tokens(messages: &[Message], length: usize, filler: &str) -> Vec<Message> {
    let mut out = messages.to_vec();
    if length == 0 {
        return out;
    }
    let words: Vec<&str> = filler.split_whitespace().collect();
    let words = if words.is_empty() { vec!["hmm"] } else { words };
    let text: Vec<&str> = words.iter().copied().cycle().take(length).collect();
    let block = format!("Reasoning: {}\n", text.join(" "));
    if let Some(last) = out.last_mut() {
        match last.content.rfind(RESPONSE_LEAD) {
            Some(i) => last.content.insert_str(i, &block),
            None => {
                last.content.push('\n');
                last.content.push_str(&block);
            }
        }
    }
    out
}
