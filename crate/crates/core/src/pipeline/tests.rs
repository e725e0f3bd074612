use std::sync::{Arc, Mutex};

use super::*;
use crate::gateway::{ChatResponse, Matcher, Reply, ScriptedEndpoint};
use crate::model::{AnalogyInstance, Demo, Difficulty, IclInstance, Modality, TaskFormat};

fn ekar(id: &str) -> TaskInstance {
    TaskInstance {
        id: id.into(),
        dataset: DatasetKind::Ekar,
        modality: Modality::Textual,
        difficulty: Difficulty::Easy,
        format: TaskFormat::Ftg,
        body: TaskBody::Analogy(AnalogyInstance {
            source: ("sun".into(), "planet".into()),
            target: "nucleus".into(),
            gold: "electron".into(),
            candidates: None,
            pattern_gold: None,
        }),
    }
}

fn listfn_inst() -> TaskInstance {
    TaskInstance {
        id: "l1".into(),
        dataset: DatasetKind::Listfn,
        modality: Modality::MathCode,
        difficulty: Difficulty::Easy,
        format: TaskFormat::Ftg,
        body: TaskBody::Icl(IclInstance {
            demos: vec![
                Demo {
                    input: "[1, 2]".into(),
                    output: "[2, 1]".into(),
                },
                Demo {
                    input: "[5, 6, 7]".into(),
                    output: "[7, 6, 5]".into(),
                },
            ],
            test_input: "[3, 4]".into(),
            gold_output: "[4, 3]".into(),
            function_id: "2".into(),
            candidates: None,
        }),
    }
}

/// Records every request and answers with `f`.
struct Recording<F> {
    f: F,
    seen: Mutex<Vec<ChatRequest>>,
}

impl<F: Fn(&ChatRequest, usize) -> String + Send + Sync> Recording<F> {
    fn new(f: F) -> Self {
        Recording {
            f,
            seen: Mutex::new(Vec::new()),
        }
    }

    fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl<F: Fn(&ChatRequest, usize) -> String + Send + Sync> Endpoint for Recording<F> {
    fn complete(&self, r: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut seen = self.seen.lock().unwrap();
        let text = (self.f)(r, seen.len());
        seen.push(r.clone());
        Ok(ChatResponse {
            prompt_tokens: 10,
            completion_tokens: text.len() as u64,
            text,
            latency_ms: 0,
            endpoint: "rec".into(),
        })
    }

    fn tag(&self) -> &str {
        "rec"
    }
}

fn last_prompt(r: &ChatRequest) -> &str {
    &r.messages.last().unwrap().content
}

/// Answers by stage, recognised from the prompt text.
fn oracle(r: &ChatRequest, _: usize) -> String {
    let p = last_prompt(r);
    if p.contains("\"choice\"") {
        r#"{"choice": "2"}"#.into()
    } else if p.contains("\"verdict\"") {
        r#"{"verdict": "valid"}"#.into()
    } else if p.contains("\"pattern\"") {
        r#"{"reasoning": "r", "pattern": "orbits"}"#.into()
    } else if p.contains("\"function\"") {
        r#"{"function": "reverse"}"#.into()
    } else {
        r#"{"reasoning": "r", "answer": "electron"}"#.into()
    }
}

fn runner(ep: &dyn Endpoint) -> Runner<'_> {
    Runner::new(ep, RunnerConfig::new("test-model", 7))
}

#[test]
fn textual_induction_prompt_is_verbatim() {
    let msgs = build_prompt(&ekar("x"), Stage::Induction, StageInput::default()).unwrap();
    assert_eq!(
        msgs[0].content,
        "Below is an analogy question, where analogy x:y::x':y' exists between the two wordsets, your task is to finish the second wordset to complete the analogy.\n\
Wordset1: sun:planet\n\
Wordset2: nucleus:[missing_word]\n  \n\
Your response should strictly follow the JSON dict format:\n\n{\n    \"answer\": \"missing word here\"\n}"
    );
}

#[test]
fn stage_templates_carry_their_slots() {
    let auto = build_prompt(&ekar("x"), Stage::Automatic, StageInput::default()).unwrap();
    assert!(auto[0]
        .content
        .contains("\"reasoning\":\"reasoning steps here\""));

    let abd = build_prompt(&listfn_inst(), Stage::Abduction, StageInput::default()).unwrap();
    assert!(abd[0]
        .content
        .contains("\"function\": \"python function here\""));
    assert!(abd[0]
        .content
        .contains("Please infer the mapping function in python."));
    assert!(abd[0]
        .content
        .contains("Input 2: [5, 6, 7], Output 2: [7, 6, 5]"));
    assert!(!abd[0].content.contains("New Input"));

    let h = Hypothesis {
        text: "colour progresses".into(),
        kind: crate::model::HypothesisKind::FreeTextPattern,
        origin: HypothesisOrigin::Abduction,
        slots: vec![],
    };
    let puzzle =
        crate::raven::generate_matrix(crate::raven::Configuration::CenterSingle, 1, 3).unwrap();
    let inst = puzzle.to_instance("r", TaskFormat::Ftg);
    let ded = build_prompt(
        &inst,
        Stage::Deduction,
        StageInput {
            hypothesis: Some(&h),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(ded[0]
        .content
        .contains("Here's the relational pattern: colour progresses"));
    assert!(ded[0].content.contains("Incomplete Matrix:"));
    assert!(build_prompt(&inst, Stage::Deduction, StageInput::default()).is_err());
}

#[test]
fn mcq_prompts_list_options() {
    let mut inst = ekar("x");
    inst.format = TaskFormat::Mcq;
    if let TaskBody::Analogy(a) = &mut inst.body {
        a.candidates = Some(vec!["proton".into(), "electron".into()]);
    }
    let p = build_prompt(&inst, Stage::Induction, StageInput::default()).unwrap();
    assert!(p[0].content.contains("Options:\nA. proton\nB. electron\n"));
}

#[test]
fn induction_single_call() {
    let ep = ScriptedEndpoint::new(vec![(
        Matcher::Contains("Wordset1".into()),
        Reply::Repeat(r#"{"answer":"electron"}"#.into()),
    )])
    .unwrap();
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Induction)
        .unwrap();
    assert_eq!(res.final_answer.as_deref(), Some("electron"));
    assert_eq!(res.calls, 1);
    assert!(res.hypothesis_trail.is_empty());
    assert_eq!(res.ledger.len(), 1);
    assert_eq!(
        res.ledger.total_tokens(),
        res.ledger.entries()[0].prompt_tokens + res.ledger.entries()[0].completion_tokens
    );
}

#[test]
fn malformed_replies_are_retried_and_ledgered() {
    let ep = ScriptedEndpoint::new(vec![(
        Matcher::Always,
        Reply::Sequence(vec![
            "nope".into(),
            "{broken".into(),
            r#"{"answer":"electron"}"#.into(),
        ]),
    )])
    .unwrap();
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Induction)
        .unwrap();
    assert_eq!(res.final_answer.as_deref(), Some("electron"));
    assert_eq!(res.malformed_retries, 2);
    assert_eq!(res.calls, 3);
    assert_eq!(res.ledger.entries().iter().filter(|e| e.retry).count(), 2);

    let ep = ScriptedEndpoint::new(vec![(Matcher::Always, Reply::Repeat("nope".into()))]).unwrap();
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Induction)
        .unwrap();
    assert_eq!(res.final_answer, None);
    assert_eq!(res.calls, 3);
    assert!(res.flags.contains(&Flag::Unanswered));
}

#[test]
fn automatic_missing_answer_is_unanswered() {
    let ep = ScriptedEndpoint::new(vec![(
        Matcher::Always,
        Reply::Repeat(r#"{"reasoning":"..."}"#.into()),
    )])
    .unwrap();
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Automatic)
        .unwrap();
    assert!(res.flags.contains(&Flag::Unanswered));

    let ep = ScriptedEndpoint::new(vec![(
        Matcher::Always,
        Reply::Repeat(r#"{"reasoning":"...","answer":"B"}"#.into()),
    )])
    .unwrap();
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Automatic)
        .unwrap();
    assert_eq!((res.final_answer.as_deref(), res.calls), (Some("B"), 1));
}

#[test]
fn abd_ded_two_calls_with_hypothesis_embedded() {
    let ep = Recording::new(oracle);
    let res = runner(&ep).run(&ekar("x"), PipelineKind::AbdDed).unwrap();
    assert_eq!(res.calls, 2);
    assert_eq!(res.hypothesis_trail.len(), 1);
    assert_eq!(res.hypothesis_trail[0].text, "orbits");
    let reqs = ep.requests();
    assert!(last_prompt(&reqs[1]).contains("Here's the relational pattern: orbits"));
    assert!(reqs.iter().all(|r| r.temperature == 0.0));
    let labels: Vec<&str> = res
        .ledger
        .entries()
        .iter()
        .map(|e| e.label.as_str())
        .collect();
    assert_eq!(labels, ["abduction", "deduction"]);
}

#[test]
fn failed_abduction_skips_deduction() {
    let ep = ScriptedEndpoint::new(vec![(Matcher::Always, Reply::Repeat("???".into()))]).unwrap();
    let res = runner(&ep).run(&ekar("x"), PipelineKind::AbdDed).unwrap();
    assert_eq!(res.calls, 1 + MAX_MALFORMED_RETRIES);
    assert!(res.flags.contains(&Flag::AbductionFailed));
    assert_eq!(res.final_answer, None);
}

#[test]
fn selection_call_counts_and_seeds() {
    for (k, calls) in [(1, 2), (3, 5), (10, 12)] {
        let ep = Recording::new(oracle);
        let res = runner(&ep)
            .run(&ekar("x"), PipelineKind::Selection { k })
            .unwrap();
        assert_eq!(res.calls, calls, "k={k}");
        let reqs = ep.requests();
        let samples: Vec<&ChatRequest> = reqs.iter().filter(|r| r.temperature == 0.4).collect();
        assert_eq!(samples.len(), k as usize);
        let seeds: std::collections::BTreeSet<_> =
            samples.iter().map(|r| r.seed.unwrap()).collect();
        assert_eq!(seeds.len(), k as usize);
        let has_selection = reqs.iter().any(|r| last_prompt(r).contains("\"choice\""));
        assert_eq!(has_selection, k > 1);
    }
}

#[test]
fn selection_picks_the_requested_candidate_or_falls_back() {
    let ep = Recording::new(|r: &ChatRequest, _| {
        let p = last_prompt(r);
        if p.contains("\"choice\"") {
            r#"{"choice": 2}"#.into()
        } else if p.contains("\"pattern\"") {
            format!(r#"{{"pattern": "p{}"}}"#, r.seed.unwrap() % 1000)
        } else {
            r#"{"answer": "a"}"#.into()
        }
    });
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Selection { k: 3 })
        .unwrap();
    assert_eq!(res.candidates.len(), 3);
    assert_eq!(res.hypothesis_trail[0].text, res.candidates[1].text);
    assert_eq!(res.hypothesis_trail[0].origin, HypothesisOrigin::Selection);

    let ep = Recording::new(|r: &ChatRequest, _| {
        if last_prompt(r).contains("\"choice\"") {
            r#"{"choice": "9"}"#.into()
        } else {
            oracle(r, 0)
        }
    });
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Selection { k: 2 })
        .unwrap();
    assert!(res.flags.contains(&Flag::SelectionFallback));
    assert_eq!(res.calls, 4);
}

#[test]
fn refinement_zero_matches_abd_ded() {
    let a = Recording::new(oracle);
    let b = Recording::new(oracle);
    let ra = runner(&a).run(&ekar("x"), PipelineKind::AbdDed).unwrap();
    let rb = runner(&b)
        .run(&ekar("x"), PipelineKind::Refinement { rounds: 0 })
        .unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.requests(), b.requests());
}

#[test]
fn refinement_invalid_then_valid() {
    let verdicts = Arc::new(Mutex::new(vec!["valid", "invalid"]));
    let v = verdicts.clone();
    let ep = Recording::new(move |r: &ChatRequest, _| {
        let p = last_prompt(r);
        if p.contains("\"verdict\"") {
            format!(r#"{{"verdict": "{}"}}"#, v.lock().unwrap().pop().unwrap())
        } else if p.contains("Revision round: 1") {
            r#"{"pattern": "revised"}"#.into()
        } else {
            oracle(r, 0)
        }
    });
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Refinement { rounds: 5 })
        .unwrap();
    assert_eq!(res.rounds_used, 2);
    assert_eq!(res.hypothesis_trail.len(), 2);
    assert_eq!(
        res.hypothesis_trail[1].origin,
        HypothesisOrigin::Refinement(1)
    );
    assert!(last_prompt(ep.requests().last().unwrap()).contains("relational pattern: revised"));
    // abduction + 2 verifications + 1 refinement + deduction
    assert_eq!(res.calls, 5);
}

#[test]
fn unparseable_verdict_counts_as_invalid() {
    let ep = Recording::new(|r: &ChatRequest, _| {
        if last_prompt(r).contains("\"verdict\"") {
            r#"{"verdict": "maybe"}"#.into()
        } else {
            oracle(r, 0)
        }
    });
    let res = runner(&ep)
        .run(&ekar("x"), PipelineKind::Refinement { rounds: 2 })
        .unwrap();
    assert_eq!(res.rounds_used, 2);
    assert!(res.flags.contains(&Flag::UnparseableVerdict));
    assert_eq!(res.hypothesis_trail.len(), 3);
}

fn adaptive_oracle(stop: bool) -> impl Fn(&ChatRequest, usize) -> String + Send + Sync {
    move |r: &ChatRequest, _| {
        let p = last_prompt(r);
        if p.contains("\"verdict\"") {
            assert!(p.contains("valid, invalid or stop"));
            if stop {
                r#"{"verdict": "stop"}"#.into()
            } else {
                r#"{"verdict": "invalid"}"#.into()
            }
        } else if p.contains("Revision round") {
            r#"{"pattern": "again"}"#.into()
        } else {
            oracle(r, 0)
        }
    }
}

#[test]
fn adaptive_budgets() {
    let ep = Recording::new(adaptive_oracle(true));
    let res = runner(&ep)
        .run(
            &ekar("x"),
            PipelineKind::Adaptive {
                budget: Budget::Low,
            },
        )
        .unwrap();
    assert_eq!(res.rounds_used, 1);
    assert!(res.calls <= 3 + 1 + 1 + 2 * 3 + 1);

    let ep = Recording::new(adaptive_oracle(false));
    let res = runner(&ep)
        .run(
            &ekar("x"),
            PipelineKind::Adaptive {
                budget: Budget::High,
            },
        )
        .unwrap();
    assert_eq!(res.rounds_used, 5);
    // 5 samples + selection + 5 x (verify + refine) + deduction
    assert_eq!(res.calls, 5 + 1 + 10 + 1);

    let ep = Recording::new(adaptive_oracle(false));
    let res = runner(&ep)
        .run(
            &ekar("x"),
            PipelineKind::Adaptive {
                budget: Budget::Low,
            },
        )
        .unwrap();
    assert_eq!(res.rounds_used, 3);
    assert!(res.calls <= 3 + 1 + 1 + 2 * 3 + 1);
}

#[test]
fn dummy_tokens_are_inserted_before_the_format_instruction() {
    let msgs = build_prompt(&ekar("x"), Stage::Induction, StageInput::default()).unwrap();
    assert_eq!(inject_dummy_tokens(&msgs, 0, "hmm"), msgs);
    for (stage, len) in [
        (Stage::Induction, 100),
        (Stage::Induction, 400),
        (Stage::Automatic, 400),
    ] {
        let msgs = build_prompt(&ekar("x"), stage, StageInput::default()).unwrap();
        let out = inject_dummy_tokens(&msgs, len, "hmm");
        let text = &out[0].content;
        assert_eq!(text.split_whitespace().filter(|w| *w == "hmm").count(), len);
        let filler_at = text.find("Reasoning: hmm").unwrap();
        assert!(filler_at < text.find(prompts::RESPONSE_LEAD).unwrap());
    }
}

#[test]
fn runner_applies_dummy_tokens_to_answer_prompt() {
    let ep = Recording::new(oracle);
    let mut cfg = RunnerConfig::new("m", 1);
    cfg.dummy_tokens = 100;
    Runner::new(&ep, cfg)
        .run(&ekar("x"), PipelineKind::AbdDed)
        .unwrap();
    let reqs = ep.requests();
    assert!(!last_prompt(&reqs[0]).contains("hmm"));
    assert_eq!(last_prompt(&reqs[1]).matches("hmm").count(), 100);
}

#[test]
fn probes() {
    let ep = Recording::new(oracle);
    let r = runner(&ep);
    let rec = r
        .record(&listfn_inst(), PipelineKind::ProbeAbduction, 0)
        .unwrap();
    assert_eq!(rec.result.calls, 1);
    assert!(rec.correct, "`reverse` reproduces registry function 2");

    let ep = Recording::new(|_: &ChatRequest, _| r#"{"answer": "[4, 3]"}"#.to_string());
    let rec = runner(&ep)
        .record(&listfn_inst(), PipelineKind::ProbeGoldDeduction, 0)
        .unwrap();
    assert!(last_prompt(&ep.requests()[0]).contains("The python code for the function is: reverse"));
    assert!(rec.correct);

    let ep = Recording::new(oracle);
    assert!(matches!(
        runner(&ep).run(&ekar("x"), PipelineKind::ProbeGoldDeduction),
        Err(PipelineError::Unsupported { .. })
    ));
}

#[test]
fn batch_preserves_order_and_is_schedule_independent() {
    let insts: Vec<TaskInstance> = (0..20).map(|i| ekar(&format!("e{i}"))).collect();
    let ep = Recording::new(oracle);
    let r = runner(&ep);
    let one: Vec<RunRecord> = run_batch(&r, &insts, PipelineKind::Selection { k: 3 }, 1, 0)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    let eight: Vec<RunRecord> = run_batch(&r, &insts, PipelineKind::Selection { k: 3 }, 8, 0)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    assert_eq!(one, eight);
    assert_eq!(one[5].instance_id, "e5");
}

#[test]
fn kind_parsing() {
    assert_eq!(
        PipelineKind::from_parts("selection", Some(3), None, None).unwrap(),
        PipelineKind::Selection { k: 3 }
    );
    assert_eq!(
        PipelineKind::from_parts("selection", Some(11), None, None),
        Err(KindError::K(11))
    );
    assert!(PipelineKind::from_parts("refinement", None, None, None).is_err());
    assert!(PipelineKind::from_parts("refinement", None, Some(6), None).is_err());
    assert!(PipelineKind::from_parts("bogus", None, None, None).is_err());
    assert_eq!(
        PipelineKind::Adaptive {
            budget: Budget::Low
        }
        .to_string(),
        "adaptive(low)"
    );
}
