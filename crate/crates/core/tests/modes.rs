mod common;

use std::collections::BTreeSet;

use common::{mc_task, scheduler, script_for, task_script};
use csmr_core::audit::Role;
use csmr_core::gateway::MockScript;
use csmr_core::router::parse_query_plan;
use csmr_core::scheduler::{TaskOutcome, Termination};
use csmr_core::task::{Mode, RunConfig};
use proptest::prelude::*;

fn cfg(mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        ..RunConfig::default()
    }
}

#[test]
fn single_query_allows_one_visual_question() {
    let task = mc_task("t");
    let crc = [
        "VISUAL QUESTION: What is on the left?",
        "VISUAL QUESTION: And on the right?",
        "FINAL ANSWER: (C)",
    ];
    let (mock, sched) = scheduler(script_for("t", &crc, &["A lamp.", "A chair."]));
    let out = sched.run_task(&task, &cfg(Mode::SingleQuery)).unwrap();
    assert_eq!(out.termination, Termination::Answered);
    assert_eq!((out.crc_steps, out.pvp_calls), (3, 1));
    let crc_calls: Vec<_> = mock.calls().into_iter().filter(|c| c.role == Role::Crc).collect();
    assert!(!crc_calls[0].bundle.user_text.contains("only visual question"));
    assert!(crc_calls[1].bundle.user_text.contains("already used your only visual question"));
}

#[test]
fn fixed_step_forces_seven_rounds() {
    let task = mc_task("t");
    let mut crc = vec!["FINAL ANSWER: (A)".to_string()];
    crc.extend((1..=7).map(|i| format!("VISUAL QUESTION: Detail {i}?")));
    crc.push("FINAL ANSWER: (B)".into());
    let pvp: Vec<String> = (1..=7).map(|i| format!("Detail {i} is visible.")).collect();
    let mut script = MockScript::default();
    script.insert("t", task_script(crc, pvp));
    let (mock, sched) = scheduler(script);
    let out = sched.run_task(&task, &cfg(Mode::FixedStep)).unwrap();
    assert_eq!(out.termination, Termination::Answered);
    assert_eq!(out.final_answer.as_deref(), Some("(B)"));
    assert_eq!((out.crc_steps, out.pvp_calls), (9, 7));
    // The early answer stays in the trace without evidence.
    assert!(out.state.steps()[0].evidence.is_none());
    assert_eq!(out.state.steps().iter().filter(|s| s.evidence.is_some()).count(), 7);

    let crc_calls: Vec<_> = mock.calls().into_iter().filter(|c| c.role == Role::Crc).collect();
    assert!(crc_calls[0].bundle.user_text.contains("exactly 7 more"));
    assert!(crc_calls[2].bundle.user_text.contains("exactly 6 more"));
    assert!(crc_calls[8].bundle.user_text.contains("No more visual questions"));
}

#[test]
fn pre_planned_parses_all_queries_at_first_step() {
    let task = mc_task("t");
    let crc = [
        "Plan:\n1. What color is the sky?\n2) Is there a boat?\n- VISUAL QUESTION: How many people?",
        "FINAL ANSWER: (D)",
    ];
    let (mock, sched) = scheduler(script_for("t", &crc, &["Grey.", "Yes.", "Two."]));
    let out = sched.run_task(&task, &cfg(Mode::PrePlanned)).unwrap();
    assert_eq!(out.termination, Termination::Answered);
    assert_eq!((out.crc_steps, out.pvp_calls), (2, 3));

    let roles: Vec<Role> = out.transcript.iter().map(|r| r.role).collect();
    assert_eq!(roles, [Role::Crc, Role::Pvp, Role::Pvp, Role::Pvp, Role::Crc]);
    let asked: Vec<String> = mock
        .calls()
        .into_iter()
        .filter(|c| c.role == Role::Pvp)
        .map(|c| c.bundle.user_text)
        .collect();
    assert_eq!(asked.len(), 3);
    for (q, text) in ["What color is the sky?", "Is there a boat?", "How many people?"].iter().zip(&asked) {
        assert!(text.contains(q), "{text:?}");
    }
}

#[test]
fn caption_is_one_perception_one_reasoning_call() {
    let task = mc_task("t");
    let (mock, sched) = scheduler(script_for(
        "t",
        &["The caption mentions a boat.\nFINAL ANSWER: (A)"],
        &["A small boat on a lake."],
    ));
    let out = sched.run_task(&task, &cfg(Mode::Caption)).unwrap();
    assert_eq!((out.crc_steps, out.pvp_calls), (1, 1));
    assert_eq!(out.termination, Termination::Answered);
    let calls = mock.calls();
    assert_eq!(calls[0].role, Role::Pvp);
    assert!(calls[0].bundle.image_attached);
    assert!(!calls[0].bundle.user_text.contains(&task.question));
    assert!(!calls[1].bundle.image_attached);
    assert!(calls[1].bundle.user_text.contains("A small boat on a lake."));
}

#[derive(Debug, Clone)]
enum Emission {
    Query(u8),
    Answer(char),
    Malformed,
    Both,
    Plan(u8),
}

fn emission() -> impl Strategy<Value = Emission> {
    prop_oneof![
        4 => (0u8..50).prop_map(Emission::Query),
        2 => prop_oneof![Just('A'), Just('B'), Just('C'), Just('D')].prop_map(Emission::Answer),
        2 => Just(Emission::Malformed),
        1 => Just(Emission::Both),
        1 => (0u8..5).prop_map(Emission::Plan),
    ]
}

fn text(e: &Emission) -> String {
    match e {
        Emission::Query(i) => format!("Need more detail.\nVISUAL QUESTION: What is at spot {i}?"),
        Emission::Answer(c) => format!("Done.\nFINAL ANSWER: ({c})"),
        Emission::Malformed => "Still thinking it over.".into(),
        Emission::Both => "VISUAL QUESTION: Anything else?\nFINAL ANSWER: (A)".into(),
        Emission::Plan(n) => (1..=*n).map(|i| format!("{i}. Look at region {i}?")).collect::<Vec<_>>().join("\n"),
    }
}

fn check_common(out: &TaskOutcome, cfg: &RunConfig) -> Result<(), TestCaseError> {
    prop_assert_eq!(out.final_answer.is_some(), out.termination.has_answer());
    prop_assert!(out.crc_steps <= cfg.step_cap);
    let indices: Vec<u32> = out.state.steps().iter().map(|s| s.step_index).collect();
    prop_assert!(indices.windows(2).all(|w| w[0] < w[1]));
    let sum: u64 = out
        .state
        .steps()
        .iter()
        .map(|s| s.thought_tokens + s.evidence_tokens)
        .sum();
    prop_assert_eq!(sum, out.state.token_estimate());
    prop_assert_eq!(out.state_tokens, out.state.token_estimate());
    let seq: Vec<u32> = out.transcript.iter().map(|r| r.step_index).collect();
    prop_assert_eq!(seq, (1..=out.transcript.len() as u32).collect::<Vec<_>>());
    let crc = out.transcript.iter().filter(|r| r.role == Role::Crc).count() as u32;
    let pvp = out.transcript.iter().filter(|r| r.role == Role::Pvp).count() as u32;
    prop_assert_eq!((crc, pvp), (out.crc_steps, out.pvp_calls));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn per_mode_invariants(
        emissions in proptest::collection::vec(emission(), 12),
        t_max in prop_oneof![Just(6000u64), 40u64..400],
    ) {
        let crc: Vec<String> = emissions.iter().map(text).collect();
        let pvp: Vec<String> = (0..12).map(|i| format!("Region {i} shows a tree.")).collect();
        for mode in Mode::ALL {
            let mut script = MockScript::default();
            script.insert("t", task_script(crc.clone(), pvp.clone()));
            let (_, sched) = scheduler(script.clone());
            let cfg = RunConfig { mode, t_max, ..RunConfig::default() };
            let task = mc_task("t");
            let out = sched.run_task(&task, &cfg).unwrap();
            check_common(&out, &cfg)?;

            // Replaying the same script gives the same bytes.
            let (_, again) = scheduler(script);
            let replay = again.run_task(&task, &cfg).unwrap();
            prop_assert_eq!(serde_json::to_string(&out).unwrap(), serde_json::to_string(&replay).unwrap());

            match mode {
                Mode::Csmr | Mode::SingleQuery | Mode::FixedStep => {
                    prop_assert!(out.pvp_calls <= out.crc_steps);
                    let answered = out.termination.has_answer() as u32;
                    prop_assert_eq!(out.state.len() as u32, out.crc_steps - answered);
                    let with_evidence = out.state.steps().iter().filter(|s| s.evidence.is_some()).count() as u32;
                    prop_assert_eq!(with_evidence, out.pvp_calls);
                }
                Mode::PrePlanned | Mode::Caption => {}
            }
            match mode {
                Mode::SingleQuery => prop_assert!(out.pvp_calls <= 1),
                Mode::FixedStep if out.termination == Termination::Answered => {
                    prop_assert_eq!(out.pvp_calls, cfg.fixed_steps);
                    let last_pvp = out.transcript.iter().rposition(|r| r.role == Role::Pvp).unwrap();
                    prop_assert!(last_pvp < out.transcript.len() - 1);
                }
                Mode::Caption => prop_assert_eq!((out.crc_steps, out.pvp_calls), (1, 1)),
                Mode::PrePlanned => {
                    let plan = parse_query_plan(&crc[0]);
                    prop_assert!(out.pvp_calls as usize <= plan.len());
                    if t_max == 6000 {
                        prop_assert_eq!(out.pvp_calls as usize, plan.len());
                    }
                    // All perception calls follow the first reasoning call
                    // directly; none come later.
                    let roles: Vec<Role> = out.transcript.iter().map(|r| r.role).collect();
                    let pvp_positions: BTreeSet<usize> =
                        roles.iter().enumerate().filter(|(_, r)| **r == Role::Pvp).map(|(i, _)| i).collect();
                    let expected: BTreeSet<usize> = (1..=out.pvp_calls as usize).collect();
                    prop_assert_eq!(pvp_positions, expected);
                }
                _ => {}
            }
        }
    }
}
