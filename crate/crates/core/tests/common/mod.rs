#![allow(dead_code)]

use std::sync::Arc;

use csmr_core::clock::{Clock, FrozenClock};
use csmr_core::gateway::{EndpointConfig, MockBackend, MockScript, ScriptedReply, TaskScript};
use csmr_core::router::RoutingRules;
use csmr_core::scheduler::Scheduler;
use csmr_core::task::{AnswerOption, Task};

pub fn mc_task(id: &str) -> Task {
    Task {
        id: id.into(),
        question: "Which option is right?".into(),
        options: ["first", "second", "third", "fourth"]
            .iter()
            .enumerate()
            .map(|(i, t)| AnswerOption {
                letter: (b'A' + i as u8) as char,
                text: t.to_string(),
            })
            .collect(),
        image_ref: format!("images/{id}.png"),
        hint: None,
        gold_answer: Some("B".into()),
    }
}

pub fn open_task(id: &str, gold: &str) -> Task {
    Task {
        id: id.into(),
        question: "Describe the scene.".into(),
        options: vec![],
        image_ref: format!("images/{id}.png"),
        hint: None,
        gold_answer: Some(gold.into()),
    }
}

pub fn script_for(task_id: &str, crc: &[&str], pvp: &[&str]) -> MockScript {
    let mut script = MockScript::default();
    script.insert(task_id, TaskScript::new(crc.iter().copied(), pvp.iter().copied()));
    script
}

pub fn task_script(crc: Vec<String>, pvp: Vec<String>) -> TaskScript {
    TaskScript {
        crc_outputs: crc.into_iter().map(ScriptedReply::Text).collect(),
        pvp_outputs: pvp.into_iter().map(ScriptedReply::Text).collect(),
        judge_outputs: vec![],
    }
}

pub fn scheduler_with_clock(script: MockScript, clock: Arc<dyn Clock>) -> (Arc<MockBackend>, Scheduler) {
    let mock = Arc::new(MockBackend::new(script));
    let sched = Scheduler::new(
        mock.clone(),
        EndpointConfig::default(),
        EndpointConfig::default(),
        RoutingRules::default(),
        clock,
    );
    (mock, sched)
}

pub fn scheduler(script: MockScript) -> (Arc<MockBackend>, Scheduler) {
    scheduler_with_clock(script, Arc::new(FrozenClock))
}
