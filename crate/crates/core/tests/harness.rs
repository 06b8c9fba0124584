mod common;

use std::sync::Arc;

use common::{mc_task, open_task, scheduler, scheduler_with_clock, task_script};
use csmr_core::audit::{read_jsonl, Role, TranscriptRecord};
use csmr_core::clock::SteppingClock;
use csmr_core::error::HarnessError;
use csmr_core::gateway::{MockScript, TaskScript};
use csmr_core::harness::{
    load_outcomes, load_results, run_benchmark, sample_subset, score_run, Bucket, RunOptions, OUTCOMES_FILE,
    REPORT_JSON, TRANSCRIPTS_FILE,
};
use csmr_core::task::{Mode, RunConfig, Task};

fn dataset(n: usize) -> Vec<Task> {
    (0..n).map(|i| mc_task(&format!("t{i}"))).collect()
}

fn good_script(tasks: &[Task]) -> MockScript {
    let mut script = MockScript::default();
    for (i, t) in tasks.iter().enumerate() {
        let letter = if i % 2 == 0 { 'B' } else { 'C' };
        script.insert(
            t.id.clone(),
            task_script(
                vec![
                    format!("Checking {}.\nVISUAL QUESTION: What is item {i}?", t.id),
                    format!("FINAL ANSWER: ({letter})"),
                ],
                vec![format!("Item {i} is a cup.")],
            ),
        );
    }
    script
}

fn opts(run_id: &str) -> RunOptions {
    RunOptions {
        run_id: run_id.into(),
        dataset_path: None,
    }
}

#[test]
fn resume_skips_completed_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(5);
    let cfg = RunConfig::default();

    let (first, sched) = scheduler(good_script(&data));
    let partial = run_benchmark(&data[..3], &sched, &cfg, dir.path(), &opts("r")).unwrap();
    assert_eq!(partial.n_tasks, 3);
    assert_eq!(first.call_count(), 9);

    // Only the two remaining tasks are scripted; touching any other fails.
    let (second, sched) = scheduler(good_script(&data[3..]));
    let full = run_benchmark(&data, &sched, &cfg, dir.path(), &opts("r")).unwrap();
    assert_eq!(second.call_count(), 6);
    assert_eq!(full.termination_histogram[&Bucket::Answered], 5);
    assert!((full.accuracy.unwrap() - 0.6).abs() < 1e-12);

    let (third, sched) = scheduler(MockScript::default());
    let again = run_benchmark(&data, &sched, &cfg, dir.path(), &opts("r")).unwrap();
    assert_eq!(third.call_count(), 0);
    assert_eq!(again, full);
    assert_eq!(load_results(dir.path()).unwrap().len(), 5);
}

#[test]
fn failed_tasks_are_reported_and_retried() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(3);
    let mut broken = good_script(&data);
    broken.insert("t1", TaskScript::default());
    let (_, sched) = scheduler(broken);
    let report = run_benchmark(&data, &sched, &RunConfig::default(), dir.path(), &opts("r")).unwrap();
    assert_eq!(report.termination_histogram[&Bucket::Error], 1);
    assert_eq!(report.per_task[1].bucket, Bucket::Error);

    let (mock, sched) = scheduler(good_script(&data));
    let report = run_benchmark(&data, &sched, &RunConfig::default(), dir.path(), &opts("r")).unwrap();
    assert_eq!(report.termination_histogram[&Bucket::Error], 0);
    assert!(mock.calls().iter().all(|c| c.task_id == "t1"));
}

#[test]
fn concurrent_run_matches_sequential() {
    let data = dataset(9);
    let seq_dir = tempfile::tempdir().unwrap();
    let par_dir = tempfile::tempdir().unwrap();
    let (_, sched) = scheduler(good_script(&data));
    let seq = run_benchmark(&data, &sched, &RunConfig::default(), seq_dir.path(), &opts("r")).unwrap();
    let (_, sched) = scheduler(good_script(&data));
    let cfg = RunConfig {
        concurrency: 4,
        ..RunConfig::default()
    };
    let par = run_benchmark(&data, &sched, &cfg, par_dir.path(), &opts("r")).unwrap();
    assert_eq!(seq, par);

    let a = load_outcomes(seq_dir.path()).unwrap();
    let b = load_outcomes(par_dir.path()).unwrap();
    assert_eq!(a, b);
    for (id, outcome) in &b {
        assert_eq!(outcome.transcript.len(), 3, "{id}");
        assert!(outcome.transcript.iter().all(|r| &r.task_id == id));
    }
    let records: Vec<TranscriptRecord> = read_jsonl(&par_dir.path().join(TRANSCRIPTS_FILE)).unwrap();
    assert_eq!(records.len(), 27);
}

#[test]
fn stored_transcripts_match_live_ones() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(2);
    let (_, sched) = scheduler(good_script(&data));
    run_benchmark(&data, &sched, &RunConfig::default(), dir.path(), &opts("r")).unwrap();
    let (_, live) = scheduler(good_script(&data));
    let expected = live.run_task(&data[0], &RunConfig::default()).unwrap();
    let stored = load_outcomes(dir.path()).unwrap().remove("t0").unwrap();
    assert_eq!(stored, expected);
    let roles: Vec<Role> = stored.transcript.iter().map(|r| r.role).collect();
    assert_eq!(roles, [Role::Crc, Role::Pvp, Role::Crc]);
}

#[test]
fn mean_seconds_follow_the_clock() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(4);
    let (_, sched) = scheduler_with_clock(good_script(&data), Arc::new(SteppingClock::new(0.25)));
    let report = run_benchmark(&data, &sched, &RunConfig::default(), dir.path(), &opts("r")).unwrap();
    // Each task reads the clock once at start and once at the end.
    assert_eq!(report.mean_seconds_per_sample, 0.25);
    assert!(report.per_task.iter().all(|s| s.seconds == 0.25));
}

#[test]
fn scoring_is_repeatable_and_offline() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = dataset(2);
    data.push(open_task("o1", "a red bus on the street"));
    let mut script = good_script(&data[..2]);
    script.insert(
        "o1",
        task_script(vec!["FINAL ANSWER: a red bus".into()], vec![]),
    );
    let (_, sched) = scheduler(script);
    let live = run_benchmark(&data, &sched, &RunConfig::default(), dir.path(), &opts("r")).unwrap();
    assert!(live.accuracy.is_some());
    // LCS 3 of 3 candidate and 6 reference tokens: 2 * 1 * 0.5 / 1.5.
    assert!((live.rouge_l.unwrap() - 2.0 / 3.0).abs() < 1e-12);

    let first = score_run(dir.path(), &data).unwrap();
    let bytes_a = std::fs::read(dir.path().join(REPORT_JSON)).unwrap();
    let second = score_run(dir.path(), &data).unwrap();
    let bytes_b = std::fs::read(dir.path().join(REPORT_JSON)).unwrap();
    assert_eq!(first, second);
    assert_eq!(first, live);
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn mode_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(1);
    let (_, sched) = scheduler(good_script(&data));
    run_benchmark(&data, &sched, &RunConfig::default(), dir.path(), &opts("r")).unwrap();
    let caption = RunConfig {
        mode: Mode::Caption,
        ..RunConfig::default()
    };
    let err = run_benchmark(&data, &sched, &caption, dir.path(), &opts("r")).unwrap_err();
    assert!(matches!(err, HarnessError::RunMismatch(_)));
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, sched) = scheduler(MockScript::default());
    let err = run_benchmark(&[], &sched, &RunConfig::default(), dir.path(), &opts("r")).unwrap_err();
    assert!(matches!(err, HarnessError::EmptyDataset));
    assert!(!dir.path().join(OUTCOMES_FILE).exists());
}

#[test]
fn subset_is_stable_for_a_fixed_seed() {
    let data = dataset(300);
    let a = sample_subset(&data, 200, 2024).unwrap();
    let b = sample_subset(&data, 200, 2024).unwrap();
    assert_eq!(a, b);
    let positions: Vec<usize> = a
        .iter()
        .map(|t| data.iter().position(|d| d.id == t.id).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}
