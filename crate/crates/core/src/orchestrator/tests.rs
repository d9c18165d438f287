use super::*;
use crate::tasks::lookup;

fn closed(id: &str, seed: u64) -> EpisodeResult {
    run_episode(lookup(id).unwrap(), seed, Mode::ClosedLoop, &EpisodeConfig::default(), &LoopLimits::default()).unwrap()
}

fn scripted(records: Vec<ScriptRecord>) -> EpisodeConfig {
    EpisodeConfig { backend: BackendSource::Scripted(Arc::new(records)), ..EpisodeConfig::default() }
}

fn count(t: &EpisodeTranscript, kind: &str) -> usize {
    t.events.iter().filter(|e| e.kind() == kind).count()
}

#[test]
fn oracle_solves_a_in_one_loop() {
    let r = closed("A", 0);
    assert_eq!(r.verdict, Verdict::Success);
    assert_eq!(r.loops_used, 1);
    assert!(r.final_eval.success);
    assert_eq!(r.reported_success, Some(true));
    r.transcript.check_structure().unwrap();
    assert_eq!(count(&r.transcript, "code"), 1);
    assert_eq!(count(&r.transcript, "feedback"), 1);
    assert!(count(&r.transcript, "primitive") > 0);
}

#[test]
fn occlusion_needs_two_loops_closed_and_fails_open() {
    let r = closed("OCC1", 3);
    assert_eq!(r.verdict, Verdict::Success);
    assert_eq!(r.loops_used, 2);
    let open = run_episode(lookup("OCC1").unwrap(), 3, Mode::OpenLoop, &EpisodeConfig::default(), &LoopLimits::default()).unwrap();
    assert_eq!(open.verdict, Verdict::Failure);
    assert_eq!(open.loops_used, 1);
    assert_eq!(count(&open.transcript, "feedback"), 0);
    open.transcript.check_structure().unwrap();
}

#[test]
fn injected_fault_is_recovered_closed_loop_only() {
    let cfg = EpisodeConfig { inject_fault: true, ..EpisodeConfig::default() };
    for seed in 0..3 {
        let c = run_episode(lookup("B").unwrap(), seed, Mode::ClosedLoop, &cfg, &LoopLimits::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Success);
        assert!(c.loops_used >= 2);
        let o = run_episode(lookup("B").unwrap(), seed, Mode::OpenLoop, &cfg, &LoopLimits::default()).unwrap();
        assert_eq!(o.verdict, Verdict::Failure);
    }
}

#[test]
fn loops_bounded_when_planner_never_helps() {
    let recs = (0..5)
        .map(|l| ScriptRecord { task: "A".into(), loop_index: l, digest: "*".into(), role: None, response: "pass".into() })
        .collect();
    let limits = LoopLimits { max_loops: 3, ..LoopLimits::default() };
    let r = run_episode(lookup("A").unwrap(), 1, Mode::ClosedLoop, &scripted(recs), &limits).unwrap();
    assert_eq!(r.verdict, Verdict::Failure);
    assert_eq!(r.loops_used, 3);
    r.transcript.check_structure().unwrap();
}

#[test]
fn plan_failure_counts_the_loop_and_replans() {
    let recs = vec![ScriptRecord { task: "A".into(), loop_index: 0, digest: "*".into(), role: None, response: "no code here".into() }];
    let r = run_episode(lookup("A").unwrap(), 2, Mode::ClosedLoop, &scripted(recs), &LoopLimits::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Success);
    assert_eq!(r.loops_used, 2);
    let errs: Vec<_> = r.transcript.events.iter().filter_map(|e| match e {
        Event::Code { error: Some(m), .. } => Some(m.clone()),
        _ => None,
    }).collect();
    assert_eq!(errs.len(), 1);
    assert!(errs[0].starts_with("extraction"));
    r.transcript.check_structure().unwrap();
}

#[test]
fn unreachable_live_backend_is_infrastructure_failure() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let cfg = BackendConfig {
        kind: BackendKind::Live,
        endpoint: Some(url),
        model_name: Some("m".into()),
        timeout_secs: 2.0,
        max_retries: 0,
        ..BackendConfig::default()
    };
    let ecfg = EpisodeConfig { backend: BackendSource::from_config(&cfg).unwrap(), ..EpisodeConfig::default() };
    let r = run_episode(lookup("A").unwrap(), 0, Mode::ClosedLoop, &ecfg, &LoopLimits::default()).unwrap();
    assert_eq!(r.verdict, Verdict::InfrastructureFailure);
    assert_eq!(r.loops_used, 3);
    r.transcript.check_structure().unwrap();
    let suite = run_suite(&[lookup("A").unwrap()], &[0], Mode::ClosedLoop, &ecfg, &LoopLimits::default(), 1).unwrap();
    let row = suite.metrics.row("A").unwrap();
    assert_eq!((row.seeds, row.successes, row.infrastructure_failures), (1, 0, 1));
    assert_eq!(row.sr_percent(), None);
    assert!(suite.metrics.to_csv().ends_with("A,closed_loop,1,0,n/a\n"));
}

#[test]
fn transcript_round_trips_and_replays() {
    let cfg = EpisodeConfig { inject_fault: true, ..EpisodeConfig::default() };
    let r = run_episode(lookup("H").unwrap(), 4, Mode::ClosedLoop, &cfg, &LoopLimits::default()).unwrap();
    let text = r.transcript.to_jsonl();
    let back = EpisodeTranscript::from_jsonl(&text).unwrap();
    assert_eq!(back, r.transcript);
    assert_eq!(back.to_jsonl(), text);
    let rep = replay_transcript(&back, &Budget::default());
    assert!(rep.ok(), "{rep:?}");
    assert!(rep.checked > 4);
}

#[test]
fn edited_primitive_is_reported() {
    let r = closed("C", 1);
    let mut t = r.transcript.clone();
    let (i, _) = t.events.iter().enumerate().find(|(_, e)| matches!(e, Event::Primitive { .. })).unwrap();
    if let Event::Primitive { world_digest, .. } = &mut t.events[i] {
        *world_digest ^= 1;
    }
    let rep = replay_transcript(&t, &Budget::default());
    assert_eq!(rep.divergence.as_ref().map(|d| d.0), Some(i + 1));
}

#[test]
fn structure_violations_detected() {
    let r = closed("A", 0);
    let mut moved = r.transcript.clone();
    let fb = moved.events.iter().position(|e| e.kind() == "feedback").unwrap();
    let ev = moved.events.remove(fb);
    let first_prim = moved.events.iter().position(|e| e.kind() == "primitive").unwrap();
    moved.events.insert(first_prim + 1, ev);
    assert!(moved.check_structure().is_err());
    assert!(!replay_transcript(&moved, &Budget::default()).ok());

    let mut doubled = r.transcript.clone();
    let code = doubled.events.iter().position(|e| e.kind() == "code").unwrap();
    let dup = doubled.events[code].clone();
    doubled.events.insert(code, dup);
    assert!(doubled.check_structure().is_err());

    let mut no_verdict = r.transcript.clone();
    no_verdict.events.pop();
    assert!(no_verdict.check_structure().is_err());
}

#[test]
fn suite_is_deterministic_across_job_counts() {
    let tasks: Vec<_> = ["A", "D", "G3"].iter().map(|t| lookup(t).unwrap()).collect();
    let seeds = [0, 1, 2];
    let a = run_suite(&tasks, &seeds, Mode::ClosedLoop, &EpisodeConfig::default(), &LoopLimits::default(), 1).unwrap();
    let b = run_suite(&tasks, &seeds, Mode::ClosedLoop, &EpisodeConfig::default(), &LoopLimits::default(), 4).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics.to_csv(), "task,mode,seeds,successes,sr_percent\nA,closed_loop,3,3,100.0\nD,closed_loop,3,3,100.0\nG3,closed_loop,3,3,100.0\n");
    for (x, y) in a.episodes.iter().zip(&b.episodes) {
        assert_eq!((x.task.as_str(), x.seed), (y.task.as_str(), y.seed));
        assert_eq!(x.transcript.to_jsonl(), y.transcript.to_jsonl());
    }
    let empty = run_suite(&tasks, &[], Mode::ClosedLoop, &EpisodeConfig::default(), &LoopLimits::default(), 2).unwrap();
    assert!(empty.metrics.rows.is_empty());
}
