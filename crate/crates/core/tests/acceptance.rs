//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

use tabletop_loop::cli::cmd_validate;
use tabletop_loop::llm::{assemble_planner_prompt, builtin_library, SectionKind};
use tabletop_loop::orchestrator::{run_suite, EpisodeConfig, EpisodeTranscript, Event, LoopLimits, Mode, Verdict};
use tabletop_loop::planlang::{Budget, ExecStatus};
use tabletop_loop::reporter::{parse_feedback, render_feedback, FeedbackItem, FeedbackReport, ACTIONS};
use tabletop_loop::tasks::{brute_force_check, evaluate, instantiate, lookup, task_registry, Family, TaskSpec};
use tabletop_loop::world::FrameTag;

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn all_tasks() -> Vec<&'static TaskSpec> {
    task_registry().iter().collect()
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn c1_oracle_completeness() -> Outcome {
    let t0 = Instant::now();
    let suite = run_suite(&all_tasks(), &seeds(50), Mode::ClosedLoop, &EpisodeConfig::default(), &LoopLimits::default(), jobs())
        .map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    check(suite.metrics.rows.len() == 21, "expected 21 metric rows")?;
    for r in &suite.metrics.rows {
        check(r.sr_percent() == Some(100.0), format!("{} SR {:?}", r.task, r.sr_percent()))?;
    }
    for e in &suite.episodes {
        check(e.verdict == Verdict::Success, format!("{} seed {} ended {}", e.task, e.seed, e.verdict.name()))?;
    }
    check(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!("1050 episodes, SR 100 on all 21 tasks, {secs:.1}s"))
}

fn c2_recovery_gap() -> Outcome {
    let limits = LoopLimits::default();
    let mut notes = Vec::new();
    for (id, fault) in [("OCC1", false), ("A", true), ("B", true), ("H", true)] {
        let cfg = EpisodeConfig { inject_fault: fault, ..EpisodeConfig::default() };
        let task = [lookup(id).unwrap()];
        let sr = |mode| -> Result<f64, String> {
            let s = run_suite(&task, &seeds(50), mode, &cfg, &limits, jobs()).map_err(|e| e.to_string())?;
            s.metrics.row(id).and_then(|r| r.sr_percent()).ok_or_else(|| format!("{id}: no SR"))
        };
        let (closed, open) = (sr(Mode::ClosedLoop)?, sr(Mode::OpenLoop)?);
        check(closed - open >= 50.0, format!("{id}: closed {closed:.1} open {open:.1}"))?;
        if id == "OCC1" {
            check(open == 0.0, format!("open-loop OCC1 SR {open:.1}"))?;
        }
        notes.push(format!("{id} {closed:.0}/{open:.0}"));
    }
    Ok(format!("closed/open SR: {}", notes.join(", ")))
}

/// Independent per-loop count of plan, report and primitive placement.
fn temporal_shape(t: &EpisodeTranscript, mode: Mode) -> Result<(), String> {
    let loops = t.events.iter().filter_map(|e| e.loop_index()).max().map_or(0, |m| m + 1);
    for l in 0..loops {
        let at: Vec<(usize, &Event)> = t.events.iter().enumerate().filter(|(_, e)| e.loop_index() == Some(l)).collect();
        let pos = |k: &str| at.iter().filter(|(_, e)| e.kind() == k).map(|(i, _)| *i).collect::<Vec<_>>();
        let (code, fb, prims) = (pos("code"), pos("feedback"), pos("primitive"));
        check(code.len() == 1, format!("loop {l}: {} plan events", code.len()))?;
        let want_fb = usize::from(mode == Mode::ClosedLoop);
        check(fb.len() == want_fb, format!("loop {l}: {} report events", fb.len()))?;
        let hi = fb.first().copied().unwrap_or(usize::MAX);
        check(prims.iter().all(|p| *p > code[0] && *p < hi), format!("loop {l}: primitive outside plan/report"))?;
    }
    Ok(())
}

fn c3_temporal_abstraction() -> Outcome {
    let mut n = 0;
    for (id, fault) in [("A", false), ("OCC1", false), ("B", true), ("H", true), ("G10", false)] {
        let cfg = EpisodeConfig { inject_fault: fault, ..EpisodeConfig::default() };
        for mode in [Mode::ClosedLoop, Mode::OpenLoop] {
            let s = run_suite(&[lookup(id).unwrap()], &seeds(3), mode, &cfg, &LoopLimits::default(), 1).map_err(|e| e.to_string())?;
            for e in &s.episodes {
                temporal_shape(&e.transcript, mode).map_err(|m| format!("{id}/{}: {m}", e.seed))?;
                e.transcript.check_structure().map_err(|m| format!("{id}/{}: {m}", e.seed))?;
                n += 1;
            }
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = run_suite(&[lookup("B").unwrap()], &[1], Mode::ClosedLoop, &EpisodeConfig { inject_fault: true, ..EpisodeConfig::default() }, &LoopLimits::default(), 1)
        .map_err(|e| e.to_string())?
        .episodes
        .remove(0)
        .transcript;
    let good = dir.path().join("good.jsonl");
    std::fs::write(&good, base.to_jsonl()).unwrap();
    let rep = cmd_validate(&good, &LoopLimits::default()).map_err(|e| e.to_string())?;
    check(rep.ok(), format!("untouched transcript diverges: {:?}", rep.divergence))?;

    let kinds = |t: &EpisodeTranscript, k: &str| t.events.iter().enumerate().filter(|(_, e)| e.kind() == k).map(|(i, _)| i).collect::<Vec<_>>();
    let mut violations: Vec<(&str, EpisodeTranscript)> = Vec::new();
    let mut t = base.clone();
    let fb = kinds(&t, "feedback")[0];
    let ev = t.events.remove(fb);
    let p = kinds(&t, "primitive")[0];
    t.events.insert(p + 1, ev);
    violations.push(("report between primitives", t));
    let mut t = base.clone();
    let c = kinds(&t, "code")[0];
    let dup = t.events[c].clone();
    t.events.insert(c + 1, dup);
    violations.push(("two plans in one loop", t));
    let mut t = base.clone();
    t.events.remove(kinds(&t, "feedback")[0]);
    violations.push(("missing report", t));
    let mut t = base.clone();
    let p = *kinds(&t, "primitive").last().unwrap();
    let ev = t.events.remove(p);
    let fb = *kinds(&t, "feedback").last().unwrap();
    t.events.insert(fb + 1, ev);
    violations.push(("primitive after report", t));
    let mut t = base.clone();
    t.events.retain(|e| e.kind() != "code" || e.loop_index() != Some(0));
    violations.push(("missing plan", t));
    for (name, t) in &violations {
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, t.to_jsonl()).unwrap();
        let rep = cmd_validate(&path, &LoopLimits::default()).map_err(|e| e.to_string())?;
        check(!rep.ok(), format!("validator accepted: {name}"))?;
    }
    Ok(format!("{n} transcripts well-formed; {} violations rejected", violations.len()))
}

fn c4_sandbox() -> Outcome {
    let (_, world) = instantiate(lookup("A").unwrap(), 0).unwrap();
    let budget = Budget::default();
    let mut tally = [0usize; 2];
    for (i, src) in SANDBOX_CORPUS.iter().enumerate() {
        let before = world.digest();
        let run = catch_unwind(AssertUnwindSafe(|| run_source(src, world.clone(), 0, &budget)));
        let (out, after) = run.map_err(|_| format!("case {i} crashed the interpreter"))?;
        match out.status {
            ExecStatus::ForbiddenConstruct => tally[0] += 1,
            ExecStatus::BudgetExhausted => tally[1] += 1,
            s => return Err(format!("case {i} ended {}", s.name())),
        }
        if out.primitives_issued == 0 {
            check(after.digest() == before, format!("case {i} changed the world without a primitive"))?;
        }
        after.validate().map_err(|e| format!("case {i} left an invalid world: {e:?}"))?;
    }
    Ok(format!("{} cases: {} forbidden_construct, {} budget_exhausted", SANDBOX_CORPUS.len(), tally[0], tally[1]))
}

fn phrase() -> impl Strategy<Value = String> {
    proptest::collection::vec("[a-z]{1,8}", 1..5).prop_map(|w| w.join(" "))
}

fn item() -> impl Strategy<Value = FeedbackItem> {
    (phrase(), proptest::option::of("[a-z]{1,6}_[0-9]"), proptest::array::uniform3(-2000i32..2000), phrase(), 0..ACTIONS.len())
        .prop_map(|(obj, id, loc, target, a)| FeedbackItem {
            object: match id {
                Some(id) => format!("{obj} ({id})"),
                None => obj,
            },
            location: loc.map(|v| v as f64 / 1000.0),
            target,
            action: ACTIONS[a].0.to_string(),
        })
}

fn report() -> impl Strategy<Value = FeedbackReport> {
    prop_oneof![
        Just(FeedbackReport { success: true, items: vec![] }),
        proptest::collection::vec(item(), 0..5).prop_map(|items| FeedbackReport { success: false, items }),
    ]
}

fn c5_feedback_schema() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&report(), |r| {
            prop_assert_eq!(parse_feedback(&render_feedback(&r)).unwrap(), r);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let one = FeedbackReport {
        success: false,
        items: vec![FeedbackItem {
            object: "a block with red color".into(),
            location: [0.512, -0.1, 0.02],
            target: "above other blocks".into(),
            action: "stack".into(),
        }],
    };
    let s = render_feedback(&one);
    let want = "a block with red color at (0.512, -0.100, 0.020) is not successfully stacked above other blocks.";
    check(s == want, format!("rendered `{s}`"))?;
    Ok("1000 random reports round-trip; template sentence matches".into())
}

fn c6_evaluator_soundness() -> Outcome {
    const PER_FAMILY: usize = 200;
    let mut notes = Vec::new();
    for (family, ids) in tasks_by_family() {
        let tol = family_tolerance(family);
        let mut r = rng(0xE7A1 ^ family as u64);
        let (mut n, mut yes) = (0, 0);
        let mut k = 0u64;
        while n < PER_FAMILY {
            let id = ids[(k as usize) % ids.len()];
            let (inst, mut world) = solved(id, k / ids.len() as u64 % 8);
            k += 1;
            let members = goal_objects(&inst, &world);
            let chosen: Vec<String> = members.into_iter().filter(|_| r.random_bool(0.5)).collect();
            shift(&mut world, &chosen, &mut r, |r| tol * r.random_range(0.5..1.5));
            let e = evaluate(&inst, &world).map_err(|e| format!("{id}: {e}"))?;
            let b = brute_force_check(&inst, &world).map_err(|e| format!("{id}: {e}"))?;
            check(e.success == b, format!("{family:?}/{id}: evaluate {} brute force {b}", e.success))?;
            n += 1;
            yes += usize::from(b);
        }
        notes.push(format!("{family:?} {n} ({yes} ok)"));
    }
    check(notes.len() == Family::ALL.len(), "a predicate family has no task")?;
    Ok(format!("zero disagreements: {}", notes.join(", ")))
}

fn c7_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (run, jobs) in [("one", "1"), ("two", "4")] {
        let out = dir.path().join(run);
        let st = bin()
            .args(["run", "--backend", "scripted", "--tasks", "all", "--seeds", "5", "--snapshot", "--jobs", jobs, "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(st.status.success(), format!("run {run} exited {:?}: {}", st.status.code(), String::from_utf8_lossy(&st.stderr)))?;
        trees.push(read_tree(&out));
    }
    let (a, b) = (&trees[0], &trees[1]);
    check(a.keys().eq(b.keys()), "runs wrote different file sets")?;
    for (p, bytes) in a {
        check(b[p] == *bytes, format!("{} differs", p.display()))?;
    }
    let count = |ext: &str| a.keys().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    check(count("jsonl") == 105 && count("ppm") == 105, "expected 105 transcripts and snapshots")?;
    Ok(format!("{} files byte-identical across two runs", a.len()))
}

fn c8_prompt_structure() -> Outcome {
    let library = builtin_library();
    for t in task_registry() {
        let (inst, world) = instantiate(t, 0).unwrap();
        let b = assemble_planner_prompt(&inst, &world.observe(FrameTag::Before), None, &library, &world.bounds);
        let kinds: Vec<SectionKind> = b.sections.iter().map(|s| s.kind).collect();
        check(kinds == [SectionKind::ApiDocs, SectionKind::CoordinateFrame, SectionKind::GeneralRules, SectionKind::Examples], format!("{}: sections {kinds:?}", t.id))?;
        let sys = b.system_message();
        let mut last = 0;
        for s in &b.sections {
            let at = sys.find(&s.text).ok_or("section text missing from system message")?;
            check(at >= last, "sections out of order in system message")?;
            last = at;
        }
        for line in ["front: x+", "left: y-", "top: z+"] {
            check(sys.contains(line), format!("missing `{line}`"))?;
        }
    }
    let ex = library.examples();
    check(ex.windows(2).all(|w| w[0].rank <= w[1].rank), "ranks decrease")?;
    let names: Vec<&str> = ex.iter().take(3).map(|e| e.name.as_str()).collect();
    check(names == ["stack_blocks", "stack_blocks_by_color", "stack_blocks_aligned"], format!("first examples {names:?}"))?;
    Ok(format!("21 prompts ordered; {} examples in rank order", ex.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle completeness", c1_oracle_completeness),
        ("recovery gap", c2_recovery_gap),
        ("temporal abstraction", c3_temporal_abstraction),
        ("sandbox", c4_sandbox),
        ("feedback schema", c5_feedback_schema),
        ("evaluator soundness", c6_evaluator_soundness),
        ("determinism", c7_determinism),
        ("prompt structure", c8_prompt_structure),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match res {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", i + 1),
            Err(why) => {
                println!("criterion {} ({name}): FAIL - {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
