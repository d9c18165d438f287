#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabletop_loop::orchestrator::{run_episode, EpisodeConfig, LoopLimits, Mode};
use tabletop_loop::planlang::{execute, parse_program, Budget, ExecOutcome, ExecStatus};
use tabletop_loop::skills::ApiEnv;
use tabletop_loop::tasks::{
    instantiate, lookup, task_registry, Family, Goal, TaskInstance, CIRCLE_RADIUS_TOL, FIXTURE_SLOT_TOL,
    LATTICE_XY_TOL, LINE_RESIDUAL_TOL, STACK_XY_TOL,
};
use tabletop_loop::world::{Kind, WorldState, ZONE_EDGE};

/// Final scene of a closed-loop oracle episode.
pub fn solved(id: &str, seed: u64) -> (TaskInstance, WorldState) {
    let spec = lookup(id).unwrap();
    let r = run_episode(spec, seed, Mode::ClosedLoop, &EpisodeConfig::default(), &LoopLimits::default()).unwrap();
    assert!(r.final_eval.success, "{id}/{seed} not solved");
    let (inst, _) = instantiate(spec, seed).unwrap();
    (inst, r.final_world)
}

/// Task ids grouped by the family of their goal.
pub fn tasks_by_family() -> BTreeMap<Family, Vec<&'static str>> {
    let mut out: BTreeMap<Family, Vec<&'static str>> = BTreeMap::new();
    for t in task_registry() {
        let (inst, _) = instantiate(t, 0).unwrap();
        out.entry(inst.goal.family()).or_default().push(t.id);
    }
    out
}

/// Positional tolerance that decides each family's predicate.
pub fn family_tolerance(f: Family) -> f64 {
    match f {
        Family::Stack => STACK_XY_TOL,
        Family::Sort => ZONE_EDGE / 2.0,
        Family::Circle => CIRCLE_RADIUS_TOL,
        Family::Lattice => LATTICE_XY_TOL,
        Family::Line => LINE_RESIDUAL_TOL,
        Family::Fixture => FIXTURE_SLOT_TOL,
    }
}

/// Movable objects the goal is about.
pub fn goal_objects(inst: &TaskInstance, world: &WorldState) -> Vec<String> {
    let named: Vec<String> = match &inst.goal {
        Goal::Stack { groups, .. } => groups.iter().flat_map(|g| g.members.clone()).collect(),
        Goal::Groups { blocks, .. } => blocks.clone(),
        Goal::Contain { atoms } => atoms.iter().map(|a| a.obj.clone()).collect(),
        Goal::Counts { zones } => zones.iter().flat_map(|(_, b, _)| b.clone()).collect(),
        Goal::Circle { rings, .. } => rings.iter().flat_map(|r| r.members.clone()).collect(),
        Goal::Lattice { members, .. } | Goal::Line { members, .. } | Goal::Fixtures { members, .. } => members.clone(),
    };
    named.into_iter().filter(|id| world.get(id).is_some_and(|o| o.movable && o.kind != Kind::Zone)).collect()
}

/// Shifts each chosen object in the plane by `mag` in a random direction.
pub fn shift(world: &mut WorldState, ids: &[String], rng: &mut ChaCha8Rng, mag: impl Fn(&mut ChaCha8Rng) -> f64) {
    for id in ids {
        let m = mag(rng);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let o = world.get_mut(id).unwrap();
        o.pose.position[0] += m * a.cos();
        o.pose.position[1] += m * a.sin();
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parses and runs a program against `world`, folding refused syntax into
/// the forbidden_construct outcome.
pub fn run_source(src: &str, world: WorldState, seed: u64, budget: &Budget) -> (ExecOutcome, WorldState) {
    match parse_program(src) {
        Ok(p) => {
            let mut env = ApiEnv::new(world, seed);
            let out = execute(&p, &mut env, budget);
            (out, env.world)
        }
        Err(e) => {
            let status = if e.forbidden { ExecStatus::ForbiddenConstruct } else { ExecStatus::ParseError };
            (ExecOutcome { status, detail: None, primitives_issued: 0, infrastructure: false }, world)
        }
    }
}

/// Adversarial programs: refused syntax, runaway recursion and loops, and
/// oversized values.
pub const SANDBOX_CORPUS: [&str; 20] = [
    "import os",
    "from os import system\nsystem(\"ls\")",
    "import subprocess\nsubprocess.run([\"ls\"])",
    "x = get_obj_names().__class__",
    "eval(\"1 + 1\")",
    "exec(\"x = 1\")",
    "open(\"/etc/passwd\")",
    "getattr(get_obj_names, \"x\")",
    "__import__(\"os\")",
    "class A:\n    pass",
    "f = lambda x: x",
    "with open(\"x\") as f:\n    pass",
    "def f(n):\n    return f(n + 1)\nf(0)",
    "def a(n):\n    return b(n)\ndef b(n):\n    return a(n)\na(1)",
    "while True:\n    pass",
    "i = 0\nwhile i >= 0:\n    i = i + 1",
    "for i in range(100000000):\n    pass",
    "x = [0] * 100000",
    "x = [1]\nwhile True:\n    x = x + x",
    "names = get_obj_names()\nput_first_on_second(names[0], names[1])\ns = \"ab\"\nwhile True:\n    s = s + s",
];

/// Every file under `root`, relative path to bytes.
pub fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn bin() -> std::process::Command {
    let mut c = std::process::Command::new(env!("CARGO_BIN_EXE_tabletop"));
    for k in ["TABLETOP_BACKEND", "TABLETOP_ENDPOINT", "TABLETOP_MODEL", "TABLETOP_SCRIPT", "TABLETOP_OUT", "TABLETOP_JOBS", "TABLETOP_API_KEY"] {
        c.env_remove(k);
    }
    c
}
