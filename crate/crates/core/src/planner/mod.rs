//! Main planner and the four co-planners it delegates to.

mod resolve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{
    assemble_planner_prompt, extract_code, fence, Backend, BackendError, BackendKind, CallKey, CompletionRecord,
    ExampleLibrary, ExtractError, PromptBundle,
};
use crate::planlang::ast::{Expr, ExprKind, StmtKind, Target, UnaryOp};
use crate::planlang::{parse_program, HostError, ParseError, PlanProgram, Value};
use crate::reporter::{mock_report, parse_feedback, render_item, reporter_request, FeedbackError, FeedbackReport};
use crate::skills::{LmpContext, LmpDispatch, LmpReply};
use crate::tasks::{oracle_plan, TaskError, TaskInstance};
use crate::world::{FrameTag, Observation, Pose, WorldState};

pub use resolve::{resolve_function, resolve_obj_name, resolve_position};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputContract {
    NameList,
    PoseList,
    PlanFunction,
    FeedbackReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmpSpec {
    pub name: &'static str,
    pub prompt_template: &'static str,
    pub output_contract: OutputContract,
}

pub const LMP_SPECS: [LmpSpec; 4] = [
    LmpSpec {
        name: "parse_obj_name",
        prompt_template: "You select objects. Given a description and a list of object names with their attributes, \
answer with one code block assigning ret_val a list of the matching names, e.g. ret_val = [\"red_block_1\"]. \
Use only names from the list; answer ret_val = [] when nothing matches.",
        output_contract: OutputContract::NameList,
    },
    LmpSpec {
        name: "parse_position",
        prompt_template: "You locate positions on a table. front is x+, left is y-, top is z+, units are meters. \
Given a description and the scene, answer with one code block assigning ret_val a list of (x, y, z) or \
(x, y, z, yaw) tuples.",
        output_contract: OutputContract::PoseList,
    },
    LmpSpec {
        name: "parse_function",
        prompt_template: "You write helper functions in the plan language. Answer with one code block holding a \
single def that implements the description. Use only the robot APIs and basic builtins.",
        output_contract: OutputContract::PlanFunction,
    },
    LmpSpec {
        name: "parse_completion",
        prompt_template: "You judge whether a tabletop task is complete from scene summaries taken before and after \
execution.",
        output_contract: OutputContract::FeedbackReport,
    },
];

pub fn lmp_spec(name: &str) -> Option<&'static LmpSpec> {
    LMP_SPECS.iter().find(|s| s.name == name)
}

const REPORTER_SYSTEM: &str = "You are the reporter for a tabletop robot. You compare the scene before and after \
a plan ran and state which objects are not where the task needs them.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanFailure {
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("extraction failure: {0}")]
    Extraction(#[from] ExtractError),
    #[error("parse failure: {0}")]
    Parse(#[from] ParseError),
    #[error("oracle failure: {0}")]
    Oracle(String),
}

impl PlanFailure {
    pub fn tag(&self) -> &'static str {
        match self {
            PlanFailure::Backend(_) => "backend",
            PlanFailure::Extraction(_) => "extraction",
            PlanFailure::Parse(p) if p.forbidden => "forbidden_construct",
            PlanFailure::Parse(_) => "parse",
            PlanFailure::Oracle(_) => "oracle",
        }
    }

    /// Failures outside the plan's control, excluded from success rates.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, PlanFailure::Backend(BackendError::Transport { .. }))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportFailure {
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("evaluation failure: {0}")]
    Eval(String),
}

impl From<TaskError> for ReportFailure {
    fn from(e: TaskError) -> Self {
        ReportFailure::Eval(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallSource {
    Backend,
    Fallback,
}

/// One completed backend or fallback call, in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTrace {
    pub key: CallKey,
    pub prompt_digest: String,
    pub user_text: String,
    pub response_text: String,
    pub latency_secs: f64,
    pub source: CallSource,
    pub backend: BackendKind,
    /// For co-planner calls, the number of primitives issued before the call.
    #[serde(default)]
    pub at_primitive: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReporterMode {
    /// Ground-truth diff from the evaluator.
    #[default]
    Mock,
    /// Ask the backend; a scripted miss falls back to the mock.
    Backend,
}

/// Per-episode planner state. Not shared between episodes.
pub struct Planner {
    backend: Box<dyn Backend + Send>,
    library: ExampleLibrary,
    oracle: bool,
    reporter: ReporterMode,
    inst: Option<TaskInstance>,
    loop_index: usize,
    trace: Vec<CallTrace>,
    transport_failures: usize,
    at_primitive: usize,
}

impl Planner {
    pub fn new(backend: Box<dyn Backend + Send>, library: ExampleLibrary) -> Self {
        Planner {
            backend,
            library,
            oracle: false,
            reporter: ReporterMode::Mock,
            inst: None,
            loop_index: 0,
            trace: Vec::new(),
            transport_failures: 0,
            at_primitive: 0,
        }
    }

    /// Answer main-planner script misses with the task oracle.
    pub fn with_oracle(mut self, on: bool) -> Self {
        self.oracle = on;
        self
    }

    pub fn with_reporter(mut self, mode: ReporterMode) -> Self {
        self.reporter = mode;
        self
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Backend calls that failed in transport so far.
    pub fn transport_failures(&self) -> usize {
        self.transport_failures
    }

    /// Binds the task and loop used to key co-planner calls made outside `plan`.
    pub fn set_context(&mut self, inst: &TaskInstance, loop_index: usize) {
        self.inst = Some(inst.clone());
        self.loop_index = loop_index;
    }

    /// Calls made since the last drain.
    pub fn take_trace(&mut self) -> Vec<CallTrace> {
        std::mem::take(&mut self.trace)
    }

    fn key(&self, role: &str) -> CallKey {
        let task = self.inst.as_ref().map(|i| i.task.clone()).unwrap_or_default();
        CallKey { task, loop_index: self.loop_index, role: role.to_string() }
    }

    fn record(&mut self, key: CallKey, prompt: &PromptBundle, rec: &CompletionRecord, source: CallSource) {
        self.trace.push(CallTrace {
            key,
            prompt_digest: rec.prompt_digest.clone(),
            user_text: prompt.user_text.clone(),
            response_text: rec.response_text.clone(),
            latency_secs: rec.latency_secs,
            source,
            backend: rec.backend,
            at_primitive: self.at_primitive,
        });
    }

    fn fallback_record(&self, prompt: &PromptBundle, text: String) -> CompletionRecord {
        CompletionRecord { prompt_digest: prompt.digest(), response_text: text, latency_secs: 0.0, backend: self.backend.kind() }
    }

    fn complete(&mut self, key: &CallKey, prompt: &PromptBundle) -> Result<CompletionRecord, BackendError> {
        let r = self.backend.complete(key, prompt);
        if let Err(BackendError::Transport { .. }) = r {
            self.transport_failures += 1;
        }
        r
    }

    /// One main-planner call: prompt, completion, extraction, parse. Never
    /// touches the world.
    pub fn plan(
        &mut self,
        inst: &TaskInstance,
        world: &WorldState,
        feedback: Option<&FeedbackReport>,
        loop_index: usize,
    ) -> Result<PlanProgram, PlanFailure> {
        self.inst = Some(inst.clone());
        self.loop_index = loop_index;
        self.at_primitive = 0;
        let obs = world.observe(FrameTag::Before);
        let prompt = assemble_planner_prompt(inst, &obs, feedback, &self.library, &world.bounds);
        let key = self.key("planner");
        let (rec, source) = match self.complete(&key, &prompt) {
            Ok(r) => (r, CallSource::Backend),
            Err(BackendError::ScriptMissing(_)) if self.oracle => {
                let src = oracle_plan(inst, world, &obs).map_err(|e| PlanFailure::Oracle(e.to_string()))?;
                (self.fallback_record(&prompt, fence(&src)), CallSource::Fallback)
            }
            Err(e) => return Err(e.into()),
        };
        self.record(key, &prompt, &rec, source);
        let code = extract_code(&rec.response_text)?;
        Ok(parse_program(&code)?)
    }

    /// Reporter call for the end of a loop.
    pub fn report(
        &mut self,
        inst: &TaskInstance,
        before: &Observation,
        after_world: &WorldState,
    ) -> Result<FeedbackReport, ReportFailure> {
        if self.reporter == ReporterMode::Mock {
            return Ok(mock_report(inst, after_world)?);
        }
        self.at_primitive = 0;
        let after = after_world.observe(FrameTag::After);
        let prompt = PromptBundle::simple(REPORTER_SYSTEM, reporter_request(&inst.instruction, before, &after));
        let key = self.key("reporter");
        let (rec, source) = match self.complete(&key, &prompt) {
            Ok(r) => (r, CallSource::Backend),
            Err(BackendError::ScriptMissing(_)) => {
                let r = mock_report(inst, after_world)?;
                (self.fallback_record(&prompt, crate::reporter::render_structured(&r)), CallSource::Fallback)
            }
            Err(e) => return Err(e.into()),
        };
        self.record(key, &prompt, &rec, source);
        Ok(parse_feedback(&rec.response_text)?)
    }

    fn lmp_prompt(&self, spec: &LmpSpec, dsc: &str, context: &str) -> PromptBundle {
        let mut user = format!("Description: {dsc}");
        if !context.is_empty() {
            user.push_str("\n\n");
            user.push_str(context);
        }
        PromptBundle::simple(spec.prompt_template, user)
    }
}

fn str_arg<'v>(args: &'v [Value], i: usize, f: &str) -> Result<&'v str, HostError> {
    args.get(i)
        .and_then(Value::as_str)
        .ok_or_else(|| HostError::runtime(format!("{f}() expects a text description as argument {}", i + 1)))
}

fn summary_of(obs: &Observation, ids: &[String]) -> String {
    obs.visible
        .iter()
        .filter(|o| ids.contains(&o.id))
        .map(crate::world::summary_line)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Evaluates a literal expression (numbers, strings, lists, tuples).
fn literal(e: &Expr) -> Option<Value> {
    Some(match &e.kind {
        ExprKind::Number(n) => Value::Number(*n),
        ExprKind::Str(s) => Value::str(s),
        ExprKind::Bool(b) => Value::Bool(*b),
        ExprKind::None => Value::None,
        ExprKind::Unary(UnaryOp::Neg, inner) => Value::Number(-literal(inner)?.as_number()?),
        ExprKind::Unary(UnaryOp::Pos, inner) => Value::Number(literal(inner)?.as_number()?),
        ExprKind::List(xs) => Value::list(xs.iter().map(literal).collect::<Option<_>>()?),
        ExprKind::Tuple(xs) => Value::tuple(xs.iter().map(literal).collect::<Option<_>>()?),
        _ => return None,
    })
}

/// The `ret_val` literal of a co-planner reply, or its last bare expression.
fn reply_literal(text: &str) -> Option<Value> {
    let code = extract_code(text).ok()?;
    let prog = parse_program(&code).ok()?;
    prog.ast.iter().rev().find_map(|s| match &s.kind {
        StmtKind::Assign(Target::Name(n), e) if n == "ret_val" => literal(e),
        StmtKind::Expr(e) => literal(e),
        _ => None,
    })
}

fn names_value(names: &[String]) -> Value {
    Value::list(names.iter().map(|n| Value::str(n)).collect())
}

/// Reply text a backend would give for `names`; replays to the same value.
fn names_reply(names: &[String]) -> String {
    let items: Vec<String> = names.iter().map(|n| serde_json::to_string(n).expect("string")).collect();
    format!("ret_val = [{}]", items.join(", "))
}

fn poses_reply(poses: &[Pose]) -> String {
    let items: Vec<String> = poses
        .iter()
        .map(|p| format!("({}, {}, {}, {})", p.position[0], p.position[1], p.position[2], p.yaw))
        .collect();
    format!("ret_val = [{}]", items.join(", "))
}

fn poses_value(poses: &[Pose]) -> Value {
    Value::list(poses.iter().map(|p| Value::Pose(*p)).collect())
}

fn feedback_value(r: &FeedbackReport) -> Value {
    Value::tuple(vec![Value::Bool(r.success), Value::list(r.items.iter().map(|i| Value::str(&render_item(i))).collect())])
}

fn value_poses(v: &Value) -> Option<Vec<Pose>> {
    v.items()?
        .iter()
        .map(|p| match p {
            Value::Pose(p) => Some(*p),
            other => match other.numbers()?.as_slice() {
                [x, y, z] => Some(Pose::at(*x, *y, *z)),
                [x, y, z, yaw] => Some(Pose::new([*x, *y, *z], *yaw)),
                _ => None,
            },
        })
        .collect()
}

fn function_reply(text: &str) -> Result<LmpReply, HostError> {
    let code = extract_code(text).map_err(|e| HostError::runtime(format!("parse_function: {e}")))?;
    let prog = parse_program(&code).map_err(|e| HostError::runtime(format!("parse_function: generated code does not parse: {e}")))?;
    prog.functions()
        .into_iter()
        .next()
        .map(LmpReply::Function)
        .ok_or_else(|| HostError::runtime("parse_function: generated code defines no function"))
}

impl LmpDispatch for Planner {
    fn call_lmp(&mut self, name: &str, args: &[Value], ctx: &LmpContext) -> Result<LmpReply, HostError> {
        let world = ctx.world;
        self.at_primitive = ctx.primitives_issued;
        let spec = lmp_spec(name).ok_or_else(|| HostError::runtime(format!("unknown co-planner `{name}`")))?;
        let dsc = str_arg(args, 0, name)?.to_string();
        let obs = world.observe(FrameTag::Before);
        let ctxt: Vec<String> = match (spec.output_contract, args.get(1)) {
            (OutputContract::NameList, Some(v)) => v
                .items()
                .and_then(|xs| xs.iter().map(|x| x.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
                .ok_or_else(|| HostError::runtime("parse_obj_name() expects a list of names as context"))?,
            (OutputContract::NameList, None) => obs.names(),
            _ => Vec::new(),
        };
        let context = match spec.output_contract {
            OutputContract::NameList => format!("Objects:\n{}", summary_of(&obs, &ctxt)),
            OutputContract::PoseList => format!("Scene:\n{}", obs.summary_text()),
            OutputContract::PlanFunction => String::new(),
            OutputContract::FeedbackReport => {
                args.get(1).map(|v| match v.as_str() { Some(s) => s.to_string(), None => v.repr() }).unwrap_or_default()
            }
        };
        let prompt = self.lmp_prompt(spec, &dsc, &context);
        let key = self.key(name);
        let reply = match self.complete(&key, &prompt) {
            Ok(rec) => {
                self.record(key, &prompt, &rec, CallSource::Backend);
                let text = &rec.response_text;
                let bad = || HostError::runtime(format!("{name}: reply does not meet its output contract"));
                match spec.output_contract {
                    OutputContract::NameList => {
                        let v = reply_literal(text).ok_or_else(bad)?;
                        let got: Vec<String> =
                            v.items().ok_or_else(bad)?.iter().filter_map(|x| x.as_str().map(str::to_string)).collect();
                        LmpReply::Value(names_value(&got.into_iter().filter(|n| ctxt.contains(n)).collect::<Vec<_>>()))
                    }
                    OutputContract::PoseList => {
                        let v = reply_literal(text).ok_or_else(bad)?;
                        LmpReply::Value(poses_value(&value_poses(&v).ok_or_else(bad)?))
                    }
                    OutputContract::PlanFunction => function_reply(text)?,
                    OutputContract::FeedbackReport => {
                        let r = parse_feedback(text).map_err(|e| HostError::runtime(format!("{name}: {e}")))?;
                        LmpReply::Value(feedback_value(&r))
                    }
                }
            }
            Err(BackendError::ScriptMissing(_)) => {
                let (value, text) = match spec.output_contract {
                    OutputContract::NameList => {
                        let names = resolve_obj_name(&dsc, &ctxt, world);
                        (LmpReply::Value(names_value(&names)), names_reply(&names))
                    }
                    OutputContract::PoseList => {
                        let poses = resolve_position(&dsc, world);
                        (LmpReply::Value(poses_value(&poses)), poses_reply(&poses))
                    }
                    OutputContract::PlanFunction => {
                        let src = resolve_function(&dsc)
                            .ok_or_else(|| HostError::runtime(format!("parse_function: cannot implement `{dsc}`")))?;
                        let f = function_reply(&src)?;
                        (f, fence(&src))
                    }
                    OutputContract::FeedbackReport => {
                        let inst = self.inst.as_ref().ok_or_else(|| HostError::runtime("parse_completion: no active task"))?;
                        let r = mock_report(inst, world).map_err(|e| HostError::runtime(e.to_string()))?;
                        (LmpReply::Value(feedback_value(&r)), crate::reporter::render_structured(&r))
                    }
                };
                let rec = self.fallback_record(&prompt, text);
                self.record(key, &prompt, &rec, CallSource::Fallback);
                value
            }
            Err(e @ BackendError::Transport { .. }) => return Err(HostError::infrastructure(e.to_string())),
            Err(e) => return Err(HostError::runtime(e.to_string())),
        };
        Ok(reply)
    }
}
