use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::ast::*;
use super::printer::{number, quote};
use super::{Budget, ExecDetail, ExecOutcome, ExecStatus, PlanProgram, Pos};
use crate::sim::StepResult;
use crate::world::{Aabb, Pose};

pub const MAX_SEQUENCE_LEN: usize = 10_000;
pub const MAX_STRING_LEN: usize = 100_000;

const BUILTINS: [&str; 22] = [
    "len", "range", "min", "max", "abs", "sorted", "enumerate", "zip", "round", "sum", "format",
    "print", "str", "int", "float", "list", "tuple", "bool", "any", "all", "reversed", "isinstance",
];

pub fn builtin_names() -> &'static [&'static str] {
    &BUILTINS
}

#[derive(Clone)]
pub enum Value {
    Number(f64),
    Str(Rc<str>),
    Bool(bool),
    None,
    List(Rc<RefCell<Vec<Value>>>),
    Tuple(Rc<Vec<Value>>),
    Pose(Pose),
    Aabb(Aabb),
    Step(Rc<StepResult>),
    HostFn(Rc<str>),
    PlanFn(Rc<FunctionDef>),
    Builtin(&'static str),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Rc::from(s))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(RefCell::new(items)))
    }

    pub fn tuple(items: Vec<Value>) -> Value {
        Value::Tuple(Rc::new(items))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::Bool(_) => "bool",
            Value::None => "None",
            Value::List(_) => "list",
            Value::Tuple(_) => "tuple",
            Value::Pose(_) => "pose",
            Value::Aabb(_) => "aabb",
            Value::Step(_) => "step_result",
            Value::HostFn(_) | Value::PlanFn(_) | Value::Builtin(_) => "function",
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::Number(n) => *n != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::Bool(b) => *b,
            Value::None => false,
            Value::List(l) => !l.borrow().is_empty(),
            Value::Tuple(t) => !t.is_empty(),
            Value::Step(s) => s.ok,
            _ => true,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Elements of anything that can be iterated or destructured.
    pub fn items(&self) -> Option<Vec<Value>> {
        match self {
            Value::List(l) => Some(l.borrow().clone()),
            Value::Tuple(t) => Some(t.as_ref().clone()),
            Value::Str(s) => Some(s.chars().map(|c| Value::str(&c.to_string())).collect()),
            Value::Pose(p) => Some(vec![
                Value::Number(p.position[0]),
                Value::Number(p.position[1]),
                Value::Number(p.position[2]),
                Value::Number(p.yaw),
            ]),
            Value::Aabb(b) => Some(vec![
                Value::tuple(b.min.iter().map(|v| Value::Number(*v)).collect()),
                Value::tuple(b.max.iter().map(|v| Value::Number(*v)).collect()),
            ]),
            Value::Step(s) => Some(vec![
                Value::Bool(s.ok),
                s.failure_reason.map(|r| Value::str(r.name())).unwrap_or(Value::None),
            ]),
            _ => None,
        }
    }

    /// Numeric vector view: a tuple/list of numbers, or a pose's (x, y, z, yaw).
    pub fn numbers(&self) -> Option<Vec<f64>> {
        self.items()?.iter().map(|v| v.as_number()).collect()
    }

    /// `str()` rendering.
    pub fn display(&self) -> String {
        match self {
            Value::Str(s) => s.to_string(),
            other => other.repr(),
        }
    }

    pub fn repr(&self) -> String {
        match self {
            Value::Number(n) => number(*n),
            Value::Str(s) => quote(s),
            Value::Bool(true) => "True".into(),
            Value::Bool(false) => "False".into(),
            Value::None => "None".into(),
            Value::List(l) => format!("[{}]", join_repr(&l.borrow())),
            Value::Tuple(t) if t.len() == 1 => format!("({},)", t[0].repr()),
            Value::Tuple(t) => format!("({})", join_repr(t)),
            Value::Pose(_) | Value::Aabb(_) | Value::Step(_) => {
                format!("({})", join_repr(&self.items().unwrap_or_default()))
            }
            Value::HostFn(n) => format!("<function {n}>"),
            Value::PlanFn(d) => format!("<function {}>", d.name),
            Value::Builtin(n) => format!("<builtin {n}>"),
        }
    }
}

fn join_repr(items: &[Value]) -> String {
    items.iter().map(|v| v.repr()).collect::<Vec<_>>().join(", ")
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.repr())
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        values_equal(self, other)
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::None, Value::None) => true,
        (Value::List(x), Value::List(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| values_equal(p, q))
        }
        (Value::Tuple(_) | Value::Pose(_) | Value::Aabb(_), Value::Tuple(_) | Value::Pose(_) | Value::Aabb(_)) => {
            let (x, y) = (a.items().unwrap_or_default(), b.items().unwrap_or_default());
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| values_equal(p, q))
        }
        (Value::HostFn(x), Value::HostFn(y)) => x == y,
        (Value::Builtin(x), Value::Builtin(y)) => x == y,
        (Value::PlanFn(x), Value::PlanFn(y)) => Rc::ptr_eq(x, y),
        (Value::Step(x), Value::Step(y)) => x == y,
        _ => match (a.as_number(), b.as_number()) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostErrorKind {
    Runtime,
    Budget,
    Infrastructure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostError {
    pub kind: HostErrorKind,
    pub message: String,
}

impl HostError {
    pub fn runtime(message: impl Into<String>) -> Self {
        HostError { kind: HostErrorKind::Runtime, message: message.into() }
    }

    pub fn budget(message: impl Into<String>) -> Self {
        HostError { kind: HostErrorKind::Budget, message: message.into() }
    }

    pub fn infrastructure(message: impl Into<String>) -> Self {
        HostError { kind: HostErrorKind::Infrastructure, message: message.into() }
    }
}

impl fmt::Display for HostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for HostError {}

/// The environment a plan program runs against.
pub trait Host {
    /// True for every name the host binds (API and LMP functions).
    fn has_function(&self, name: &str) -> bool;
    /// True for host functions that count against the primitive budget.
    fn is_primitive(&self, name: &str) -> bool;
    fn call(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> Result<Value, HostError>;
    /// Plan functions registered in earlier loops of the episode.
    fn registered(&self, _name: &str) -> Option<Rc<FunctionDef>> {
        None
    }
    fn register(&mut self, name: &str, _def: Rc<FunctionDef>) -> Result<(), HostError> {
        Err(HostError::runtime(format!("this host does not accept function `{name}`")))
    }
}

enum Signal {
    Fail(ExecStatus, String, Pos, bool),
    Return(Value),
    Break,
    Continue,
}

type R<T> = Result<T, Signal>;

fn rt<T>(pos: Pos, msg: impl Into<String>) -> R<T> {
    Err(Signal::Fail(ExecStatus::RuntimeError, msg.into(), pos, false))
}

fn exhausted<T>(pos: Pos, msg: impl Into<String>) -> R<T> {
    Err(Signal::Fail(ExecStatus::BudgetExhausted, msg.into(), pos, false))
}

struct Interp<'h> {
    host: &'h mut dyn Host,
    budget: Budget,
    steps: u64,
    depth: usize,
    primitives: usize,
    globals: HashMap<String, Value>,
    frames: Vec<HashMap<String, Value>>,
}

/// Runs `program` against `host`. Partial effects of a failed run stay in the host.
pub fn execute(program: &PlanProgram, host: &mut dyn Host, budget: &Budget) -> ExecOutcome {
    let mut it = Interp {
        host,
        budget: *budget,
        steps: 0,
        depth: 0,
        primitives: 0,
        globals: HashMap::new(),
        frames: Vec::new(),
    };
    let result = it.block(&program.ast);
    let primitives = it.primitives;
    match result {
        Ok(()) => ExecOutcome::completed(primitives),
        Err(Signal::Fail(status, message, pos, infra)) => ExecOutcome {
            status,
            detail: Some(ExecDetail { message, line: pos.line, col: pos.col }),
            primitives_issued: primitives,
            infrastructure: infra,
        },
        Err(Signal::Return(_)) => ExecOutcome::completed(primitives),
        Err(Signal::Break) | Err(Signal::Continue) => ExecOutcome {
            status: ExecStatus::RuntimeError,
            detail: Some(ExecDetail { message: "`break` or `continue` outside a loop".into(), line: 0, col: 0 }),
            primitives_issued: primitives,
            infrastructure: false,
        },
    }
}

impl Interp<'_> {
    fn tick(&mut self, pos: Pos) -> R<()> {
        self.steps += 1;
        if self.steps > self.budget.max_eval_steps {
            return exhausted(pos, format!("evaluation step budget of {} exhausted", self.budget.max_eval_steps));
        }
        Ok(())
    }

    fn block(&mut self, body: &[Stmt]) -> R<()> {
        for s in body {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn set(&mut self, name: &str, v: Value) {
        match self.frames.last_mut() {
            Some(f) => f.insert(name.to_string(), v),
            None => self.globals.insert(name.to_string(), v),
        };
    }

    fn lookup(&self, name: &str, pos: Pos) -> R<Value> {
        if let Some(v) = self.frames.last().and_then(|f| f.get(name)) {
            return Ok(v.clone());
        }
        if let Some(v) = self.globals.get(name) {
            return Ok(v.clone());
        }
        if let Some(d) = self.host.registered(name) {
            return Ok(Value::PlanFn(d));
        }
        if let Some(b) = BUILTINS.iter().find(|b| **b == name) {
            return Ok(Value::Builtin(b));
        }
        if self.host.has_function(name) {
            return Ok(Value::HostFn(Rc::from(name)));
        }
        rt(pos, format!("name `{name}` is not defined"))
    }

    fn stmt(&mut self, s: &Stmt) -> R<()> {
        self.tick(s.pos)?;
        match &s.kind {
            StmtKind::Assign(t, e) => {
                let v = self.eval(e)?;
                self.assign(t, v, s.pos)
            }
            StmtKind::AugAssign(t, op, e) => {
                let cur = match t {
                    Target::Name(n) => self.lookup(n, s.pos)?,
                    Target::Index(n, i) => {
                        let base = self.lookup(n, s.pos)?;
                        let idx = self.eval(i)?;
                        self.index(&base, &idx, s.pos)?
                    }
                    Target::Tuple(_) => return rt(s.pos, "augmented assignment needs a single target"),
                };
                let rhs = self.eval(e)?;
                let v = self.binary(*op, cur, rhs, s.pos)?;
                self.assign(t, v, s.pos)
            }
            StmtKind::Expr(e) => self.eval(e).map(|_| ()),
            StmtKind::If { branches, orelse } => {
                for (cond, body) in branches {
                    if self.eval(cond)?.truthy() {
                        return self.block(body);
                    }
                }
                match orelse {
                    Some(body) => self.block(body),
                    None => Ok(()),
                }
            }
            StmtKind::While(cond, body) => {
                while self.eval(cond)?.truthy() {
                    match self.block(body) {
                        Err(Signal::Break) => break,
                        Err(Signal::Continue) | Ok(()) => {}
                        Err(other) => return Err(other),
                    }
                }
                Ok(())
            }
            StmtKind::For(t, iter, body) => {
                let seq = self.eval(iter)?;
                let Some(items) = seq.items() else {
                    return rt(iter.pos, format!("cannot iterate over {}", seq.type_name()));
                };
                for item in items {
                    self.assign(t, item, s.pos)?;
                    match self.block(body) {
                        Err(Signal::Break) => break,
                        Err(Signal::Continue) | Ok(()) => {}
                        Err(other) => return Err(other),
                    }
                }
                Ok(())
            }
            StmtKind::Def(d) => {
                self.set(&d.name, Value::PlanFn(d.clone()));
                Ok(())
            }
            StmtKind::Return(v) => {
                if self.frames.is_empty() {
                    return rt(s.pos, "`return` outside a function");
                }
                let v = match v {
                    Some(e) => self.eval(e)?,
                    None => Value::None,
                };
                Err(Signal::Return(v))
            }
            StmtKind::Pass => Ok(()),
            StmtKind::Break => Err(Signal::Break),
            StmtKind::Continue => Err(Signal::Continue),
        }
    }

    fn assign(&mut self, t: &Target, v: Value, pos: Pos) -> R<()> {
        match t {
            Target::Name(n) => {
                self.set(n, v);
                Ok(())
            }
            Target::Tuple(targets) => {
                let Some(items) = v.items() else {
                    return rt(pos, format!("cannot unpack {}", v.type_name()));
                };
                if items.len() != targets.len() {
                    return rt(pos, format!("expected {} values to unpack, got {}", targets.len(), items.len()));
                }
                for (t, v) in targets.iter().zip(items) {
                    self.assign(t, v, pos)?;
                }
                Ok(())
            }
            Target::Index(n, i) => {
                let base = self.lookup(n, pos)?;
                let idx = self.eval(i)?;
                let Value::List(l) = base else {
                    return rt(pos, format!("{} does not support item assignment", base.type_name()));
                };
                let len = l.borrow().len();
                let k = self.norm_index(&idx, len, pos)?;
                l.borrow_mut()[k] = v;
                Ok(())
            }
        }
    }

    fn norm_index(&self, idx: &Value, len: usize, pos: Pos) -> R<usize> {
        let Some(n) = idx.as_number() else {
            return rt(pos, format!("index must be a number, not {}", idx.type_name()));
        };
        if n.fract() != 0.0 {
            return rt(pos, "index must be an integer");
        }
        let k = if n < 0.0 { n + len as f64 } else { n };
        if k < 0.0 || k >= len as f64 {
            return rt(pos, "index out of range");
        }
        Ok(k as usize)
    }

    fn index(&self, base: &Value, idx: &Value, pos: Pos) -> R<Value> {
        let Some(items) = base.items() else {
            return rt(pos, format!("{} is not indexable", base.type_name()));
        };
        let k = self.norm_index(idx, items.len(), pos)?;
        Ok(items[k].clone())
    }

    fn eval(&mut self, e: &Expr) -> R<Value> {
        self.tick(e.pos)?;
        let pos = e.pos;
        match &e.kind {
            ExprKind::Number(n) => Ok(Value::Number(*n)),
            ExprKind::Str(s) => Ok(Value::str(s)),
            ExprKind::Bool(b) => Ok(Value::Bool(*b)),
            ExprKind::None => Ok(Value::None),
            ExprKind::Name(n) => self.lookup(n, pos),
            ExprKind::List(items) => {
                let v = self.eval_all(items)?;
                Ok(Value::list(v))
            }
            ExprKind::Tuple(items) => {
                let v = self.eval_all(items)?;
                Ok(Value::tuple(v))
            }
            ExprKind::Binary(op, l, r) => {
                let a = self.eval(l)?;
                let b = self.eval(r)?;
                self.binary(*op, a, b, pos)
            }
            ExprKind::Unary(op, v) => {
                let v = self.eval(v)?;
                match op {
                    UnaryOp::Not => Ok(Value::Bool(!v.truthy())),
                    UnaryOp::Neg | UnaryOp::Pos => match v.as_number() {
                        Some(n) => Ok(Value::Number(if *op == UnaryOp::Neg { -n } else { n })),
                        None => rt(pos, format!("bad operand type for unary minus: {}", v.type_name())),
                    },
                }
            }
            ExprKind::Bool2(op, l, r) => {
                let a = self.eval(l)?;
                match (op, a.truthy()) {
                    (BoolOp::And, false) | (BoolOp::Or, true) => Ok(a),
                    _ => self.eval(r),
                }
            }
            ExprKind::Compare(first, rest) => {
                let mut lhs = self.eval(first)?;
                for (op, re) in rest {
                    let rhs = self.eval(re)?;
                    if !self.compare(*op, &lhs, &rhs, re.pos)? {
                        return Ok(Value::Bool(false));
                    }
                    lhs = rhs;
                }
                Ok(Value::Bool(true))
            }
            ExprKind::IfElse { cond, then, orelse } => {
                if self.eval(cond)?.truthy() {
                    self.eval(then)
                } else {
                    self.eval(orelse)
                }
            }
            ExprKind::Call { func, args, kwargs } => {
                let f = self.eval(func)?;
                let args = self.eval_all(args)?;
                let mut kw = Vec::with_capacity(kwargs.len());
                for (k, v) in kwargs {
                    kw.push((k.clone(), self.eval(v)?));
                }
                self.call(&f, args, kw, pos)
            }
            ExprKind::Index(v, i) => {
                let base = self.eval(v)?;
                let idx = self.eval(i)?;
                self.index(&base, &idx, pos)
            }
            ExprKind::Slice { value, lo, hi } => {
                let base = self.eval(value)?;
                let lo = match lo {
                    Some(e) => Some(self.eval(e)?),
                    None => None,
                };
                let hi = match hi {
                    Some(e) => Some(self.eval(e)?),
                    None => None,
                };
                slice(&base, lo.as_ref(), hi.as_ref(), pos)
            }
        }
    }

    fn eval_all(&mut self, items: &[Expr]) -> R<Vec<Value>> {
        let mut out = Vec::with_capacity(items.len());
        for e in items {
            out.push(self.eval(e)?);
        }
        Ok(out)
    }

    fn binary(&mut self, op: BinOp, a: Value, b: Value, pos: Pos) -> R<Value> {
        if let (Some(x), Some(y)) = (a.as_number(), b.as_number()) {
            let r = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div | BinOp::FloorDiv | BinOp::Mod if y == 0.0 => {
                    return rt(pos, "division by zero");
                }
                BinOp::Div => x / y,
                BinOp::FloorDiv => (x / y).floor(),
                BinOp::Mod => x - y * (x / y).floor(),
                BinOp::Pow => {
                    if x == 0.0 && y < 0.0 {
                        return rt(pos, "zero cannot be raised to a negative power");
                    }
                    x.powf(y)
                }
            };
            return number_result(r, pos);
        }
        match (op, &a, &b) {
            (BinOp::Add, Value::Str(x), Value::Str(y)) => {
                if x.len() + y.len() > MAX_STRING_LEN {
                    return exhausted(pos, "string length cap exceeded");
                }
                Ok(Value::str(&format!("{x}{y}")))
            }
            (BinOp::Add, Value::List(x), Value::List(y)) => {
                let mut v = x.borrow().clone();
                v.extend(y.borrow().iter().cloned());
                check_len(v.len(), pos)?;
                Ok(Value::list(v))
            }
            (BinOp::Add, Value::Tuple(x), Value::Tuple(y)) => {
                let mut v = x.as_ref().clone();
                v.extend(y.iter().cloned());
                check_len(v.len(), pos)?;
                Ok(Value::tuple(v))
            }
            (BinOp::Mul, _, _) if a.as_number().is_some() || b.as_number().is_some() => {
                let (seq, n) = match a.as_number() {
                    Some(n) => (&b, n),
                    None => (&a, b.as_number().unwrap_or(0.0)),
                };
                if !matches!(seq, Value::Str(_) | Value::List(_) | Value::Tuple(_)) {
                    return rt(pos, format!("cannot multiply {} by a number", seq.type_name()));
                }
                if n.fract() != 0.0 {
                    return rt(pos, "can only repeat a sequence an integer number of times");
                }
                let times = n.max(0.0) as usize;
                match seq {
                    Value::Str(s) => {
                        if s.len().saturating_mul(times) > MAX_STRING_LEN {
                            return exhausted(pos, "string length cap exceeded");
                        }
                        Ok(Value::str(&s.repeat(times)))
                    }
                    _ => {
                        let items = seq.items().unwrap_or_default();
                        check_len(items.len().saturating_mul(times), pos)?;
                        let mut v = Vec::with_capacity(items.len() * times);
                        for _ in 0..times {
                            v.extend(items.iter().cloned());
                        }
                        Ok(if matches!(seq, Value::List(_)) { Value::list(v) } else { Value::tuple(v) })
                    }
                }
            }
            _ => rt(
                pos,
                format!("unsupported operand types for {}: {} and {}", op.symbol(), a.type_name(), b.type_name()),
            ),
        }
    }

    fn compare(&mut self, op: CmpOp, a: &Value, b: &Value, pos: Pos) -> R<bool> {
        match op {
            CmpOp::Eq => Ok(values_equal(a, b)),
            CmpOp::Ne => Ok(!values_equal(a, b)),
            CmpOp::In | CmpOp::NotIn => {
                let found = match (a, b) {
                    (Value::Str(x), Value::Str(y)) => y.contains(x.as_ref()),
                    (_, seq) => match seq.items() {
                        Some(items) => items.iter().any(|v| values_equal(a, v)),
                        None => return rt(pos, format!("`in` needs a sequence, not {}", b.type_name())),
                    },
                };
                Ok(found == (op == CmpOp::In))
            }
            _ => {
                let Some(ord) = order(a, b) else {
                    return rt(pos, format!("cannot order {} and {}", a.type_name(), b.type_name()));
                };
                Ok(match op {
                    CmpOp::Lt => ord == Ordering::Less,
                    CmpOp::Le => ord != Ordering::Greater,
                    CmpOp::Gt => ord == Ordering::Greater,
                    _ => ord != Ordering::Less,
                })
            }
        }
    }

    fn call(&mut self, f: &Value, args: Vec<Value>, kwargs: Vec<(String, Value)>, pos: Pos) -> R<Value> {
        match f {
            Value::PlanFn(def) => self.call_plan(def, args, kwargs, pos),
            Value::Builtin(name) => self.builtin(name, args, kwargs, pos),
            Value::HostFn(name) => {
                let primitive = self.host.is_primitive(name);
                if primitive && self.primitives >= self.budget.max_primitives {
                    return exhausted(pos, format!("primitive budget of {} exhausted", self.budget.max_primitives));
                }
                let result = self.host.call(name, args, kwargs);
                if primitive {
                    self.primitives += 1;
                }
                match result {
                    Ok(v) => Ok(v),
                    Err(e) => match e.kind {
                        HostErrorKind::Runtime => rt(pos, format!("{name}: {}", e.message)),
                        HostErrorKind::Budget => exhausted(pos, format!("{name}: {}", e.message)),
                        HostErrorKind::Infrastructure => Err(Signal::Fail(
                            ExecStatus::RuntimeError,
                            format!("{name}: {}", e.message),
                            pos,
                            true,
                        )),
                    },
                }
            }
            other => rt(pos, format!("{} is not callable", other.type_name())),
        }
    }

    fn call_plan(&mut self, def: &Rc<FunctionDef>, args: Vec<Value>, kwargs: Vec<(String, Value)>, pos: Pos) -> R<Value> {
        if self.depth >= self.budget.max_call_depth {
            return exhausted(pos, format!("call depth limit of {} exceeded", self.budget.max_call_depth));
        }
        if args.len() > def.params.len() {
            return rt(pos, format!("{}() takes {} arguments but {} were given", def.name, def.params.len(), args.len()));
        }
        let mut slots: Vec<Option<Value>> = vec![None; def.params.len()];
        for (i, a) in args.into_iter().enumerate() {
            slots[i] = Some(a);
        }
        for (k, v) in kwargs {
            let Some(i) = def.params.iter().position(|p| p.name == k) else {
                return rt(pos, format!("{}() got an unexpected keyword argument `{k}`", def.name));
            };
            if slots[i].is_some() {
                return rt(pos, format!("{}() got multiple values for `{k}`", def.name));
            }
            slots[i] = Some(v);
        }
        let mut frame = HashMap::new();
        for (p, slot) in def.params.iter().zip(slots) {
            let v = match (slot, &p.default) {
                (Some(v), _) => v,
                (None, Some(d)) => self.eval(d)?,
                (None, None) => return rt(pos, format!("{}() missing argument `{}`", def.name, p.name)),
            };
            frame.insert(p.name.clone(), v);
        }
        self.depth += 1;
        self.frames.push(frame);
        let r = self.block(&def.body);
        self.frames.pop();
        self.depth -= 1;
        match r {
            Ok(()) => Ok(Value::None),
            Err(Signal::Return(v)) => Ok(v),
            Err(Signal::Break) | Err(Signal::Continue) => rt(pos, "`break` or `continue` outside a loop"),
            Err(e) => Err(e),
        }
    }

    fn key_values(&mut self, items: &[Value], key: Option<&Value>, pos: Pos) -> R<Vec<Value>> {
        match key {
            None | Some(Value::None) => Ok(items.to_vec()),
            Some(f) => {
                let mut out = Vec::with_capacity(items.len());
                for it in items {
                    out.push(self.call(f, vec![it.clone()], Vec::new(), pos)?);
                }
                Ok(out)
            }
        }
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>, pos: Pos) -> R<Value> {
        let kw = |k: &str| kwargs.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone());
        let allowed: &[&str] = match name {
            "sorted" => &["key", "reverse"],
            "min" | "max" => &["key", "default"],
            "enumerate" | "sum" => &["start"],
            "round" => &["ndigits"],
            "print" => &["sep", "end"],
            _ => &[],
        };
        if let Some((k, _)) = kwargs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return rt(pos, format!("{name}() got an unexpected keyword argument `{k}`"));
        }
        let arity = |lo: usize, hi: usize| -> R<()> {
            if args.len() < lo || args.len() > hi {
                return rt(pos, format!("{name}() takes {lo}..={hi} arguments, got {}", args.len()));
            }
            Ok(())
        };
        let seq = |v: &Value| -> R<Vec<Value>> {
            match v.items() {
                Some(items) => Ok(items),
                None => rt(pos, format!("{name}() needs a sequence, not {}", v.type_name())),
            }
        };
        let num = |v: &Value| -> R<f64> {
            match v.as_number() {
                Some(n) => Ok(n),
                None => rt(pos, format!("{name}() needs a number, not {}", v.type_name())),
            }
        };
        match name {
            "len" => {
                arity(1, 1)?;
                match &args[0] {
                    Value::Str(s) => Ok(Value::Number(s.chars().count() as f64)),
                    v => Ok(Value::Number(seq(v)?.len() as f64)),
                }
            }
            "range" => {
                arity(1, 3)?;
                let ns: Vec<f64> = args.iter().map(num).collect::<R<_>>()?;
                if ns.iter().any(|n| n.fract() != 0.0) {
                    return rt(pos, "range() arguments must be integers");
                }
                let (start, stop, step) = match ns.len() {
                    1 => (0.0, ns[0], 1.0),
                    2 => (ns[0], ns[1], 1.0),
                    _ => (ns[0], ns[1], ns[2]),
                };
                if step == 0.0 {
                    return rt(pos, "range() step must not be zero");
                }
                let count = ((stop - start) / step).ceil().max(0.0);
                if count > MAX_SEQUENCE_LEN as f64 {
                    return exhausted(pos, "sequence length cap exceeded");
                }
                Ok(Value::list((0..count as usize).map(|i| Value::Number(start + step * i as f64)).collect()))
            }
            "min" | "max" => {
                let items = if args.len() == 1 { seq(&args[0])? } else { args.clone() };
                if items.is_empty() {
                    return match kw("default") {
                        Some(d) => Ok(d),
                        None => rt(pos, format!("{name}() of an empty sequence")),
                    };
                }
                let keys = self.key_values(&items, kw("key").as_ref(), pos)?;
                let mut best = 0;
                for i in 1..items.len() {
                    let Some(ord) = order(&keys[i], &keys[best]) else {
                        return rt(pos, format!("{name}() cannot order {} and {}", keys[i].type_name(), keys[best].type_name()));
                    };
                    let better = if name == "min" { ord == Ordering::Less } else { ord == Ordering::Greater };
                    if better {
                        best = i;
                    }
                }
                Ok(items[best].clone())
            }
            "abs" => {
                arity(1, 1)?;
                Ok(Value::Number(num(&args[0])?.abs()))
            }
            "sorted" => {
                arity(1, 1)?;
                let items = seq(&args[0])?;
                let keys = self.key_values(&items, kw("key").as_ref(), pos)?;
                let mut idx: Vec<usize> = (0..items.len()).collect();
                let mut bad = None;
                idx.sort_by(|&i, &j| {
                    order(&keys[i], &keys[j]).unwrap_or_else(|| {
                        bad = Some((keys[i].type_name(), keys[j].type_name()));
                        Ordering::Equal
                    })
                });
                if let Some((x, y)) = bad {
                    return rt(pos, format!("sorted() cannot order {x} and {y}"));
                }
                if kw("reverse").is_some_and(|r| r.truthy()) {
                    // Stable descending order: reverse runs of equal keys back.
                    idx.reverse();
                    let mut out: Vec<usize> = Vec::with_capacity(idx.len());
                    let mut i = 0;
                    while i < idx.len() {
                        let mut j = i + 1;
                        while j < idx.len() && order(&keys[idx[i]], &keys[idx[j]]) == Some(Ordering::Equal) {
                            j += 1;
                        }
                        out.extend(idx[i..j].iter().rev());
                        i = j;
                    }
                    idx = out;
                }
                Ok(Value::list(idx.into_iter().map(|i| items[i].clone()).collect()))
            }
            "enumerate" => {
                arity(1, 1)?;
                let start = match kw("start") {
                    Some(v) => num(&v)?,
                    None => 0.0,
                };
                let items = seq(&args[0])?;
                Ok(Value::list(
                    items
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| Value::tuple(vec![Value::Number(start + i as f64), v]))
                        .collect(),
                ))
            }
            "zip" => {
                let seqs: Vec<Vec<Value>> = args.iter().map(seq).collect::<R<_>>()?;
                let n = seqs.iter().map(|s| s.len()).min().unwrap_or(0);
                Ok(Value::list((0..n).map(|i| Value::tuple(seqs.iter().map(|s| s[i].clone()).collect())).collect()))
            }
            "round" => {
                arity(1, 2)?;
                let x = num(&args[0])?;
                let nd = match args.get(1).cloned().or_else(|| kw("ndigits")) {
                    Some(Value::None) | None => 0.0,
                    Some(v) => num(&v)?,
                };
                let scale = 10f64.powf(nd);
                number_result((x * scale).round_ties_even() / scale, pos)
            }
            "sum" => {
                arity(1, 1)?;
                let mut acc = match kw("start") {
                    Some(v) => v,
                    None => Value::Number(0.0),
                };
                for v in seq(&args[0])? {
                    acc = self.binary(BinOp::Add, acc, v, pos)?;
                }
                Ok(acc)
            }
            "format" => {
                arity(1, 2)?;
                let spec = match args.get(1) {
                    Some(Value::Str(s)) => Some(s.to_string()),
                    Some(other) => return rt(pos, format!("format spec must be a string, not {}", other.type_name())),
                    None => None,
                };
                match spec {
                    None => Ok(Value::str(&args[0].display())),
                    Some(spec) => {
                        let digits = spec
                            .strip_prefix('.')
                            .and_then(|s| s.strip_suffix('f'))
                            .and_then(|d| d.parse::<usize>().ok())
                            .filter(|d| *d <= 12);
                        match digits {
                            Some(d) => Ok(Value::str(&format!("{:.*}", d, num(&args[0])?))),
                            None => rt(pos, format!("unsupported format spec `{spec}`")),
                        }
                    }
                }
            }
            "print" => Ok(Value::None),
            "str" => {
                arity(0, 1)?;
                let s = args.first().map(|v| v.display()).unwrap_or_default();
                if s.len() > MAX_STRING_LEN {
                    return exhausted(pos, "string length cap exceeded");
                }
                Ok(Value::str(&s))
            }
            "int" => {
                arity(1, 1)?;
                match &args[0] {
                    Value::Str(s) => match s.trim().parse::<i64>() {
                        Ok(n) => Ok(Value::Number(n as f64)),
                        Err(_) => rt(pos, format!("invalid integer literal `{s}`")),
                    },
                    v => Ok(Value::Number(num(v)?.trunc())),
                }
            }
            "float" => {
                arity(1, 1)?;
                match &args[0] {
                    Value::Str(s) => match s.trim().parse::<f64>() {
                        Ok(n) if n.is_finite() => Ok(Value::Number(n)),
                        _ => rt(pos, format!("invalid number literal `{s}`")),
                    },
                    v => Ok(Value::Number(num(v)?)),
                }
            }
            "list" => {
                arity(0, 1)?;
                Ok(Value::list(match args.first() {
                    Some(v) => seq(v)?,
                    None => Vec::new(),
                }))
            }
            "tuple" => {
                arity(0, 1)?;
                Ok(Value::tuple(match args.first() {
                    Some(v) => seq(v)?,
                    None => Vec::new(),
                }))
            }
            "bool" => {
                arity(0, 1)?;
                Ok(Value::Bool(args.first().is_some_and(|v| v.truthy())))
            }
            "any" | "all" => {
                arity(1, 1)?;
                let items = seq(&args[0])?;
                Ok(Value::Bool(if name == "any" {
                    items.iter().any(|v| v.truthy())
                } else {
                    items.iter().all(|v| v.truthy())
                }))
            }
            "reversed" => {
                arity(1, 1)?;
                let mut items = seq(&args[0])?;
                items.reverse();
                Ok(Value::list(items))
            }
            "isinstance" => {
                arity(2, 2)?;
                let Value::Builtin(ty) = &args[1] else {
                    return rt(pos, "isinstance() needs a type name such as str or list");
                };
                let ok = match (*ty, &args[0]) {
                    ("str", Value::Str(_)) => true,
                    ("list", Value::List(_)) => true,
                    ("tuple", Value::Tuple(_) | Value::Pose(_)) => true,
                    ("bool", Value::Bool(_)) => true,
                    ("int", Value::Number(n)) => n.fract() == 0.0,
                    ("float", Value::Number(_)) => true,
                    _ => false,
                };
                Ok(Value::Bool(ok))
            }
            _ => rt(pos, format!("unknown builtin `{name}`")),
        }
    }
}

fn check_len(len: usize, pos: Pos) -> R<()> {
    if len > MAX_SEQUENCE_LEN {
        return exhausted(pos, "sequence length cap exceeded");
    }
    Ok(())
}

fn number_result(r: f64, pos: Pos) -> R<Value> {
    if !r.is_finite() {
        return rt(pos, "arithmetic produced a non-finite number");
    }
    Ok(Value::Number(r))
}

fn order(a: &Value, b: &Value) -> Option<Ordering> {
    if let (Some(x), Some(y)) = (a.as_number(), b.as_number()) {
        return x.partial_cmp(&y);
    }
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::List(_), Value::List(_)) | (Value::Tuple(_) | Value::Pose(_), Value::Tuple(_) | Value::Pose(_)) => {
            let (x, y) = (a.items()?, b.items()?);
            for (p, q) in x.iter().zip(y.iter()) {
                match order(p, q)? {
                    Ordering::Equal => continue,
                    o => return Some(o),
                }
            }
            Some(x.len().cmp(&y.len()))
        }
        _ => None,
    }
}

fn slice(base: &Value, lo: Option<&Value>, hi: Option<&Value>, pos: Pos) -> R<Value> {
    let bound = |v: Option<&Value>, default: i64, len: i64| -> R<usize> {
        let n = match v {
            None | Some(Value::None) => default,
            Some(v) => match v.as_number() {
                Some(n) if n.fract() == 0.0 => n as i64,
                _ => return rt(pos, "slice bounds must be integers"),
            },
        };
        let n = if n < 0 { n + len } else { n };
        Ok(n.clamp(0, len) as usize)
    };
    match base {
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let len = chars.len() as i64;
            let (a, b) = (bound(lo, 0, len)?, bound(hi, len, len)?);
            Ok(Value::str(&chars[a..b.max(a)].iter().collect::<String>()))
        }
        other => {
            let Some(items) = other.items() else {
                return rt(pos, format!("{} cannot be sliced", other.type_name()));
            };
            let len = items.len() as i64;
            let (a, b) = (bound(lo, 0, len)?, bound(hi, len, len)?);
            let part = items[a..b.max(a)].to_vec();
            Ok(if matches!(other, Value::List(_)) { Value::list(part) } else { Value::tuple(part) })
        }
    }
}
