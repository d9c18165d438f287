//! Plan language: an indentation-delimited imperative subset with a budgeted interpreter.

pub mod ast;
mod interp;
mod lexer;
mod parser;
mod printer;

use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use interp::{builtin_names, execute, Host, HostError, Value};
pub use printer::print_program;

use ast::{FunctionDef, Stmt, StmtKind};

/// 1-based source location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub pos: Pos,
    pub message: String,
    /// The input used a construct the sandbox refuses rather than malformed syntax.
    pub forbidden: bool,
}

impl ParseError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        ParseError { pos, message: message.into(), forbidden: false }
    }

    pub fn forbidden(pos: Pos, message: impl Into<String>) -> Self {
        ParseError { pos, message: message.into(), forbidden: true }
    }

    pub fn status(&self) -> ExecStatus {
        if self.forbidden {
            ExecStatus::ForbiddenConstruct
        } else {
            ExecStatus::ParseError
        }
    }

    pub fn outcome(&self) -> ExecOutcome {
        ExecOutcome {
            status: self.status(),
            detail: Some(ExecDetail { message: self.message.clone(), line: self.pos.line, col: self.pos.col }),
            primitives_issued: 0,
            infrastructure: false,
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, col {}: {}", self.pos.line, self.pos.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone)]
pub struct PlanProgram {
    pub ast: Vec<Stmt>,
    pub source: String,
    /// Hex sha256 of `source`.
    pub source_digest: String,
}

impl PlanProgram {
    /// Top-level function definitions, in source order.
    pub fn functions(&self) -> Vec<Rc<FunctionDef>> {
        self.ast
            .iter()
            .filter_map(|s| match &s.kind {
                StmtKind::Def(d) => Some(d.clone()),
                _ => None,
            })
            .collect()
    }
}

pub fn parse_program(source: &str) -> Result<PlanProgram, ParseError> {
    let ast = parser::parse(source)?;
    Ok(PlanProgram { ast, source: source.to_string(), source_digest: sha256_hex(source) })
}

pub fn sha256_hex(text: &str) -> String {
    let d = Sha256::digest(text.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_eval_steps: u64,
    pub max_call_depth: usize,
    pub max_primitives: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_eval_steps: 200_000, max_call_depth: 32, max_primitives: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Completed,
    ParseError,
    RuntimeError,
    BudgetExhausted,
    ForbiddenConstruct,
}

impl ExecStatus {
    pub fn name(self) -> &'static str {
        match self {
            ExecStatus::Completed => "completed",
            ExecStatus::ParseError => "parse_error",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::BudgetExhausted => "budget_exhausted",
            ExecStatus::ForbiddenConstruct => "forbidden_construct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecDetail {
    pub message: String,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<ExecDetail>,
    pub primitives_issued: usize,
    /// Set when a host call failed for reasons outside the program (backend outage).
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub infrastructure: bool,
}

impl ExecOutcome {
    pub fn completed(primitives_issued: usize) -> Self {
        ExecOutcome { status: ExecStatus::Completed, detail: None, primitives_issued, infrastructure: false }
    }
}

/// Registers `def` under `name` with the host. Names already bound by the host are refused.
pub fn register_function(host: &mut dyn Host, name: &str, def: Rc<FunctionDef>) -> Result<(), HostError> {
    if !is_identifier(name) {
        return Err(HostError::runtime(format!("`{name}` is not a valid identifier")));
    }
    if host.has_function(name) || builtin_names().contains(&name) {
        return Err(HostError::runtime(format!("`{name}` collides with an existing binding")));
    }
    host.register(name, def)
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !(name.starts_with("__") && name.ends_with("__"))
}
