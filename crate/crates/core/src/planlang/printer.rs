use std::fmt::Write;

use super::ast::*;

/// Renders statements back to source. `parse(print(ast))` reproduces `ast`.
pub fn print_program(body: &[Stmt]) -> String {
    let mut out = String::new();
    block(&mut out, body, 0);
    out
}

fn block(out: &mut String, body: &[Stmt], level: usize) {
    for s in body {
        stmt(out, s, level);
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match &s.kind {
        StmtKind::Assign(t, v) => {
            let _ = writeln!(out, "{} = {}", target(t, true), expr(v));
        }
        StmtKind::AugAssign(t, op, v) => {
            let _ = writeln!(out, "{} {}= {}", target(t, true), op.symbol(), expr(v));
        }
        StmtKind::Expr(e) => {
            let _ = writeln!(out, "{}", expr(e));
        }
        StmtKind::If { branches, orelse } => {
            for (i, (cond, body)) in branches.iter().enumerate() {
                if i > 0 {
                    indent(out, level);
                }
                let kw = if i == 0 { "if" } else { "elif" };
                let _ = writeln!(out, "{kw} {}:", expr(cond));
                block(out, body, level + 1);
            }
            if let Some(body) = orelse {
                indent(out, level);
                out.push_str("else:\n");
                block(out, body, level + 1);
            }
        }
        StmtKind::While(cond, body) => {
            let _ = writeln!(out, "while {}:", expr(cond));
            block(out, body, level + 1);
        }
        StmtKind::For(t, iter, body) => {
            let _ = writeln!(out, "for {} in {}:", target(t, true), expr(iter));
            block(out, body, level + 1);
        }
        StmtKind::Def(def) => {
            let params: Vec<String> = def
                .params
                .iter()
                .map(|p| match &p.default {
                    Some(d) => format!("{}={}", p.name, expr(d)),
                    None => p.name.clone(),
                })
                .collect();
            let _ = writeln!(out, "def {}({}):", def.name, params.join(", "));
            block(out, &def.body, level + 1);
        }
        StmtKind::Return(v) => match v {
            Some(v) => {
                let _ = writeln!(out, "return {}", expr(v));
            }
            None => out.push_str("return\n"),
        },
        StmtKind::Pass => out.push_str("pass\n"),
        StmtKind::Break => out.push_str("break\n"),
        StmtKind::Continue => out.push_str("continue\n"),
    }
}

fn target(t: &Target, top: bool) -> String {
    match t {
        Target::Name(n) => n.clone(),
        Target::Index(n, i) => format!("{n}[{}]", expr(i)),
        Target::Tuple(items) => {
            let parts: Vec<String> = items.iter().map(|t| target(t, false)).collect();
            match (top, parts.len()) {
                (_, 0) => "()".to_string(),
                (true, 1) => format!("{},", parts[0]),
                (true, _) => parts.join(", "),
                (false, 1) => format!("({},)", parts[0]),
                (false, _) => format!("({})", parts.join(", ")),
            }
        }
    }
}

const P_IFELSE: u8 = 1;
const P_OR: u8 = 2;
const P_AND: u8 = 3;
const P_NOT: u8 = 4;
const P_CMP: u8 = 5;
const P_ADD: u8 = 6;
const P_MUL: u8 = 7;
const P_UNARY: u8 = 8;
const P_POW: u8 = 9;
const P_ATOM: u8 = 10;

fn prec(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::IfElse { .. } => P_IFELSE,
        ExprKind::Bool2(BoolOp::Or, ..) => P_OR,
        ExprKind::Bool2(BoolOp::And, ..) => P_AND,
        ExprKind::Unary(UnaryOp::Not, _) => P_NOT,
        ExprKind::Compare(..) => P_CMP,
        ExprKind::Binary(BinOp::Add | BinOp::Sub, ..) => P_ADD,
        ExprKind::Binary(BinOp::Pow, ..) => P_POW,
        ExprKind::Binary(..) => P_MUL,
        ExprKind::Unary(..) => P_UNARY,
        ExprKind::Number(n) if *n < 0.0 || (*n == 0.0 && n.is_sign_negative()) => P_UNARY,
        _ => P_ATOM,
    }
}

/// Prints `e`, parenthesized unless its precedence is at least `min`.
fn sub(e: &Expr, min: u8) -> String {
    let s = expr(e);
    if prec(e) >= min {
        s
    } else {
        format!("({s})")
    }
}

pub(crate) fn number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        if n == 0.0 && n.is_sign_negative() {
            "-0".to_string()
        } else {
            format!("{}", n as i64)
        }
    } else {
        format!("{n:?}")
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\0' => out.push_str("\\0"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn list(items: &[Expr]) -> String {
    items.iter().map(|e| sub(e, P_IFELSE)).collect::<Vec<_>>().join(", ")
}

pub fn expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Number(n) => number(*n),
        ExprKind::Str(s) => quote(s),
        ExprKind::Bool(true) => "True".to_string(),
        ExprKind::Bool(false) => "False".to_string(),
        ExprKind::None => "None".to_string(),
        ExprKind::Name(n) => n.clone(),
        ExprKind::List(items) => format!("[{}]", list(items)),
        ExprKind::Tuple(items) => match items.len() {
            1 => format!("({},)", sub(&items[0], P_IFELSE)),
            _ => format!("({})", list(items)),
        },
        ExprKind::Binary(BinOp::Pow, l, r) => format!("{} ** {}", sub(l, P_ATOM), sub(r, P_UNARY)),
        ExprKind::Binary(op, l, r) => {
            let p = prec(e);
            format!("{} {} {}", sub(l, p), op.symbol(), sub(r, p + 1))
        }
        ExprKind::Unary(UnaryOp::Not, v) => format!("not {}", sub(v, P_NOT)),
        ExprKind::Unary(op, v) => {
            let sym = if *op == UnaryOp::Neg { "-" } else { "+" };
            format!("{sym}{}", sub(v, P_UNARY))
        }
        ExprKind::Bool2(op, l, r) => {
            let p = prec(e);
            let kw = if *op == BoolOp::And { "and" } else { "or" };
            format!("{} {kw} {}", sub(l, p), sub(r, p + 1))
        }
        ExprKind::Compare(first, rest) => {
            let mut s = sub(first, P_ADD);
            for (op, v) in rest {
                let _ = write!(s, " {} {}", op.symbol(), sub(v, P_ADD));
            }
            s
        }
        ExprKind::IfElse { cond, then, orelse } => {
            format!("{} if {} else {}", sub(then, P_OR), sub(cond, P_OR), sub(orelse, P_IFELSE))
        }
        ExprKind::Call { func, args, kwargs } => {
            let mut parts: Vec<String> = args.iter().map(|a| sub(a, P_IFELSE)).collect();
            parts.extend(kwargs.iter().map(|(k, v)| format!("{k}={}", sub(v, P_IFELSE))));
            format!("{}({})", sub(func, P_ATOM), parts.join(", "))
        }
        ExprKind::Index(v, i) => format!("{}[{}]", sub(v, P_ATOM), sub(i, P_IFELSE)),
        ExprKind::Slice { value, lo, hi } => {
            let lo = lo.as_ref().map(|e| sub(e, P_IFELSE)).unwrap_or_default();
            let hi = hi.as_ref().map(|e| sub(e, P_IFELSE)).unwrap_or_default();
            format!("{}[{lo}:{hi}]", sub(value, P_ATOM))
        }
    }
}
