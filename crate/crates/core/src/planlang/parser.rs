use std::rc::Rc;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, Pos};

const MAX_NESTING: usize = 64;

/// Keywords with no meaning in the plan language.
const FORBIDDEN_KEYWORDS: [&str; 15] = [
    "class", "try", "except", "finally", "with", "lambda", "global", "nonlocal", "del", "yield",
    "async", "await", "raise", "assert", "exec",
];

/// Names that would reach outside the sandbox in a general-purpose interpreter.
const FORBIDDEN_NAMES: [&str; 14] = [
    "eval", "open", "compile", "globals", "locals", "getattr", "setattr", "delattr", "vars",
    "input", "breakpoint", "exit", "quit", "memoryview",
];

const RESERVED: [&str; 20] = [
    "if", "elif", "else", "for", "while", "in", "not", "and", "or", "def", "return", "pass",
    "break", "continue", "True", "False", "None", "is", "import", "from",
];

pub fn parse(src: &str) -> Result<Vec<Stmt>, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, i: 0, depth: 0 };
    let mut body = Vec::new();
    p.skip_newlines();
    while !p.at(&Tok::Eof) {
        body.extend(p.statement()?);
        p.skip_newlines();
    }
    if body.is_empty() {
        return Err(ParseError::new(Pos { line: 1, col: 1 }, "empty program"));
    }
    Ok(body)
}

struct Parser {
    tokens: Vec<Token>,
    i: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.i].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let idx = (self.i + k).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.i].pos
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.i].clone();
        if self.i < self.tokens.len() - 1 {
            self.i += 1;
        }
        t
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ParseError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{op}`")))
        }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match self.peek() {
            Tok::Name(n) => format!("`{n}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(_) => "string".to_string(),
            Tok::Op(o) => format!("`{o}`"),
            Tok::Newline => "end of line".to_string(),
            Tok::Indent => "indent".to_string(),
            Tok::Dedent => "dedent".to_string(),
            Tok::Eof => "end of input".to_string(),
        };
        ParseError::new(self.pos(), format!("expected {wanted}, found {found}"))
    }

    fn skip_newlines(&mut self) {
        while self.at(&Tok::Newline) {
            self.bump();
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Name(n) if !RESERVED.contains(&n.as_str()) => {
                check_name(&n, pos)?;
                self.bump();
                Ok(n)
            }
            _ => Err(self.unexpected("a name")),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(ParseError::new(self.pos(), "nesting too deep"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    // ---------------------------------------------------------------- statements

    fn statement(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let pos = self.pos();
        if let Tok::Name(kw) = self.peek().clone() {
            if FORBIDDEN_KEYWORDS.contains(&kw.as_str()) {
                return Err(ParseError::forbidden(pos, format!("`{kw}` is not allowed")));
            }
            match kw.as_str() {
                "import" | "from" => {
                    return Err(ParseError::forbidden(pos, "imports are not allowed"));
                }
                "if" => return Ok(vec![self.if_stmt()?]),
                "while" => {
                    self.bump();
                    let cond = self.test()?;
                    let body = self.suite()?;
                    return Ok(vec![Stmt { kind: StmtKind::While(cond, body), pos }]);
                }
                "for" => {
                    self.bump();
                    let target = self.for_target()?;
                    if !self.eat_kw("in") {
                        return Err(self.unexpected("`in`"));
                    }
                    let iter = self.testlist()?;
                    let body = self.suite()?;
                    return Ok(vec![Stmt { kind: StmtKind::For(target, iter, body), pos }]);
                }
                "def" => return Ok(vec![self.def_stmt()?]),
                _ => {}
            }
        }
        self.simple_line()
    }

    fn simple_line(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut out = vec![self.simple_stmt()?];
        while self.eat_op(";") {
            if self.at(&Tok::Newline) || self.at(&Tok::Eof) {
                break;
            }
            out.push(self.simple_stmt()?);
        }
        if !self.at(&Tok::Eof) && !self.at(&Tok::Dedent) {
            if !self.at(&Tok::Newline) {
                return Err(self.unexpected("end of line"));
            }
            self.bump();
        }
        Ok(out)
    }

    fn simple_stmt(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.pos();
        if let Tok::Name(kw) = self.peek().clone() {
            if FORBIDDEN_KEYWORDS.contains(&kw.as_str()) {
                return Err(ParseError::forbidden(pos, format!("`{kw}` is not allowed")));
            }
            match kw.as_str() {
                "import" | "from" => {
                    return Err(ParseError::forbidden(pos, "imports are not allowed"));
                }
                "pass" => {
                    self.bump();
                    return Ok(Stmt { kind: StmtKind::Pass, pos });
                }
                "break" => {
                    self.bump();
                    return Ok(Stmt { kind: StmtKind::Break, pos });
                }
                "continue" => {
                    self.bump();
                    return Ok(Stmt { kind: StmtKind::Continue, pos });
                }
                "return" => {
                    self.bump();
                    let value = if self.at(&Tok::Newline) || self.at(&Tok::Eof) || self.at_op(";") || self.at(&Tok::Dedent) {
                        None
                    } else {
                        Some(self.testlist()?)
                    };
                    return Ok(Stmt { kind: StmtKind::Return(value), pos });
                }
                _ => {}
            }
        }
        let lhs = self.testlist()?;
        if self.eat_op("=") {
            let target = to_target(&lhs)?;
            let value = self.testlist()?;
            if self.at_op("=") {
                return Err(ParseError::new(self.pos(), "chained assignment is not supported"));
            }
            return Ok(Stmt { kind: StmtKind::Assign(target, value), pos });
        }
        let aug = [
            ("+=", BinOp::Add),
            ("-=", BinOp::Sub),
            ("*=", BinOp::Mul),
            ("/=", BinOp::Div),
            ("//=", BinOp::FloorDiv),
            ("%=", BinOp::Mod),
            ("**=", BinOp::Pow),
        ];
        for (sym, op) in aug {
            if self.eat_op(sym) {
                let target = to_target(&lhs)?;
                if matches!(target, Target::Tuple(_)) {
                    return Err(ParseError::new(pos, "augmented assignment needs a single target"));
                }
                let value = self.testlist()?;
                return Ok(Stmt { kind: StmtKind::AugAssign(target, op, value), pos });
            }
        }
        Ok(Stmt { kind: StmtKind::Expr(lhs), pos })
    }

    fn suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_op(":")?;
        if !self.at(&Tok::Newline) {
            return self.simple_line();
        }
        self.skip_newlines();
        if !self.at(&Tok::Indent) {
            return Err(self.unexpected("an indented block"));
        }
        self.bump();
        self.enter()?;
        let mut body = Vec::new();
        while !self.at(&Tok::Dedent) && !self.at(&Tok::Eof) {
            body.extend(self.statement()?);
            self.skip_newlines();
        }
        if self.at(&Tok::Dedent) {
            self.bump();
        }
        self.leave();
        Ok(body)
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.pos();
        self.bump();
        let mut branches = vec![(self.test()?, self.suite()?)];
        let mut orelse = None;
        loop {
            if self.eat_kw("elif") {
                branches.push((self.test()?, self.suite()?));
            } else if self.eat_kw("else") {
                orelse = Some(self.suite()?);
                break;
            } else {
                break;
            }
        }
        Ok(Stmt { kind: StmtKind::If { branches, orelse }, pos })
    }

    fn def_stmt(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.pos();
        self.bump();
        let name = self.name()?;
        self.expect_op("(")?;
        let mut params: Vec<Param> = Vec::new();
        while !self.at_op(")") {
            if self.at_op("*") || self.at_op("**") {
                return Err(ParseError::new(self.pos(), "variadic parameters are not supported"));
            }
            let pname = self.name()?;
            if params.iter().any(|p| p.name == pname) {
                return Err(ParseError::new(self.pos(), format!("duplicate parameter `{pname}`")));
            }
            if self.eat_op(":") {
                // Type annotations are accepted and ignored.
                self.test()?;
            }
            let default = if self.eat_op("=") { Some(self.test()?) } else { None };
            if default.is_none() && params.iter().any(|p| p.default.is_some()) {
                return Err(ParseError::new(self.pos(), "non-default parameter after default parameter"));
            }
            params.push(Param { name: pname, default });
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        if self.eat_op("->") {
            self.test()?;
        }
        let body = self.suite()?;
        let def = FunctionDef { name, params, body, pos };
        Ok(Stmt { kind: StmtKind::Def(Rc::new(def)), pos })
    }

    fn for_target(&mut self) -> Result<Target, ParseError> {
        let first = self.target_atom()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at_kw("in") {
                break;
            }
            items.push(self.target_atom()?);
        }
        Ok(Target::Tuple(items))
    }

    fn target_atom(&mut self) -> Result<Target, ParseError> {
        if self.eat_op("(") || self.eat_op("[") {
            let close = if matches!(self.tokens[self.i - 1].tok, Tok::Op("(")) { ")" } else { "]" };
            let mut items = Vec::new();
            while !self.at_op(close) {
                items.push(self.target_atom()?);
                if !self.eat_op(",") {
                    break;
                }
            }
            self.expect_op(close)?;
            return Ok(Target::Tuple(items));
        }
        Ok(Target::Name(self.name()?))
    }

    // ---------------------------------------------------------------- expressions

    fn testlist(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let first = self.test()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.ends_testlist() {
                break;
            }
            items.push(self.test()?);
        }
        Ok(Expr { kind: ExprKind::Tuple(items), pos })
    }

    fn ends_testlist(&self) -> bool {
        matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Dedent)
            || self.at_op("=")
            || self.at_op(";")
            || self.at_op(":")
            || self.at_op(")")
    }

    fn test(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let pos = self.pos();
        if self.at_kw("lambda") {
            return Err(ParseError::forbidden(pos, "`lambda` is not allowed"));
        }
        let body = self.or_test()?;
        let out = if self.at_kw("if") {
            self.bump();
            let cond = self.or_test()?;
            if !self.eat_kw("else") {
                return Err(self.unexpected("`else`"));
            }
            let orelse = self.test()?;
            Expr {
                kind: ExprKind::IfElse {
                    cond: Box::new(cond),
                    then: Box::new(body),
                    orelse: Box::new(orelse),
                },
                pos,
            }
        } else {
            body
        };
        self.leave();
        Ok(out)
    }

    fn or_test(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let mut lhs = self.and_test()?;
        while self.eat_kw("or") {
            let rhs = self.and_test()?;
            lhs = Expr { kind: ExprKind::Bool2(BoolOp::Or, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn and_test(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let mut lhs = self.not_test()?;
        while self.eat_kw("and") {
            let rhs = self.not_test()?;
            lhs = Expr { kind: ExprKind::Bool2(BoolOp::And, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn not_test(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        if self.eat_kw("not") {
            self.enter()?;
            let e = self.not_test()?;
            self.leave();
            return Ok(Expr { kind: ExprKind::Unary(UnaryOp::Not, Box::new(e)), pos });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let first = self.arith()?;
        let mut rest = Vec::new();
        loop {
            let op = if self.eat_op("==") {
                CmpOp::Eq
            } else if self.eat_op("!=") {
                CmpOp::Ne
            } else if self.eat_op("<=") {
                CmpOp::Le
            } else if self.eat_op(">=") {
                CmpOp::Ge
            } else if self.eat_op("<") {
                CmpOp::Lt
            } else if self.eat_op(">") {
                CmpOp::Gt
            } else if self.eat_kw("in") {
                CmpOp::In
            } else if self.at_kw("not") && matches!(self.peek_at(1), Tok::Name(n) if n == "in") {
                self.bump();
                self.bump();
                CmpOp::NotIn
            } else if self.eat_kw("is") {
                if self.eat_kw("not") {
                    CmpOp::Ne
                } else {
                    CmpOp::Eq
                }
            } else {
                break;
            };
            rest.push((op, self.arith()?));
        }
        if rest.is_empty() {
            Ok(first)
        } else {
            Ok(Expr { kind: ExprKind::Compare(Box::new(first), rest), pos })
        }
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                break;
            };
            let rhs = self.term()?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_op("//") {
                BinOp::FloorDiv
            } else if self.eat_op("/") {
                BinOp::Div
            } else if self.eat_op("%") {
                BinOp::Mod
            } else if self.at_op("@") {
                return Err(ParseError::new(self.pos(), "`@` is not supported"));
            } else {
                break;
            };
            let rhs = self.factor()?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let op = if self.eat_op("-") {
            Some(UnaryOp::Neg)
        } else if self.eat_op("+") {
            Some(UnaryOp::Pos)
        } else {
            None
        };
        if let Some(op) = op {
            self.enter()?;
            let e = self.factor()?;
            self.leave();
            return Ok(Expr { kind: ExprKind::Unary(op, Box::new(e)), pos });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let base = self.postfix()?;
        if self.eat_op("**") {
            self.enter()?;
            let exp = self.factor()?;
            self.leave();
            return Ok(Expr { kind: ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(exp)), pos });
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom()?;
        loop {
            let pos = self.pos();
            if self.at_op(".") {
                return Err(ParseError::forbidden(pos, "attribute access is not allowed"));
            }
            if self.eat_op("(") {
                let mut args = Vec::new();
                let mut kwargs: Vec<(String, Expr)> = Vec::new();
                while !self.at_op(")") {
                    if self.at_op("*") || self.at_op("**") {
                        return Err(ParseError::new(self.pos(), "argument unpacking is not supported"));
                    }
                    let is_kw = matches!(self.peek(), Tok::Name(_)) && matches!(self.peek_at(1), Tok::Op("="));
                    if is_kw {
                        let k = self.name()?;
                        self.bump();
                        if kwargs.iter().any(|(n, _)| *n == k) {
                            return Err(ParseError::new(pos, format!("repeated keyword `{k}`")));
                        }
                        kwargs.push((k, self.test()?));
                    } else {
                        if !kwargs.is_empty() {
                            return Err(ParseError::new(self.pos(), "positional argument after keyword argument"));
                        }
                        let arg = self.test()?;
                        if self.at_kw("for") {
                            return Err(ParseError::new(self.pos(), "comprehensions are not supported"));
                        }
                        args.push(arg);
                    }
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op(")")?;
                e = Expr { kind: ExprKind::Call { func: Box::new(e), args, kwargs }, pos };
            } else if self.eat_op("[") {
                let lo = if self.at_op(":") { None } else { Some(self.test()?) };
                if self.eat_op(":") {
                    let hi = if self.at_op("]") { None } else { Some(self.test()?) };
                    if self.at_op(":") {
                        return Err(ParseError::new(self.pos(), "slice steps are not supported"));
                    }
                    self.expect_op("]")?;
                    e = Expr {
                        kind: ExprKind::Slice { value: Box::new(e), lo: lo.map(Box::new), hi: hi.map(Box::new) },
                        pos,
                    };
                } else {
                    let idx = lo.expect("index present without colon");
                    if self.at_op(",") {
                        return Err(ParseError::new(self.pos(), "multi-dimensional indexing is not supported"));
                    }
                    self.expect_op("]")?;
                    e = Expr { kind: ExprKind::Index(Box::new(e), Box::new(idx)), pos };
                }
            } else {
                return Ok(e);
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Expr { kind: ExprKind::Number(n), pos })
            }
            Tok::Str(s) => {
                self.bump();
                let mut s = s;
                while let Tok::Str(more) = self.peek().clone() {
                    self.bump();
                    s.push_str(&more);
                }
                Ok(Expr { kind: ExprKind::Str(s), pos })
            }
            Tok::Name(n) => match n.as_str() {
                "True" => {
                    self.bump();
                    Ok(Expr { kind: ExprKind::Bool(true), pos })
                }
                "False" => {
                    self.bump();
                    Ok(Expr { kind: ExprKind::Bool(false), pos })
                }
                "None" => {
                    self.bump();
                    Ok(Expr { kind: ExprKind::None, pos })
                }
                "import" | "from" => Err(ParseError::forbidden(pos, "imports are not allowed")),
                kw if FORBIDDEN_KEYWORDS.contains(&kw) => {
                    Err(ParseError::forbidden(pos, format!("`{kw}` is not allowed")))
                }
                _ => Ok(Expr { kind: ExprKind::Name(self.name()?), pos }),
            },
            Tok::Op("(") => {
                self.bump();
                self.enter()?;
                if self.eat_op(")") {
                    self.leave();
                    return Ok(Expr { kind: ExprKind::Tuple(Vec::new()), pos });
                }
                let first = self.test()?;
                if self.at_kw("for") {
                    return Err(ParseError::new(self.pos(), "comprehensions are not supported"));
                }
                let out = if self.eat_op(",") {
                    let mut items = vec![first];
                    while !self.at_op(")") {
                        items.push(self.test()?);
                        if !self.eat_op(",") {
                            break;
                        }
                    }
                    Expr { kind: ExprKind::Tuple(items), pos }
                } else {
                    first
                };
                self.expect_op(")")?;
                self.leave();
                Ok(out)
            }
            Tok::Op("[") => {
                self.bump();
                self.enter()?;
                let mut items = Vec::new();
                while !self.at_op("]") {
                    items.push(self.test()?);
                    if self.at_kw("for") {
                        return Err(ParseError::new(self.pos(), "comprehensions are not supported"));
                    }
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("]")?;
                self.leave();
                Ok(Expr { kind: ExprKind::List(items), pos })
            }
            Tok::Op("{") => Err(ParseError::new(pos, "dict and set literals are not supported")),
            _ => Err(self.unexpected("an expression")),
        }
    }
}

fn check_name(n: &str, pos: Pos) -> Result<(), ParseError> {
    if FORBIDDEN_NAMES.contains(&n) || (n.starts_with("__") && n.ends_with("__")) {
        return Err(ParseError::forbidden(pos, format!("`{n}` is not allowed")));
    }
    Ok(())
}

fn to_target(e: &Expr) -> Result<Target, ParseError> {
    match &e.kind {
        ExprKind::Name(n) => Ok(Target::Name(n.clone())),
        ExprKind::Tuple(items) | ExprKind::List(items) => {
            Ok(Target::Tuple(items.iter().map(to_target).collect::<Result<_, _>>()?))
        }
        ExprKind::Index(base, idx) => match &base.kind {
            ExprKind::Name(n) => Ok(Target::Index(n.clone(), idx.clone())),
            _ => Err(ParseError::new(e.pos, "only `name[index]` can be assigned")),
        },
        _ => Err(ParseError::new(e.pos, "cannot assign to this expression")),
    }
}
