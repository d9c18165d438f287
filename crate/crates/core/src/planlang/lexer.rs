use super::{ParseError, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Number(f64),
    Str(String),
    /// Operator or punctuation.
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

const OPS: [&str; 33] = [
    "**=", "//=", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "**", "//", "->", "+", "-",
    "*", "/", "%", "<", ">", "=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "@",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize;
    let mut i = 0usize;
    let mut line = 1usize;
    let mut line_start = 0usize;
    let mut at_line_start = true;

    while i < chars.len() {
        if at_line_start && depth == 0 {
            // Measure indentation; skip blank and comment-only lines.
            let mut width = 0usize;
            let mut j = i;
            while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
                width += if chars[j] == '\t' { 4 } else { 1 };
                j += 1;
            }
            if j >= chars.len() {
                break;
            }
            if chars[j] == '\n' || chars[j] == '#' || chars[j] == '\r' {
                while j < chars.len() && chars[j] != '\n' {
                    j += 1;
                }
                i = j + 1;
                line += 1;
                line_start = i;
                continue;
            }
            let pos = Pos { line, col: j - line_start + 1 };
            let cur = *indents.last().expect("indent stack never empty");
            if width > cur {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, pos });
            } else {
                while width < *indents.last().expect("non-empty") {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, pos });
                }
                if width != *indents.last().expect("non-empty") {
                    return Err(ParseError::new(pos, "inconsistent indentation"));
                }
            }
            i = j;
            at_line_start = false;
            continue;
        }

        let c = chars[i];
        let pos = Pos { line, col: i - line_start + 1 };
        match c {
            '\n' => {
                if depth == 0 {
                    out.push(Token { tok: Tok::Newline, pos });
                    at_line_start = true;
                }
                i += 1;
                line += 1;
                line_start = i;
            }
            ' ' | '\t' | '\r' => i += 1,
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                i += 2;
                line += 1;
                line_start = i;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '"' | '\'' => {
                let triple = chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c);
                let mut s = String::new();
                i += if triple { 3 } else { 1 };
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(ParseError::new(pos, "unterminated string"));
                    };
                    if ch == c {
                        if !triple {
                            i += 1;
                            break;
                        }
                        if chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c) {
                            i += 3;
                            break;
                        }
                    }
                    if ch == '\n' {
                        if !triple {
                            return Err(ParseError::new(pos, "unterminated string"));
                        }
                        line += 1;
                        line_start = i + 1;
                    }
                    if ch == '\\' {
                        let Some(&e) = chars.get(i + 1) else {
                            return Err(ParseError::new(pos, "unterminated string"));
                        };
                        match e {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            '\\' | '\'' | '"' => s.push(e),
                            '0' => s.push('\0'),
                            '\n' => {
                                line += 1;
                                line_start = i + 2;
                            }
                            other => {
                                s.push('\\');
                                s.push(other);
                            }
                        }
                        i += 2;
                        continue;
                    }
                    s.push(ch);
                    i += 1;
                }
                out.push(Token { tok: Tok::Str(s), pos });
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == '_') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
                let n: f64 = text
                    .parse()
                    .ok()
                    .filter(|n: &f64| n.is_finite())
                    .ok_or_else(|| ParseError::new(pos, format!("bad number `{text}`")))?;
                if i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    return Err(ParseError::new(pos, "invalid number literal"));
                }
                out.push(Token { tok: Tok::Number(n), pos });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let name: String = chars[start..i].iter().collect();
                // String prefixes (f-strings, bytes, raw) are not part of the language.
                if i < chars.len() && (chars[i] == '"' || chars[i] == '\'') && name.len() <= 2 {
                    return Err(ParseError::new(pos, format!("unsupported string prefix `{name}`")));
                }
                out.push(Token { tok: Tok::Name(name), pos });
            }
            _ => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let Some(op) = OPS.iter().find(|op| rest.starts_with(**op)) else {
                    return Err(ParseError::new(pos, format!("unexpected character `{c}`")));
                };
                match *op {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth = depth.saturating_sub(1),
                    _ => {}
                }
                i += op.chars().count();
                out.push(Token { tok: Tok::Op(op), pos });
            }
        }
    }
    let pos = Pos { line, col: i.saturating_sub(line_start) + 1 };
    if !matches!(out.last().map(|t| &t.tok), None | Some(Tok::Newline) | Some(Tok::Dedent)) {
        out.push(Token { tok: Tok::Newline, pos });
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, pos });
    }
    out.push(Token { tok: Tok::Eof, pos });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn indentation_produces_blocks() {
        let t = toks("if x:\n    y = 1\nz\n");
        assert!(t.contains(&Tok::Indent));
        assert!(t.contains(&Tok::Dedent));
    }

    #[test]
    fn brackets_join_lines() {
        let t = toks("f(1,\n  2)\n");
        assert_eq!(t.iter().filter(|t| **t == Tok::Newline).count(), 1);
    }

    #[test]
    fn numbers_and_strings() {
        assert_eq!(toks("1.5e-3")[0], Tok::Number(1.5e-3));
        assert_eq!(toks("'a\\'b'")[0], Tok::Str("a'b".into()));
        assert_eq!(toks("\"\"\"doc\nstring\"\"\"")[0], Tok::Str("doc\nstring".into()));
    }

    #[test]
    fn rejects_bad_dedent() {
        assert!(tokenize("if x:\n    a\n  b\n").is_err());
    }
}
