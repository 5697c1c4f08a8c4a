//! Hand-written recursive-descent parser for the ClassAd-style subset.

use super::descriptor::{is_expression_attribute, Duplicate, JobDescriptor};
use super::value::JdlValue;
use super::JdlError;

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
}

impl Cursor {
    fn new(text: &str) -> Self {
        Self {
            chars: text.chars().collect(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, message: impl Into<String>) -> JdlError {
        JdlError::Syntax {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    /// Whitespace and `//` or `#` comments.
    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => self.skip_line(),
                Some('/') if self.peek2() == Some('/') => self.skip_line(),
                _ => return,
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.bump() {
            if c == '\n' {
                return;
            }
        }
    }

    fn expect(&mut self, want: char, what: &str) -> Result<(), JdlError> {
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected {what}, found '{c}'"))),
            None => Err(self.error(format!("expected {what}, found end of input"))),
        }
    }
}

pub fn parse_jdl(text: &str) -> Result<JobDescriptor, JdlError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut cur = Cursor::new(text);
    let mut jd = JobDescriptor::new();

    cur.skip_trivia();
    let bracketed = cur.peek() == Some('[');
    if bracketed {
        cur.bump();
    }
    loop {
        cur.skip_trivia();
        match cur.peek() {
            None if bracketed => return Err(cur.error("expected ']' before end of input")),
            None => break,
            Some(']') if bracketed => {
                cur.bump();
                cur.skip_trivia();
                if cur.peek() == Some(';') {
                    cur.bump();
                    cur.skip_trivia();
                }
                if let Some(c) = cur.peek() {
                    return Err(cur.error(format!("unexpected '{c}' after closing ']'")));
                }
                break;
            }
            Some(_) => statement(&mut cur, &mut jd, bracketed)?,
        }
    }
    Ok(jd)
}

fn statement(cur: &mut Cursor, jd: &mut JobDescriptor, bracketed: bool) -> Result<(), JdlError> {
    let (line, column) = (cur.line, cur.column);
    let name = identifier(cur)?;
    cur.skip_trivia();
    cur.expect('=', "'='")?;
    cur.skip_trivia();
    let value = if is_expression_attribute(&name) {
        expression(cur)?
    } else {
        value(cur)?
    };
    cur.skip_trivia();
    match cur.peek() {
        Some(';') => {
            cur.bump();
        }
        // the last statement inside brackets may omit its ';'
        Some(']') if bracketed => {}
        Some(c) => return Err(cur.error(format!("expected ';', found '{c}'"))),
        None => return Err(cur.error("expected ';', found end of input")),
    }
    if jd.contains(&name) {
        jd.note_duplicate(Duplicate {
            name: name.clone(),
            line,
            column,
        });
    }
    jd.set(&name, value);
    Ok(())
}

fn identifier(cur: &mut Cursor) -> Result<String, JdlError> {
    let mut name = String::new();
    match cur.peek() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        Some(c) => return Err(cur.error(format!("expected attribute name, found '{c}'"))),
        None => return Err(cur.error("expected attribute name")),
    }
    while let Some(c) = cur.peek() {
        if c.is_ascii_alphanumeric() || c == '_' {
            name.push(c);
            cur.bump();
        } else {
            break;
        }
    }
    Ok(name)
}

fn value(cur: &mut Cursor) -> Result<JdlValue, JdlError> {
    match cur.peek() {
        Some('"') => string(cur).map(JdlValue::Str),
        Some('{') => list(cur),
        Some(c) if c.is_ascii_digit() || matches!(c, '-' | '+' | '.') => number(cur),
        Some(c) if c.is_ascii_alphabetic() => {
            let (line, column) = (cur.line, cur.column);
            let word = identifier(cur)?;
            if word.eq_ignore_ascii_case("true") {
                Ok(JdlValue::Bool(true))
            } else if word.eq_ignore_ascii_case("false") {
                Ok(JdlValue::Bool(false))
            } else {
                Err(JdlError::Syntax {
                    line,
                    column,
                    message: format!("unexpected word '{word}'; strings must be quoted"),
                })
            }
        }
        Some(c) => Err(cur.error(format!("expected a value, found '{c}'"))),
        None => Err(cur.error("expected a value, found end of input")),
    }
}

fn string(cur: &mut Cursor) -> Result<String, JdlError> {
    cur.expect('"', "'\"'")?;
    let mut out = String::new();
    loop {
        if cur.peek() == Some('\n') {
            return Err(cur.error("newline inside string"));
        }
        match cur.bump() {
            None => return Err(cur.error("unterminated string")),
            Some('"') => return Ok(out),
            Some('\\') => match cur.bump() {
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some(c) => return Err(cur.error(format!("unknown escape '\\{c}'"))),
                None => return Err(cur.error("unterminated string")),
            },
            Some(c) => out.push(c),
        }
    }
}

fn number(cur: &mut Cursor) -> Result<JdlValue, JdlError> {
    let (line, column) = (cur.line, cur.column);
    let mut text = String::new();
    while let Some(c) = cur.peek() {
        let sign_ok = text.is_empty() || text.ends_with(['e', 'E']);
        if c.is_ascii_digit() || c == '.' || matches!(c, 'e' | 'E') || (sign_ok && matches!(c, '-' | '+')) {
            text.push(c);
            cur.bump();
        } else {
            break;
        }
    }
    let valid_shape = text.trim_start_matches(['-', '+']).starts_with(|c: char| c.is_ascii_digit() || c == '.')
        && text.chars().any(|c| c.is_ascii_digit());
    match text.parse::<f64>() {
        Ok(n) if valid_shape && n.is_finite() => Ok(JdlValue::Num(n)),
        _ => Err(JdlError::Syntax {
            line,
            column,
            message: format!("malformed number '{text}'"),
        }),
    }
}

fn list(cur: &mut Cursor) -> Result<JdlValue, JdlError> {
    cur.expect('{', "'{'")?;
    let mut items: Vec<JdlValue> = Vec::new();
    cur.skip_trivia();
    if cur.peek() == Some('}') {
        cur.bump();
        return Ok(JdlValue::List(items));
    }
    loop {
        cur.skip_trivia();
        let (line, column) = (cur.line, cur.column);
        let item = value(cur)?;
        if let Some(first) = items.first() {
            if first.tag() != item.tag() {
                return Err(JdlError::Syntax {
                    line,
                    column,
                    message: format!("list mixes {} and {} elements", first.tag(), item.tag()),
                });
            }
        }
        items.push(item);
        cur.skip_trivia();
        match cur.bump() {
            Some(',') => continue,
            Some('}') => return Ok(JdlValue::List(items)),
            Some(c) => return Err(cur.error(format!("expected ',' or '}}' in list, found '{c}'"))),
            None => return Err(cur.error("unterminated list")),
        }
    }
}

/// Everything up to the next `;` outside a string, trimmed.
fn expression(cur: &mut Cursor) -> Result<JdlValue, JdlError> {
    let (line, column) = (cur.line, cur.column);
    let mut text = String::new();
    let mut in_string = false;
    loop {
        match cur.peek() {
            None => {
                return Err(cur.error(if in_string {
                    "unterminated string in expression"
                } else {
                    "expected ';' after expression"
                }))
            }
            Some(';') if !in_string => break,
            Some('\n') if in_string => return Err(cur.error("newline inside string")),
            Some(c) => {
                cur.bump();
                text.push(c);
                if in_string && c == '\\' {
                    if let Some(next) = cur.bump() {
                        text.push(next);
                    }
                } else if c == '"' {
                    in_string = !in_string;
                }
            }
        }
    }
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(JdlError::Syntax {
            line,
            column,
            message: "empty expression".into(),
        });
    }
    Ok(JdlValue::Expr(text))
}

/// Bytes that are not UTF-8 are a syntax error at the offending position.
pub fn parse_jdl_bytes(bytes: &[u8]) -> Result<JobDescriptor, JdlError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_jdl(text),
        Err(e) => {
            let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).expect("checked prefix");
            let line = valid.matches('\n').count() + 1;
            let column = valid.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            Err(JdlError::Syntax {
                line,
                column,
                message: "input is not valid UTF-8".into(),
            })
        }
    }
}
