use std::fmt;

/// One attribute value.
#[derive(Debug, Clone, PartialEq)]
pub enum JdlValue {
    Str(String),
    Num(f64),
    Bool(bool),
    /// Elements share one tag.
    List(Vec<JdlValue>),
    /// Uninterpreted expression text (Requirements, Rank).
    Expr(String),
}

impl JdlValue {
    pub fn tag(&self) -> &'static str {
        match self {
            JdlValue::Str(_) => "string",
            JdlValue::Num(_) => "number",
            JdlValue::Bool(_) => "boolean",
            JdlValue::List(_) => "list",
            JdlValue::Expr(_) => "expression",
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            JdlValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            JdlValue::Num(n) => Some(*n),
            _ => None,
        }
    }

    /// `Some(n)` when the value is a number with no fractional part that fits an i64.
    pub fn as_integer(&self) -> Option<i64> {
        self.as_num().and_then(integral)
    }

    pub fn as_list(&self) -> Option<&[JdlValue]> {
        match self {
            JdlValue::List(items) => Some(items),
            _ => None,
        }
    }

    /// Text a parameter value contributes when substituted into a string.
    pub fn render_plain(&self) -> String {
        match self {
            JdlValue::Str(s) | JdlValue::Expr(s) => s.clone(),
            JdlValue::Num(n) => format_number(*n),
            JdlValue::Bool(b) => b.to_string(),
            JdlValue::List(items) => items.iter().map(|v| v.render_plain()).collect::<Vec<_>>().join(","),
        }
    }
}

const MAX_EXACT: f64 = 9_007_199_254_740_992.0; // 2^53

pub(crate) fn integral(n: f64) -> Option<i64> {
    (n.is_finite() && n.fract() == 0.0 && n.abs() <= MAX_EXACT).then_some(n as i64)
}

pub(crate) fn format_number(n: f64) -> String {
    match integral(n) {
        Some(i) => i.to_string(),
        None => n.to_string(),
    }
}

pub(crate) fn quote(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
}

impl fmt::Display for JdlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JdlValue::Str(s) => {
                let mut out = String::with_capacity(s.len() + 2);
                quote(s, &mut out);
                f.write_str(&out)
            }
            JdlValue::Num(n) => f.write_str(&format_number(*n)),
            JdlValue::Bool(b) => write!(f, "{b}"),
            JdlValue::List(items) => {
                f.write_str("{")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("}")
            }
            JdlValue::Expr(e) => f.write_str(e),
        }
    }
}
