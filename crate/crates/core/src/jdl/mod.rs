//! Job Description Language: `Name = value;` statements, optionally wrapped
//! in `[ ... ]`.
//!
//! Values are quoted strings, numbers, `true`/`false`, and `{...}` lists.
//! `Requirements` and `Rank` hold expressions that are kept as raw text.

mod descriptor;
mod parse;
mod value;

pub use descriptor::{
    canonical_name, Duplicate, JobDescriptor, EXPRESSION_ATTRIBUTES, KNOWN_ATTRIBUTES,
};
pub use parse::{parse_jdl, parse_jdl_bytes};
pub use value::JdlValue;

use serde::Serialize;
use thiserror::Error;

/// Substituted by the parameter value in every string of a parametric job.
pub const PARAM_TOKEN: &str = "_PARAM_";

/// Upper bound on members of one parametric job.
pub const MAX_PARAMETRIC_JOBS: i64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JdlError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("descriptor has validation errors")]
    NotValidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IssueCode {
    SyntaxError,
    MissingExecutable,
    EmptyExecutable,
    BadParametricSpec,
    InvalidAttributeType,
    UnknownAttribute,
    DuplicateAttribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JdlIssue {
    pub severity: Severity,
    pub code: IssueCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

impl JdlIssue {
    fn error(code: IssueCode, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code,
            message: message.into(),
            span: None,
        }
    }

    fn warning(code: IssueCode, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code,
            message: message.into(),
            span: None,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// One `Name = value;` per line.
pub fn serialize_jdl(jd: &JobDescriptor) -> String {
    let mut out = String::new();
    for (name, value) in jd.iter() {
        out.push_str(name);
        out.push_str(" = ");
        out.push_str(&value.to_string());
        out.push_str(";\n");
    }
    out
}

fn expect_kind(
    issues: &mut Vec<JdlIssue>,
    jd: &JobDescriptor,
    name: &str,
    ok: impl Fn(&JdlValue) -> bool,
    wanted: &str,
) {
    if let Some(v) = jd.get(name) {
        if !ok(v) {
            issues.push(JdlIssue::error(
                IssueCode::InvalidAttributeType,
                format!("{name} must be {wanted}, not a {}", v.tag()),
            ));
        }
    }
}

fn is_str(v: &JdlValue) -> bool {
    matches!(v, JdlValue::Str(_))
}

fn is_str_list(v: &JdlValue) -> bool {
    v.as_list().is_some_and(|items| items.iter().all(is_str))
}

pub fn validate_jdl(jd: &JobDescriptor) -> Vec<JdlIssue> {
    let mut issues = Vec::new();

    match jd.get("Executable") {
        None => issues.push(JdlIssue::error(IssueCode::MissingExecutable, "Executable is required")),
        Some(JdlValue::Str(s)) if s.trim().is_empty() => {
            issues.push(JdlIssue::error(IssueCode::EmptyExecutable, "Executable is empty"))
        }
        Some(JdlValue::Str(_)) => {}
        Some(other) => issues.push(JdlIssue::error(
            IssueCode::InvalidAttributeType,
            format!("Executable must be a string, not a {}", other.tag()),
        )),
    }

    for name in ["Arguments", "StdInput", "StdOutput", "StdError", "VirtualOrganisation", "JobType", "Type", "MyProxyServer"] {
        expect_kind(&mut issues, jd, name, is_str, "a string");
    }
    for name in ["InputSandbox", "OutputSandbox"] {
        expect_kind(&mut issues, jd, name, |v| is_str(v) || is_str_list(v), "a string or a list of strings");
    }
    expect_kind(&mut issues, jd, "Environment", is_str_list, "a list of strings");
    for name in ["RetryCount", "ShallowRetryCount"] {
        expect_kind(&mut issues, jd, name, |v| v.as_integer().is_some_and(|n| n >= 0), "a non-negative integer");
    }
    for name in ["StdOutput", "StdError"] {
        if let Some(path) = jd.str_attr(name) {
            if path.is_empty() || path.starts_with('/') || path.split('/').any(|c| c == "..") {
                issues.push(JdlIssue::error(
                    IssueCode::InvalidAttributeType,
                    format!("{name} must be a relative path inside the job directory"),
                ));
            }
        }
    }

    check_parametric(jd, &mut issues);

    for (name, _) in jd.iter() {
        if canonical_name(name).is_none() {
            issues.push(JdlIssue::warning(
                IssueCode::UnknownAttribute,
                format!("unknown attribute '{name}' is ignored"),
            ));
        }
    }
    for dup in jd.duplicates() {
        let mut issue = JdlIssue::warning(
            IssueCode::DuplicateAttribute,
            format!("'{}' assigned more than once; the last assignment wins", dup.name),
        );
        issue.span = Some(Span {
            line: dup.line,
            column: dup.column,
        });
        issues.push(issue);
    }
    issues
}

fn check_parametric(jd: &JobDescriptor, issues: &mut Vec<JdlIssue>) {
    let bad = |issues: &mut Vec<JdlIssue>, message: String| {
        issues.push(JdlIssue::error(IssueCode::BadParametricSpec, message))
    };
    match jd.get("Parameters") {
        None => {
            for name in ["ParameterStart", "ParameterStep"] {
                if jd.contains(name) {
                    issues.push(JdlIssue::warning(
                        IssueCode::BadParametricSpec,
                        format!("{name} has no effect without Parameters"),
                    ));
                }
            }
            return;
        }
        Some(JdlValue::Num(_)) => match jd.get("Parameters").and_then(JdlValue::as_integer) {
            Some(n) if (1..=MAX_PARAMETRIC_JOBS).contains(&n) => {}
            Some(n) if n > MAX_PARAMETRIC_JOBS => {
                bad(issues, format!("Parameters = {n} exceeds the limit of {MAX_PARAMETRIC_JOBS}"))
            }
            _ => bad(issues, "Parameters must be a positive integer or a non-empty list".into()),
        },
        Some(JdlValue::List(items)) => {
            if items.is_empty() {
                bad(issues, "Parameters list is empty".into());
            } else if items.len() as i64 > MAX_PARAMETRIC_JOBS {
                bad(issues, format!("Parameters list exceeds the limit of {MAX_PARAMETRIC_JOBS}"));
            } else if !items.iter().all(|v| matches!(v, JdlValue::Str(_) | JdlValue::Num(_))) {
                bad(issues, "Parameters list elements must be strings or numbers".into());
            }
        }
        Some(_) => bad(issues, "Parameters must be a positive integer or a non-empty list".into()),
    }
    for name in ["ParameterStart", "ParameterStep"] {
        if let Some(v) = jd.get(name) {
            if v.as_integer().is_none() {
                bad(issues, format!("{name} must be an integer"));
            }
        }
    }
    if jd.get("ParameterStep").and_then(JdlValue::as_integer) == Some(0) {
        bad(issues, "ParameterStep must not be zero".into());
    }
}

/// Parses and validates in one go; a syntax error becomes a single issue.
pub fn check_jdl(text: &str) -> (Option<JobDescriptor>, Vec<JdlIssue>) {
    match parse_jdl(text) {
        Ok(jd) => {
            let issues = validate_jdl(&jd);
            (Some(jd), issues)
        }
        Err(JdlError::Syntax { line, column, message }) => (
            None,
            vec![JdlIssue {
                severity: Severity::Error,
                code: IssueCode::SyntaxError,
                message,
                span: Some(Span { line, column }),
            }],
        ),
        Err(JdlError::NotValidated) => unreachable!("parsing never reports NotValidated"),
    }
}

fn substitute(value: &mut JdlValue, replacement: &str) {
    match value {
        JdlValue::Str(s) => {
            if s.contains(PARAM_TOKEN) {
                *s = s.replace(PARAM_TOKEN, replacement);
            }
        }
        JdlValue::List(items) => items.iter_mut().for_each(|v| substitute(v, replacement)),
        _ => {}
    }
}

/// The parameter values of a parametric descriptor, rendered as substituted;
/// `None` for an ordinary job.
pub fn parameter_values(jd: &JobDescriptor) -> Option<Vec<String>> {
    match jd.get("Parameters")? {
        JdlValue::List(items) => Some(items.iter().map(JdlValue::render_plain).collect()),
        v => {
            let n = v.as_integer()?;
            let start = jd.get("ParameterStart").and_then(JdlValue::as_integer).unwrap_or(0);
            let step = jd.get("ParameterStep").and_then(JdlValue::as_integer).unwrap_or(1);
            Some(
                (0..n)
                    .map(|i| (i128::from(start) + i128::from(i) * i128::from(step)).to_string())
                    .collect(),
            )
        }
    }
}

/// One descriptor per parameter value with `_PARAM_` substituted in every
/// string; an ordinary job expands to itself.
pub fn expand_parametric(jd: &JobDescriptor) -> Result<Vec<JobDescriptor>, JdlError> {
    if validate_jdl(jd).iter().any(JdlIssue::is_error) {
        return Err(JdlError::NotValidated);
    }
    let Some(values) = parameter_values(jd) else {
        return Ok(vec![jd.clone()]);
    };
    Ok(values
        .iter()
        .map(|value| {
            let mut member = jd.clone();
            for (_, v) in member.iter_mut() {
                substitute(v, value);
            }
            member
        })
        .collect())
}
