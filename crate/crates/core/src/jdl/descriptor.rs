use indexmap::IndexMap;

use super::value::JdlValue;

/// Attribute names with a canonical spelling. Anything else is kept as
/// first written and flagged by validation.
pub const KNOWN_ATTRIBUTES: &[&str] = &[
    "Type",
    "JobType",
    "Executable",
    "Arguments",
    "StdInput",
    "StdOutput",
    "StdError",
    "InputSandbox",
    "OutputSandbox",
    "Environment",
    "VirtualOrganisation",
    "Requirements",
    "Rank",
    "Parameters",
    "ParameterStart",
    "ParameterStep",
    "MyProxyServer",
    "RetryCount",
    "ShallowRetryCount",
];

/// Attributes whose values are captured verbatim as expressions.
pub const EXPRESSION_ATTRIBUTES: &[&str] = &["Requirements", "Rank"];

pub fn canonical_name(name: &str) -> Option<&'static str> {
    KNOWN_ATTRIBUTES
        .iter()
        .copied()
        .find(|k| k.eq_ignore_ascii_case(name))
}

pub fn is_expression_attribute(name: &str) -> bool {
    EXPRESSION_ATTRIBUTES.iter().any(|k| k.eq_ignore_ascii_case(name))
}

/// A later assignment that replaced an earlier one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Duplicate {
    pub name: String,
    pub line: usize,
    pub column: usize,
}

/// Parsed JDL: attributes in first-assignment order, looked up
/// case-insensitively.
#[derive(Debug, Clone, Default)]
pub struct JobDescriptor {
    attributes: IndexMap<String, (String, JdlValue)>,
    duplicates: Vec<Duplicate>,
}

impl PartialEq for JobDescriptor {
    /// Order-sensitive over attributes; parse-time duplicate notes are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.attributes.len() == other.attributes.len()
            && self.attributes.iter().eq(other.attributes.iter())
    }
}

impl JobDescriptor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets an attribute, keeping its position if it already exists.
    pub fn set(&mut self, name: &str, value: JdlValue) {
        let key = name.to_ascii_lowercase();
        let display = match self.attributes.get(&key) {
            Some((existing, _)) => existing.clone(),
            None => canonical_name(name).map(str::to_string).unwrap_or_else(|| name.to_string()),
        };
        self.attributes.insert(key, (display, value));
    }

    pub fn with(mut self, name: &str, value: JdlValue) -> Self {
        self.set(name, value);
        self
    }

    pub(crate) fn note_duplicate(&mut self, dup: Duplicate) {
        self.duplicates.push(dup);
    }

    pub fn get(&self, name: &str) -> Option<&JdlValue> {
        self.attributes.get(&name.to_ascii_lowercase()).map(|(_, v)| v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn remove(&mut self, name: &str) -> Option<JdlValue> {
        self.attributes
            .shift_remove(&name.to_ascii_lowercase())
            .map(|(_, v)| v)
    }

    /// `(display name, value)` in order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &JdlValue)> {
        self.attributes.values().map(|(n, v)| (n.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut JdlValue)> {
        self.attributes.values_mut().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn duplicates(&self) -> &[Duplicate] {
        &self.duplicates
    }

    pub fn str_attr(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(JdlValue::as_str)
    }

    pub fn executable(&self) -> Option<&str> {
        self.str_attr("Executable")
    }

    /// A string or a list of strings, flattened; anything else yields nothing.
    pub fn string_list(&self, name: &str) -> Vec<String> {
        match self.get(name) {
            Some(JdlValue::Str(s)) => vec![s.clone()],
            Some(JdlValue::List(items)) => items
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect(),
            _ => Vec::new(),
        }
    }
}
