//! Distinguished names in the single-line grid rendering (`/C=IT/O=SNS/CN=Alice`).

use std::fmt;
use std::str::FromStr;

use openssl::nid::Nid;
use openssl::x509::{X509Name, X509NameRef};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CertError;

/// Attribute types we know how to carry through X.509 encoding.
/// `(short name, dotted OID, openssl nid)`.
const ATTRIBUTES: &[(&str, &str, Nid)] = &[
    ("C", "2.5.4.6", Nid::COUNTRYNAME),
    ("ST", "2.5.4.8", Nid::STATEORPROVINCENAME),
    ("L", "2.5.4.7", Nid::LOCALITYNAME),
    ("O", "2.5.4.10", Nid::ORGANIZATIONNAME),
    ("OU", "2.5.4.11", Nid::ORGANIZATIONALUNITNAME),
    ("CN", "2.5.4.3", Nid::COMMONNAME),
    ("serialNumber", "2.5.4.5", Nid::SERIALNUMBER),
    ("DC", "0.9.2342.19200300.100.1.25", Nid::DOMAINCOMPONENT),
    ("UID", "0.9.2342.19200300.100.1.1", Nid::USERID),
    ("emailAddress", "1.2.840.113549.1.9.1", Nid::PKCS9_EMAILADDRESS),
];

fn canonical_attr(name: &str) -> Option<&'static str> {
    ATTRIBUTES
        .iter()
        .find(|(short, _, _)| short.eq_ignore_ascii_case(name))
        .map(|(short, _, _)| *short)
}

fn attr_nid(name: &str) -> Option<Nid> {
    ATTRIBUTES
        .iter()
        .find(|(short, _, _)| *short == name)
        .map(|(_, _, nid)| *nid)
}

pub(crate) fn attr_from_oid(oid: &str) -> Option<&'static str> {
    ATTRIBUTES
        .iter()
        .find(|(_, dotted, _)| *dotted == oid)
        .map(|(short, _, _)| *short)
}

fn attr_from_nid(nid: Nid) -> Option<&'static str> {
    ATTRIBUTES
        .iter()
        .find(|(_, _, n)| *n == nid)
        .map(|(short, _, _)| *short)
}

/// One `type=value` component of a name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rdn {
    attr: &'static str,
    value: String,
}

impl Rdn {
    pub fn new(attr: &str, value: impl Into<String>) -> Result<Self, CertError> {
        let value = value.into();
        let attr = canonical_attr(attr)
            .ok_or_else(|| CertError::MalformedDn(format!("unsupported attribute type '{attr}'")))?;
        if value.is_empty() {
            return Err(CertError::MalformedDn(format!("empty value for '{attr}'")));
        }
        Ok(Self { attr, value })
    }

    pub fn attr(&self) -> &str {
        self.attr
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

/// An ordered, non-empty sequence of RDNs, most significant first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DistinguishedName {
    rdns: Vec<Rdn>,
}

impl DistinguishedName {
    pub fn new(rdns: Vec<Rdn>) -> Result<Self, CertError> {
        if rdns.is_empty() {
            return Err(CertError::MalformedDn("name has no components".into()));
        }
        Ok(Self { rdns })
    }

    /// Parses the slash-separated rendering. `\/` and `\\` escape inside values.
    pub fn parse(text: &str) -> Result<Self, CertError> {
        let rest = text
            .strip_prefix('/')
            .ok_or_else(|| CertError::MalformedDn(format!("'{text}' does not start with '/'")))?;

        let mut parts = Vec::new();
        let mut current = String::new();
        let mut chars = rest.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some(e @ ('/' | '\\')) => current.push(e),
                    _ => {
                        return Err(CertError::MalformedDn(format!(
                            "bad escape sequence in '{text}'"
                        )))
                    }
                },
                '/' => parts.push(std::mem::take(&mut current)),
                c => current.push(c),
            }
        }
        parts.push(current);

        let rdns = parts
            .into_iter()
            .map(|part| {
                let (attr, value) = part.split_once('=').ok_or_else(|| {
                    CertError::MalformedDn(format!("component '{part}' lacks '='"))
                })?;
                Rdn::new(attr.trim(), value)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rdns)
    }

    pub fn rdns(&self) -> &[Rdn] {
        &self.rdns
    }

    pub fn len(&self) -> usize {
        self.rdns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rdns.is_empty()
    }

    pub fn last(&self) -> &Rdn {
        // non-empty by construction
        self.rdns.last().expect("distinguished name is never empty")
    }

    /// Value of the most specific CN, if any.
    pub fn common_name(&self) -> Option<&str> {
        self.rdns
            .iter()
            .rev()
            .find(|r| r.attr == "CN")
            .map(|r| r.value.as_str())
    }

    /// This name with one more CN component appended.
    pub fn with_cn(&self, value: impl Into<String>) -> Result<Self, CertError> {
        let mut rdns = self.rdns.clone();
        rdns.push(Rdn::new("CN", value)?);
        Self::new(rdns)
    }

    /// True when `self` is `issuer` plus exactly one trailing CN.
    pub fn is_proxy_of(&self, issuer: &DistinguishedName) -> bool {
        self.rdns.len() == issuer.rdns.len() + 1
            && self.rdns[..issuer.rdns.len()] == issuer.rdns[..]
            && self.last().attr == "CN"
    }

    pub fn to_x509_name(&self) -> Result<X509Name, CertError> {
        let mut builder = X509Name::builder()?;
        for rdn in &self.rdns {
            let nid = attr_nid(rdn.attr).expect("attributes are validated on construction");
            builder.append_entry_by_nid(nid, &rdn.value)?;
        }
        Ok(builder.build())
    }

    pub fn from_x509_name(name: &X509NameRef) -> Result<Self, CertError> {
        let rdns = name
            .entries()
            .map(|entry| {
                let nid = entry.object().nid();
                let attr = attr_from_nid(nid).ok_or_else(|| {
                    CertError::MalformedDn(format!("unsupported attribute {:?}", nid.short_name()))
                })?;
                let value = entry.data().to_string()?;
                Rdn::new(attr, value)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rdns)
    }
}

impl fmt::Display for DistinguishedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rdn in &self.rdns {
            write!(f, "/{}=", rdn.attr)?;
            for c in rdn.value.chars() {
                if matches!(c, '/' | '\\') {
                    f.write_str("\\")?;
                }
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for DistinguishedName {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for DistinguishedName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DistinguishedName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Self::parse(&text).map_err(serde::de::Error::custom)
    }
}
