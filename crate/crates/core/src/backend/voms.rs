//! VO membership and signed attribute assertions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::RwLock;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cert::{
    generate_keypair, validate_proxy_chain, Certificate, DistinguishedName, PrivateKey, ProxyBundle,
    PublicKey, DEFAULT_STRENGTH,
};

pub const ASSERTION_VALIDITY: Duration = Duration::hours(12);

#[derive(Debug, Error)]
pub enum VomsError {
    #[error("{dn} is not a member of VO {vo}")]
    NotAMember { dn: String, vo: String },
    #[error("unknown VO {0}")]
    UnknownVo(String),
    #[error("invalid proxy: {0}")]
    InvalidProxy(String),
    #[error("VO registry line {line}: {message}")]
    Registry { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// VO name to member DNs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoRegistry {
    vos: BTreeMap<String, BTreeSet<DistinguishedName>>,
}

impl VoRegistry {
    /// One `vo<TAB>dn` pair per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, VomsError> {
        let mut reg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| VomsError::Registry { line: i + 1, message };
            let (vo, dn) = line
                .split_once('\t')
                .ok_or_else(|| err("expected 'vo<TAB>distinguished name'".into()))?;
            let dn = DistinguishedName::parse(dn.trim()).map_err(|e| err(e.to_string()))?;
            reg.add_member(vo.trim(), dn).map_err(|e| err(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, VomsError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (vo, members) in &self.vos {
            for dn in members {
                out.push_str(&format!("{vo}\t{dn}\n"));
            }
        }
        out
    }

    pub fn add_member(&mut self, vo: &str, dn: DistinguishedName) -> Result<(), VomsError> {
        if vo.is_empty() || vo.chars().any(char::is_whitespace) {
            return Err(VomsError::UnknownVo(format!("invalid VO name {vo:?}")));
        }
        self.vos.entry(vo.to_string()).or_default().insert(dn);
        Ok(())
    }

    pub fn has_vo(&self, vo: &str) -> bool {
        self.vos.contains_key(vo)
    }

    pub fn is_member(&self, vo: &str, dn: &DistinguishedName) -> bool {
        self.vos.get(vo).is_some_and(|m| m.contains(dn))
    }

    pub fn vos(&self) -> impl Iterator<Item = &str> {
        self.vos.keys().map(String::as_str)
    }

    /// VOs the DN belongs to.
    pub fn memberships(&self, dn: &DistinguishedName) -> Vec<String> {
        self.vos
            .iter()
            .filter(|(_, m)| m.contains(dn))
            .map(|(vo, _)| vo.clone())
            .collect()
    }
}

/// A detached, signed statement that `holder_dn` belongs to `vo`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeAssertion {
    pub holder_dn: DistinguishedName,
    pub vo: String,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    #[serde(with = "b64")]
    pub signature: Vec<u8>,
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

impl AttributeAssertion {
    fn payload(holder: &DistinguishedName, vo: &str, issued: DateTime<Utc>, expires: DateTime<Utc>) -> Vec<u8> {
        serde_json::to_vec(&(holder.to_string(), vo, issued.timestamp(), expires.timestamp()))
            .expect("tuple serializes")
    }

    pub fn verify(&self, voms_key: &PublicKey) -> bool {
        let payload = Self::payload(&self.holder_dn, &self.vo, self.issued_at, self.expires_at);
        voms_key.verify(&payload, &self.signature)
    }

    pub fn is_valid_at(&self, now: DateTime<Utc>) -> bool {
        self.issued_at <= now && now < self.expires_at
    }
}

/// The membership service: a registry snapshot source and a signing key.
pub struct Voms {
    registry: RwLock<VoRegistry>,
    key: PrivateKey,
    public: PublicKey,
    trust_anchors: Vec<Certificate>,
}

impl Voms {
    pub fn new(registry: VoRegistry, trust_anchors: Vec<Certificate>) -> Result<Self, crate::cert::CertError> {
        let pair = generate_keypair(DEFAULT_STRENGTH)?;
        Ok(Self {
            registry: RwLock::new(registry),
            key: pair.private,
            public: pair.public,
            trust_anchors,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn registry(&self) -> VoRegistry {
        self.registry.read().unwrap().clone()
    }

    pub fn replace_registry(&self, registry: VoRegistry) {
        *self.registry.write().unwrap() = registry;
    }

    /// Authorizes the bundle's end user (not the proxy subject) for `vo`.
    pub fn authorize(&self, bundle: &ProxyBundle, vo: &str, now: DateTime<Utc>) -> Result<AttributeAssertion, VomsError> {
        let report = validate_proxy_chain(bundle, &self.trust_anchors, now);
        if !report.valid {
            return Err(VomsError::InvalidProxy(report.summary()));
        }
        let holder = bundle.end_user_dn().clone();
        {
            let registry = self.registry.read().unwrap();
            if !registry.has_vo(vo) {
                return Err(VomsError::UnknownVo(vo.to_string()));
            }
            if !registry.is_member(vo, &holder) {
                return Err(VomsError::NotAMember {
                    dn: holder.to_string(),
                    vo: vo.to_string(),
                });
            }
        }
        let issued_at = now;
        let expires_at = now + ASSERTION_VALIDITY;
        let signature = self
            .key
            .sign(&AttributeAssertion::payload(&holder, vo, issued_at, expires_at))
            .map_err(|e| VomsError::InvalidProxy(e.to_string()))?;
        Ok(AttributeAssertion {
            holder_dn: holder,
            vo: vo.to_string(),
            issued_at,
            expires_at,
            signature,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_file_format() {
        let text = "# members\ntheophys\t/C=IT/O=SNS/CN=Alice\n\ncms\t/C=IT/O=SNS/CN=Bob\ntheophys\t/C=IT/O=SNS/CN=Bob\n";
        let reg = VoRegistry::parse(text).unwrap();
        let alice = DistinguishedName::parse("/C=IT/O=SNS/CN=Alice").unwrap();
        let bob = DistinguishedName::parse("/C=IT/O=SNS/CN=Bob").unwrap();
        assert!(reg.is_member("theophys", &alice));
        assert!(!reg.is_member("cms", &alice));
        assert_eq!(reg.memberships(&bob), ["cms", "theophys"]);
        assert_eq!(VoRegistry::parse(&reg.render()).unwrap(), reg);
    }

    #[test]
    fn registry_errors_name_the_line() {
        let err = VoRegistry::parse("theophys\t/C=IT\nbroken line\n").unwrap_err();
        assert!(matches!(err, VomsError::Registry { line: 2, .. }), "{err}");
        assert!(VoRegistry::parse("theophys\tC=IT\n").is_err());
    }
}
