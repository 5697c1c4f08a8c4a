//! Recorded wire traffic and scans over it.
//!
//! A [`Transcript`] holds the exact bytes a transport put on the wire.
//! [`SecretNeedles`] lists the encodings under which a private key could
//! appear in such bytes, so tests can assert that none of them ever does.

use base64::Engine;
use serde::Serialize;

use crate::cert::{CertError, PrivateKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToServer,
    ToClient,
}

#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    pub direction: Direction,
    pub label: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl Frame {
    /// True when the frame is JSON with a `"password"` key anywhere in it.
    pub fn carries_password(&self) -> bool {
        fn walk(v: &serde_json::Value) -> bool {
            match v {
                serde_json::Value::Object(map) => {
                    map.contains_key("password") || map.values().any(walk)
                }
                serde_json::Value::Array(items) => items.iter().any(walk),
                _ => false,
            }
        }
        let body = strip_length_prefix(&self.bytes);
        serde_json::from_slice::<serde_json::Value>(body).is_ok_and(|v| walk(&v))
            || contains(&self.bytes, b"name=\"password\"")
    }

    pub fn contains(&self, needle: &[u8]) -> bool {
        contains(&self.bytes, needle)
    }
}

fn strip_length_prefix(bytes: &[u8]) -> &[u8] {
    if bytes.len() >= 4 {
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("four bytes")) as usize;
        if len == bytes.len() - 4 {
            return &bytes[4..];
        }
    }
    bytes
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && memchr::memmem::find(haystack, needle).is_some()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Transcript {
    frames: Vec<Frame>,
}

impl Transcript {
    pub fn record(&mut self, direction: Direction, label: impl Into<String>, bytes: Vec<u8>) {
        self.frames.push(Frame {
            direction,
            label: label.into(),
            bytes,
        });
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn extend(&mut self, other: Transcript) {
        self.frames.extend(other.frames);
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn password_frames(&self) -> usize {
        self.frames.iter().filter(|f| f.carries_password()).count()
    }

    /// Labels of frames containing any of the needles.
    pub fn leaks(&self, needles: &SecretNeedles) -> Vec<String> {
        self.frames
            .iter()
            .filter(|f| needles.found_in(&f.bytes))
            .map(|f| f.label.clone())
            .collect()
    }
}

/// Every rendering of a private key worth searching for.
pub struct SecretNeedles {
    needles: Vec<Vec<u8>>,
}

impl SecretNeedles {
    pub fn for_key(key: &PrivateKey) -> Result<Self, CertError> {
        let mut needles = Vec::new();
        let b64 = base64::engine::general_purpose::STANDARD;
        for der in [key.to_pkcs8_der()?, key.to_traditional_der()?] {
            needles.push(b64.encode(&*der).into_bytes());
            needles.push(hex::encode(&*der).into_bytes());
            needles.push(der.to_vec());
        }
        let pem = key.to_pem()?;
        needles.push(pem.as_bytes().to_vec());
        needles.push(serde_json::to_string(&*pem).expect("string").into_bytes());
        let public = key.public_key()?;
        for line in pem.lines().filter(|l| !l.starts_with("-----")) {
            // short final lines are too likely to collide with unrelated base64
            if line.len() < 48 {
                continue;
            }
            // a line made only of modulus bytes is public and shows up in
            // CSRs and certificates whenever the base64 alignment agrees
            let decoded = b64.decode(line).unwrap_or_default();
            if !decoded.is_empty() && contains(public.as_der(), &decoded) {
                continue;
            }
            needles.push(line.as_bytes().to_vec());
        }
        Ok(Self { needles })
    }

    pub fn merge(mut self, other: SecretNeedles) -> Self {
        self.needles.extend(other.needles);
        self
    }

    pub fn found_in(&self, bytes: &[u8]) -> bool {
        self.needles.iter().any(|n| contains(bytes, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert::generate_keypair;

    #[test]
    fn needles_catch_every_encoding() {
        let pair = generate_keypair(2048).unwrap();
        let needles = SecretNeedles::for_key(&pair.private).unwrap();
        let pem = pair.private.to_pem().unwrap();
        let embedded = serde_json::json!({ "key": &*pem }).to_string();
        assert!(needles.found_in(embedded.as_bytes()));
        let der = pair.private.to_pkcs8_der().unwrap();
        let mut wrapped = b"prefix".to_vec();
        wrapped.extend_from_slice(&der);
        assert!(needles.found_in(&wrapped));
        // well past the modulus, inside the private exponent
        let line = pem.lines().nth(12).unwrap();
        assert!(needles.found_in(format!("..{line}..").as_bytes()));
        let other = generate_keypair(2048).unwrap();
        assert!(!needles.found_in(other.private.to_pem().unwrap().as_bytes()));
    }

    #[test]
    fn public_material_is_not_a_needle() {
        let pair = generate_keypair(2048).unwrap();
        let needles = SecretNeedles::for_key(&pair.private).unwrap();
        let b64 = base64::engine::general_purpose::STANDARD;
        // every base64 alignment of the public key
        for pad in 0..3 {
            let mut bytes = vec![0u8; pad];
            bytes.extend_from_slice(pair.public.as_der());
            assert!(!needles.found_in(b64.encode(&bytes).as_bytes()), "alignment {pad}");
        }
        assert!(!needles.found_in(pair.public.as_der()));
    }

    #[test]
    fn password_detection() {
        let mut t = Transcript::default();
        t.record(Direction::ToServer, "a", br#"{"x":{"password":"p"}}"#.to_vec());
        t.record(Direction::ToServer, "b", br#"{"x":"password"}"#.to_vec());
        t.record(Direction::ToServer, "c", b"--b\r\nContent-Disposition: form-data; name=\"password\"\r\n".to_vec());
        assert_eq!(t.password_frames(), 2);
        assert!(t.frames()[0].carries_password());
        assert!(!t.frames()[1].carries_password());
    }
}
