//! Wire messages and their canonical encoding.
//!
//! Certificates and requests travel PEM-armored inside JSON strings. No
//! message type has a field that could hold private-key material.

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::DelegationError;
use crate::cert::{CertSigningRequest, Certificate, DistinguishedName};

/// Opaque 128-bit session token, rendered as 32 lowercase hex digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn random() -> Self {
        let mut bytes = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        Self(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl std::fmt::Display for SessionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitRequest {
    pub client_dn: String,
}

impl InitRequest {
    pub fn new(dn: &DistinguishedName) -> Self {
        Self {
            client_dn: dn.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsrChallenge {
    pub session_id: SessionId,
    pub csr_pem: String,
}

impl CsrChallenge {
    pub fn csr(&self) -> Result<CertSigningRequest, DelegationError> {
        CertSigningRequest::from_pem(self.csr_pem.as_bytes())
            .map_err(|e| DelegationError::InvalidChallenge(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignedUpload {
    pub session_id: SessionId,
    pub proxy_cert_pem: String,
    pub user_cert_pem: String,
}

impl SignedUpload {
    pub fn proxy_cert(&self) -> Result<Certificate, crate::cert::CertError> {
        Certificate::from_pem(self.proxy_cert_pem.as_bytes())
    }

    pub fn user_cert(&self) -> Result<Certificate, crate::cert::CertError> {
        Certificate::from_pem(self.user_cert_pem.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AckStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationAck {
    pub session_id: SessionId,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_expiry: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl DelegationAck {
    pub fn ok(session_id: SessionId, effective_expiry: DateTime<Utc>) -> Self {
        Self {
            session_id,
            status: AckStatus::Ok,
            effective_expiry: Some(effective_expiry),
            reason: None,
        }
    }

    pub fn error(session_id: SessionId, reason: impl Into<String>) -> Self {
        Self {
            session_id,
            status: AckStatus::Error,
            effective_expiry: None,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DelegationMessage {
    InitRequest(InitRequest),
    CsrChallenge(CsrChallenge),
    SignedUpload(SignedUpload),
    DelegationAck(DelegationAck),
}

impl DelegationMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            DelegationMessage::InitRequest(_) => "init_request",
            DelegationMessage::CsrChallenge(_) => "csr_challenge",
            DelegationMessage::SignedUpload(_) => "signed_upload",
            DelegationMessage::DelegationAck(_) => "delegation_ack",
        }
    }

    /// Compact JSON with fields in declaration order.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("delegation messages always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DelegationError> {
        serde_json::from_slice(bytes).map_err(|e| DelegationError::Decode(e.to_string()))
    }
}

/// Largest frame body accepted by [`decode_frame`].
pub const MAX_FRAME_LEN: usize = 1 << 20;

/// Big-endian `u32` length, then the canonical JSON body.
pub fn encode_frame(msg: &DelegationMessage) -> Vec<u8> {
    let body = msg.to_canonical_bytes();
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes one frame; returns the message and the bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(DelegationMessage, usize), DelegationError> {
    let Some(header) = buf.get(..4) else {
        return Err(DelegationError::Decode("truncated frame header".into()));
    };
    let len = u32::from_be_bytes(header.try_into().expect("four bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(DelegationError::Decode(format!("frame of {len} bytes exceeds limit")));
    }
    let body = buf
        .get(4..4 + len)
        .ok_or_else(|| DelegationError::Decode("truncated frame body".into()))?;
    Ok((DelegationMessage::from_bytes(body)?, 4 + len))
}
