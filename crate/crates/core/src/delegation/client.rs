//! Client half: signing the challenge and driving a full delegation.

use chrono::{DateTime, Duration, Utc};

use super::message::{
    encode_frame, decode_frame, AckStatus, CsrChallenge, DelegationAck, DelegationMessage,
    InitRequest, SessionId, SignedUpload,
};
use super::server::SessionStore;
use super::transcript::{Direction, Transcript};
use super::DelegationError;
use crate::cert::{sign_proxy_csr, CertError, IdentityCredential, ProxyBundle};

/// Step 4: the user's key signs the server's CSR. The key itself is only
/// used here, never copied into the upload.
pub fn client_sign_challenge(
    challenge: &CsrChallenge,
    identity: &IdentityCredential,
    lifetime: Duration,
    now: DateTime<Utc>,
) -> Result<SignedUpload, DelegationError> {
    let csr = challenge.csr()?;
    if !csr.verify_self_signature() {
        return Err(DelegationError::InvalidChallenge(
            "CSR self-signature does not verify".into(),
        ));
    }
    if csr.subject != *identity.dn() {
        return Err(DelegationError::SubjectMismatch {
            challenge: csr.subject.to_string(),
            identity: identity.dn().to_string(),
        });
    }
    let proxy = sign_proxy_csr(&csr, identity, lifetime, now).map_err(|e| match e {
        CertError::InvalidCsrSignature => DelegationError::InvalidChallenge(e.to_string()),
        other => DelegationError::Cert(other),
    })?;
    Ok(SignedUpload {
        session_id: challenge.session_id.clone(),
        proxy_cert_pem: proxy.to_pem(),
        user_cert_pem: identity.certificate().to_pem(),
    })
}

/// One request/response hop to the delegation server.
pub trait DelegationTransport {
    fn exchange(&mut self, msg: &DelegationMessage) -> Result<DelegationMessage, DelegationError>;
}

#[derive(Debug, Clone)]
pub struct DelegationOutcome {
    pub session_id: SessionId,
    pub effective_expiry: DateTime<Utc>,
}

/// Init, challenge, upload, ack.
pub fn run_delegation(
    transport: &mut dyn DelegationTransport,
    identity: &IdentityCredential,
    lifetime: Duration,
) -> Result<DelegationOutcome, DelegationError> {
    let init = DelegationMessage::InitRequest(InitRequest::new(identity.dn()));
    let challenge = match transport.exchange(&init)? {
        DelegationMessage::CsrChallenge(c) => c,
        other => return Err(DelegationError::Unexpected(other.kind())),
    };
    let upload = client_sign_challenge(&challenge, identity, lifetime, Utc::now())?;
    let ack = match transport.exchange(&DelegationMessage::SignedUpload(upload))? {
        DelegationMessage::DelegationAck(a) => a,
        other => return Err(DelegationError::Unexpected(other.kind())),
    };
    outcome_from_ack(ack)
}

fn outcome_from_ack(ack: DelegationAck) -> Result<DelegationOutcome, DelegationError> {
    match (ack.status, ack.effective_expiry) {
        (AckStatus::Ok, Some(effective_expiry)) => Ok(DelegationOutcome {
            session_id: ack.session_id,
            effective_expiry,
        }),
        (AckStatus::Ok, None) => Err(DelegationError::Decode("ok ack without expiry".into())),
        (AckStatus::Error, _) => Err(DelegationError::Rejected(
            ack.reason.unwrap_or_else(|| "unspecified".into()),
        )),
    }
}

/// In-process transport: every message goes through the length-prefixed
/// frame encoding in both directions and is recorded as sent.
pub struct Loopback<'a> {
    store: &'a SessionStore,
    pub transcript: Transcript,
    /// When set, the connection drops after this many frames have crossed.
    pub drop_after: Option<usize>,
    /// Bundles the server side assembled, as a gateway would store them.
    pub completed: Vec<ProxyBundle>,
}

impl<'a> Loopback<'a> {
    pub fn new(store: &'a SessionStore) -> Self {
        Self {
            store,
            transcript: Transcript::default(),
            drop_after: None,
            completed: Vec::new(),
        }
    }

    fn carry(&mut self, direction: Direction, msg: &DelegationMessage) -> Result<DelegationMessage, DelegationError> {
        if self.drop_after.is_some_and(|n| self.transcript.len() >= n) {
            return Err(DelegationError::Transport("connection dropped".into()));
        }
        let frame = encode_frame(msg);
        self.transcript.record(direction, msg.kind(), frame.clone());
        Ok(decode_frame(&frame)?.0)
    }
}

impl DelegationTransport for Loopback<'_> {
    fn exchange(&mut self, msg: &DelegationMessage) -> Result<DelegationMessage, DelegationError> {
        let received = self.carry(Direction::ToServer, msg)?;
        let now = Utc::now();
        let reply = match received {
            DelegationMessage::InitRequest(req) => {
                DelegationMessage::CsrChallenge(self.store.init(&req, now)?)
            }
            DelegationMessage::SignedUpload(upload) => match self.store.complete(&upload, now) {
                Ok((bundle, ack)) => {
                    self.completed.push(bundle);
                    DelegationMessage::DelegationAck(ack)
                }
                Err(DelegationError::ChainInvalid { ack, .. }) => {
                    DelegationMessage::DelegationAck(ack)
                }
                Err(e) => return Err(e),
            },
            other => return Err(DelegationError::Unexpected(other.kind())),
        };
        self.carry(Direction::ToClient, &reply)
    }
}
