//! Server half: sessions, key generation, and bundle assembly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use super::message::{CsrChallenge, DelegationAck, InitRequest, SessionId, SignedUpload};
use super::DelegationError;
use crate::cert::{
    assemble_proxy_bundle, build_proxy_csr, generate_keypair, validate_proxy_chain, Certificate,
    DistinguishedName, KeyPair, ProxyBundle, DEFAULT_STRENGTH,
};

/// Window between InitRequest and SignedUpload.
pub const SESSION_TTL: Duration = Duration::seconds(120);

/// How long terminal sessions are remembered before the sweep forgets them.
const TOMBSTONE_RETENTION: Duration = Duration::hours(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingSignature,
    Completed,
    Expired,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        self != SessionState::AwaitingSignature
    }
}

/// Server-side record of one delegation. The key pair is dropped as soon
/// as the session leaves `AwaitingSignature`.
pub struct DelegationSession {
    pub session_id: SessionId,
    pub client_dn: DistinguishedName,
    pub created_at: DateTime<Utc>,
    state: SessionState,
    server_keypair: Option<KeyPair>,
}

impl std::fmt::Debug for DelegationSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DelegationSession")
            .field("session_id", &self.session_id)
            .field("client_dn", &self.client_dn.to_string())
            .field("state", &self.state)
            .field("created_at", &self.created_at)
            .finish_non_exhaustive()
    }
}

impl DelegationSession {
    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn expires_at(&self) -> DateTime<Utc> {
        self.created_at + SESSION_TTL
    }

    /// Public half of the session key; `None` once the session is terminal.
    pub fn public_key(&self) -> Option<&crate::cert::PublicKey> {
        self.server_keypair.as_ref().map(|k| &k.public)
    }

    fn finish(&mut self, state: SessionState) -> Option<KeyPair> {
        debug_assert!(state.is_terminal());
        self.state = state;
        self.server_keypair.take()
    }
}

/// Steps 1 to 3: a fresh key pair and a CSR for the client's DN.
pub fn server_handle_init(
    req: &InitRequest,
    now: DateTime<Utc>,
    key_strength: u32,
) -> Result<(DelegationSession, CsrChallenge), DelegationError> {
    let client_dn = DistinguishedName::parse(&req.client_dn)
        .map_err(|e| DelegationError::MalformedDn(e.to_string()))?;
    let keypair = generate_keypair(key_strength)?;
    let csr = build_proxy_csr(&client_dn, &keypair)?;
    let session_id = SessionId::random();
    let challenge = CsrChallenge {
        session_id: session_id.clone(),
        csr_pem: csr.to_pem(),
    };
    let session = DelegationSession {
        session_id,
        client_dn,
        created_at: now,
        state: SessionState::AwaitingSignature,
        server_keypair: Some(keypair),
    };
    Ok((session, challenge))
}

/// Step 5: assemble and validate the bundle. Every outcome is terminal for
/// the session; a validation failure carries the error ack for the client.
pub fn server_complete(
    upload: &SignedUpload,
    session: &mut DelegationSession,
    trust_anchors: &[Certificate],
    now: DateTime<Utc>,
) -> Result<(ProxyBundle, DelegationAck), DelegationError> {
    if upload.session_id != session.session_id || session.state.is_terminal() {
        return Err(DelegationError::UnknownSession);
    }
    if now > session.expires_at() {
        session.finish(SessionState::Expired);
        return Err(DelegationError::SessionExpired);
    }
    let keypair = session
        .finish(SessionState::Failed)
        .expect("awaiting sessions hold their key pair");
    let id = session.session_id.clone();
    let reject = |reason: String| DelegationError::ChainInvalid {
        ack: DelegationAck::error(id.clone(), reason.clone()),
        reason,
    };

    let proxy_cert = upload.proxy_cert().map_err(|e| reject(format!("proxy certificate: {e}")))?;
    let user_cert = upload.user_cert().map_err(|e| reject(format!("user certificate: {e}")))?;
    if user_cert.subject != session.client_dn {
        return Err(reject(format!(
            "user certificate {} does not match the delegating DN {}",
            user_cert.subject, session.client_dn
        )));
    }
    let bundle = assemble_proxy_bundle(proxy_cert, keypair.private, user_cert)
        .map_err(|e| reject(e.to_string()))?;
    let report = validate_proxy_chain(&bundle, trust_anchors, now);
    let Some(expiry) = report.effective_expiry.filter(|_| report.valid) else {
        return Err(reject(report.summary()));
    };
    session.state = SessionState::Completed;
    Ok((bundle, DelegationAck::ok(id, expiry)))
}

/// Concurrent session table. Lookups lock the table briefly; the work on a
/// single session happens under that session's own lock.
pub struct SessionStore {
    sessions: Mutex<HashMap<SessionId, Arc<Mutex<DelegationSession>>>>,
    trust_anchors: Vec<Certificate>,
    key_strength: u32,
}

impl SessionStore {
    pub fn new(trust_anchors: Vec<Certificate>) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            trust_anchors,
            key_strength: DEFAULT_STRENGTH,
        }
    }

    pub fn with_key_strength(mut self, bits: u32) -> Self {
        self.key_strength = bits;
        self
    }

    pub fn trust_anchors(&self) -> &[Certificate] {
        &self.trust_anchors
    }

    pub fn init(
        &self,
        req: &InitRequest,
        now: DateTime<Utc>,
    ) -> Result<CsrChallenge, DelegationError> {
        let (session, challenge) = server_handle_init(req, now, self.key_strength)?;
        self.sessions
            .lock()
            .unwrap()
            .insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
        Ok(challenge)
    }

    pub fn complete(
        &self,
        upload: &SignedUpload,
        now: DateTime<Utc>,
    ) -> Result<(ProxyBundle, DelegationAck), DelegationError> {
        let session = self
            .sessions
            .lock()
            .unwrap()
            .get(&upload.session_id)
            .cloned()
            .ok_or(DelegationError::UnknownSession)?;
        let mut session = session.lock().unwrap();
        server_complete(upload, &mut session, &self.trust_anchors, now)
    }

    pub fn state(&self, id: &SessionId) -> Option<SessionState> {
        let session = self.sessions.lock().unwrap().get(id).cloned()?;
        let state = session.lock().unwrap().state;
        Some(state)
    }

    /// Expires overdue sessions (dropping their keys) and forgets old
    /// terminal ones. Returns how many sessions were expired.
    pub fn expire_stale(&self, now: DateTime<Utc>) -> usize {
        let mut sessions = self.sessions.lock().unwrap();
        let mut expired = 0;
        sessions.retain(|_, session| {
            let Ok(mut s) = session.try_lock() else {
                // busy completing; leave it to the next sweep
                return true;
            };
            if s.state == SessionState::AwaitingSignature && now > s.expires_at() {
                s.finish(SessionState::Expired);
                expired += 1;
            }
            !(s.state.is_terminal() && now > s.created_at + TOMBSTONE_RETENTION)
        });
        expired
    }

    /// Sessions still waiting for a signed upload.
    pub fn pending(&self) -> usize {
        self.sessions
            .lock()
            .unwrap()
            .values()
            .filter(|s| s.lock().unwrap().state == SessionState::AwaitingSignature)
            .count()
    }
}
