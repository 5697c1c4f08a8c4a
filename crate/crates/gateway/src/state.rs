//! Shared server state: delegated proxies and bearer sessions.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Duration, Utc};
use gridgate_core::backend::{Clock, MyProxyLink, Voms, Wms};
use gridgate_core::cert::{remaining_lifetime, Certificate, DistinguishedName, ProxyBundle};
use gridgate_core::delegation::SessionStore;

pub const API_SESSION_TTL: Duration = Duration::hours(8);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyLookupError {
    NoProxy,
    ProxyExpired,
}

/// The delegated proxies, one per end-user DN. Memory only.
#[derive(Default)]
pub struct ProxyStore {
    entries: RwLock<HashMap<DistinguishedName, (ProxyBundle, DateTime<Utc>)>>,
}

impl ProxyStore {
    /// Replaces any earlier bundle for the same user.
    pub fn put(&self, bundle: ProxyBundle, now: DateTime<Utc>) {
        let dn = bundle.end_user_dn().clone();
        self.entries.write().unwrap().insert(dn, (bundle, now));
    }

    /// The user's bundle, provided it still has lifetime left.
    pub fn live(&self, dn: &DistinguishedName, now: DateTime<Utc>) -> Result<ProxyBundle, ProxyLookupError> {
        let entries = self.entries.read().unwrap();
        let (bundle, _) = entries.get(dn).ok_or(ProxyLookupError::NoProxy)?;
        if remaining_lifetime(bundle, now) <= Duration::zero() {
            return Err(ProxyLookupError::ProxyExpired);
        }
        Ok(bundle.clone())
    }

    pub fn expiry(&self, dn: &DistinguishedName) -> Option<DateTime<Utc>> {
        self.entries.read().unwrap().get(dn).map(|(b, _)| b.expiry())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiSession {
    pub dn: DistinguishedName,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

/// Bearer tokens minted by a completed delegation.
#[derive(Default)]
pub struct ApiSessions {
    tokens: RwLock<HashMap<String, ApiSession>>,
}

impl ApiSessions {
    /// 256 random bits, hex encoded.
    pub fn mint(&self, dn: DistinguishedName, now: DateTime<Utc>) -> (String, ApiSession) {
        let mut raw = [0u8; 32];
        openssl::rand::rand_bytes(&mut raw).expect("system RNG");
        let token = hex::encode(raw);
        let session = ApiSession {
            dn,
            issued_at: now,
            expires_at: now + API_SESSION_TTL,
        };
        self.tokens.write().unwrap().insert(token.clone(), session.clone());
        (token, session)
    }

    pub fn resolve(&self, token: &str, now: DateTime<Utc>) -> Option<ApiSession> {
        let session = self.tokens.read().unwrap().get(token).cloned()?;
        if now >= session.expires_at {
            self.tokens.write().unwrap().remove(token);
            return None;
        }
        Some(session)
    }

    pub fn sweep(&self, now: DateTime<Utc>) -> usize {
        let mut tokens = self.tokens.write().unwrap();
        let before = tokens.len();
        tokens.retain(|_, s| now < s.expires_at);
        before - tokens.len()
    }
}

pub struct AppState {
    pub clock: Arc<dyn Clock>,
    pub trust_anchors: Vec<Certificate>,
    pub delegation: SessionStore,
    pub proxies: ProxyStore,
    pub sessions: ApiSessions,
    pub voms: Voms,
    pub wms: Arc<Wms>,
    pub myproxy: Arc<MyProxyLink>,
    pub admin: bool,
    pub key_strength: u32,
}

impl AppState {
    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }
}
