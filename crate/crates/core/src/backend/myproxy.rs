//! A MyProxy-style credential repository and the link that reaches it.
//!
//! [`MyProxySim`] is the store itself. [`MyProxyLink`] is how the gateway
//! talks to it: every request and response is serialized, recorded in a
//! [`Transcript`], and held back by the configured per-message delay.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use openssl::hash::MessageDigest;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::{Zeroize, Zeroizing};

use crate::cert::{remaining_lifetime, validate_proxy_chain, Certificate, ProxyBundle};
use crate::delegation::{Direction, Transcript};

const SALT_LEN: usize = 16;
const HASH_ITERATIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "message", rename_all = "snake_case")]
pub enum MyProxyError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid proxy: {0}")]
    InvalidProxy(String),
    #[error("no credential stored under that name")]
    Unknown,
    #[error("wrong password")]
    BadPassword,
    #[error("stored credential has expired")]
    Expired,
    #[error("link failure: {0}")]
    Link(String),
}

struct StoredCredential {
    salt: [u8; SALT_LEN],
    password_hash: [u8; 32],
    bundle: ProxyBundle,
    max_renewal_lifetime: Duration,
    stored_at: DateTime<Utc>,
}

/// What a successful retrieval hands back.
#[derive(Debug, Clone)]
pub struct Retrieved {
    pub bundle: ProxyBundle,
    pub max_renewal_lifetime: Duration,
    pub stored_at: DateTime<Utc>,
}

impl Retrieved {
    /// Latest instant a renewal from this credential may reach.
    pub fn renewal_horizon(&self) -> DateTime<Utc> {
        (self.stored_at + self.max_renewal_lifetime).min(self.bundle.expiry())
    }
}

fn hash_password(password: &str, salt: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    openssl::pkcs5::pbkdf2_hmac(password.as_bytes(), salt, HASH_ITERATIONS, MessageDigest::sha256(), &mut out)
        .expect("pbkdf2 with a fixed digest cannot fail");
    out
}

pub struct MyProxySim {
    credentials: RwLock<HashMap<String, StoredCredential>>,
    trust_anchors: Vec<Certificate>,
}

impl MyProxySim {
    pub fn new(trust_anchors: Vec<Certificate>) -> Self {
        Self {
            credentials: RwLock::new(HashMap::new()),
            trust_anchors,
        }
    }

    /// Stores (or replaces) the credential for `username`.
    pub fn store(
        &self,
        username: &str,
        password: &str,
        bundle: ProxyBundle,
        max_renewal_lifetime: Duration,
        now: DateTime<Utc>,
    ) -> Result<(), MyProxyError> {
        if username.is_empty() {
            return Err(MyProxyError::InvalidRequest("empty username".into()));
        }
        if password.is_empty() {
            return Err(MyProxyError::InvalidRequest("empty password".into()));
        }
        if max_renewal_lifetime <= Duration::zero() {
            return Err(MyProxyError::InvalidRequest("max renewal lifetime must be positive".into()));
        }
        let report = validate_proxy_chain(&bundle, &self.trust_anchors, now);
        if !report.valid {
            return Err(MyProxyError::InvalidProxy(report.summary()));
        }
        let mut salt = [0u8; SALT_LEN];
        openssl::rand::rand_bytes(&mut salt).map_err(|e| MyProxyError::InvalidRequest(e.to_string()))?;
        let record = StoredCredential {
            password_hash: hash_password(password, &salt),
            salt,
            bundle,
            max_renewal_lifetime,
            stored_at: now,
        };
        self.credentials.write().unwrap().insert(username.to_string(), record);
        Ok(())
    }

    pub fn retrieve(&self, username: &str, password: &str, now: DateTime<Utc>) -> Result<Retrieved, MyProxyError> {
        let creds = self.credentials.read().unwrap();
        let record = creds.get(username).ok_or(MyProxyError::Unknown)?;
        let candidate = hash_password(password, &record.salt);
        if !openssl::memcmp::eq(&candidate, &record.password_hash) {
            return Err(MyProxyError::BadPassword);
        }
        if remaining_lifetime(&record.bundle, now) <= Duration::zero() {
            return Err(MyProxyError::Expired);
        }
        Ok(Retrieved {
            bundle: record.bundle.clone(),
            max_renewal_lifetime: record.max_renewal_lifetime,
            stored_at: record.stored_at,
        })
    }

    pub fn len(&self) -> usize {
        self.credentials.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Request as it travels to the repository.
#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum MyProxyRequest {
    Store {
        username: String,
        password: String,
        bundle_pem: String,
        max_renewal_seconds: i64,
    },
    Retrieve { username: String, password: String },
}

impl MyProxyRequest {
    fn label(&self) -> &'static str {
        match self {
            MyProxyRequest::Store { .. } => "myproxy_store",
            MyProxyRequest::Retrieve { .. } => "myproxy_retrieve",
        }
    }
}

impl Drop for MyProxyRequest {
    fn drop(&mut self) {
        match self {
            MyProxyRequest::Store { password, bundle_pem, .. } => {
                password.zeroize();
                bundle_pem.zeroize();
            }
            MyProxyRequest::Retrieve { password, .. } => password.zeroize(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case", deny_unknown_fields)]
pub enum MyProxyResponse {
    Stored,
    Bundle {
        bundle_pem: String,
        max_renewal_seconds: i64,
        stored_at: DateTime<Utc>,
    },
    Error { error: MyProxyError },
}

impl Drop for MyProxyResponse {
    fn drop(&mut self) {
        if let MyProxyResponse::Bundle { bundle_pem, .. } = self {
            bundle_pem.zeroize();
        }
    }
}

/// The network path to a [`MyProxySim`].
pub struct MyProxyLink {
    sim: Arc<MyProxySim>,
    delay_ms: AtomicU64,
    transcript: Mutex<Transcript>,
}

impl MyProxyLink {
    pub fn new(sim: Arc<MyProxySim>, delay_ms: u64) -> Self {
        Self {
            sim,
            delay_ms: AtomicU64::new(delay_ms),
            transcript: Mutex::new(Transcript::default()),
        }
    }

    pub fn sim(&self) -> &Arc<MyProxySim> {
        &self.sim
    }

    pub fn delay_ms(&self) -> u64 {
        self.delay_ms.load(Ordering::Relaxed)
    }

    pub fn set_delay_ms(&self, ms: u64) {
        self.delay_ms.store(ms, Ordering::Relaxed);
    }

    /// Frames recorded since the last call.
    pub fn take_transcript(&self) -> Transcript {
        std::mem::take(&mut *self.transcript.lock().unwrap())
    }

    async fn hop(&self) {
        let ms = self.delay_ms();
        if ms > 0 {
            tokio::time::sleep(std::time::Duration::from_millis(ms)).await;
        }
    }

    fn record(&self, local: &mut Transcript, direction: Direction, label: String, bytes: &[u8]) {
        local.record(direction, label.clone(), bytes.to_vec());
        self.transcript.lock().unwrap().record(direction, label, bytes.to_vec());
    }

    async fn exchange(
        &self,
        request: MyProxyRequest,
        now: DateTime<Utc>,
        local: &mut Transcript,
    ) -> Result<MyProxyResponse, MyProxyError> {
        let link_err = |e: serde_json::Error| MyProxyError::Link(e.to_string());
        let wire = Zeroizing::new(serde_json::to_vec(&request).map_err(link_err)?);
        let label = request.label();
        drop(request);
        self.record(local, Direction::ToServer, label.to_string(), &wire);
        self.hop().await;

        let received: MyProxyRequest = serde_json::from_slice(&wire).map_err(link_err)?;
        let response = self.serve(&received, now);
        drop(received);

        let wire = Zeroizing::new(serde_json::to_vec(&response).map_err(link_err)?);
        drop(response);
        self.record(local, Direction::ToClient, format!("{label}_reply"), &wire);
        self.hop().await;
        serde_json::from_slice(&wire).map_err(link_err)
    }

    fn serve(&self, request: &MyProxyRequest, now: DateTime<Utc>) -> MyProxyResponse {
        let outcome = match request {
            MyProxyRequest::Store {
                username,
                password,
                bundle_pem,
                max_renewal_seconds,
            } => ProxyBundle::from_pem(bundle_pem.as_bytes())
                .map_err(|e| MyProxyError::InvalidProxy(e.to_string()))
                .and_then(|bundle| {
                    self.sim
                        .store(username, password, bundle, Duration::seconds(*max_renewal_seconds), now)
                })
                .map(|()| MyProxyResponse::Stored),
            MyProxyRequest::Retrieve { username, password } => {
                self.sim.retrieve(username, password, now).and_then(|r| {
                    Ok(MyProxyResponse::Bundle {
                        bundle_pem: r
                            .bundle
                            .to_pem()
                            .map_err(|e| MyProxyError::Link(e.to_string()))?
                            .to_string(),
                        max_renewal_seconds: r.max_renewal_lifetime.num_seconds(),
                        stored_at: r.stored_at,
                    })
                })
            }
        };
        outcome.unwrap_or_else(|error| MyProxyResponse::Error { error })
    }

    pub async fn store(
        &self,
        username: &str,
        password: &str,
        bundle: &ProxyBundle,
        max_renewal_lifetime: Duration,
        now: DateTime<Utc>,
    ) -> Result<(), MyProxyError> {
        self.store_traced(username, password, bundle, max_renewal_lifetime, now, &mut Transcript::default())
            .await
    }

    /// [`store`](Self::store), also recording this call's frames in `local`.
    pub async fn store_traced(
        &self,
        username: &str,
        password: &str,
        bundle: &ProxyBundle,
        max_renewal_lifetime: Duration,
        now: DateTime<Utc>,
        local: &mut Transcript,
    ) -> Result<(), MyProxyError> {
        let request = MyProxyRequest::Store {
            username: username.to_string(),
            password: password.to_string(),
            bundle_pem: bundle
                .to_pem()
                .map_err(|e| MyProxyError::InvalidProxy(e.to_string()))?
                .to_string(),
            max_renewal_seconds: max_renewal_lifetime.num_seconds(),
        };
        match self.exchange(request, now, local).await? {
            MyProxyResponse::Stored => Ok(()),
            MyProxyResponse::Error { ref error } => Err(error.clone()),
            MyProxyResponse::Bundle { .. } => Err(MyProxyError::Link("unexpected reply to store".into())),
        }
    }

    pub async fn retrieve(&self, username: &str, password: &str, now: DateTime<Utc>) -> Result<Retrieved, MyProxyError> {
        self.retrieve_traced(username, password, now, &mut Transcript::default()).await
    }

    /// [`retrieve`](Self::retrieve), also recording this call's frames in `local`.
    pub async fn retrieve_traced(
        &self,
        username: &str,
        password: &str,
        now: DateTime<Utc>,
        local: &mut Transcript,
    ) -> Result<Retrieved, MyProxyError> {
        let request = MyProxyRequest::Retrieve {
            username: username.to_string(),
            password: password.to_string(),
        };
        match self.exchange(request, now, local).await? {
            MyProxyResponse::Bundle {
                ref bundle_pem,
                max_renewal_seconds,
                stored_at,
            } => Ok(Retrieved {
                bundle: ProxyBundle::from_pem(bundle_pem.as_bytes())
                    .map_err(|e| MyProxyError::Link(e.to_string()))?,
                max_renewal_lifetime: Duration::seconds(max_renewal_seconds),
                stored_at,
            }),
            MyProxyResponse::Error { ref error } => Err(error.clone()),
            MyProxyResponse::Stored => Err(MyProxyError::Link("unexpected reply to retrieve".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_salted() {
        let a = hash_password("pw", &[1; SALT_LEN]);
        let b = hash_password("pw", &[2; SALT_LEN]);
        assert_ne!(a, b);
        assert_eq!(a, hash_password("pw", &[1; SALT_LEN]));
    }

    #[test]
    fn request_wire_form_names_the_password() {
        let r = MyProxyRequest::Retrieve {
            username: "u".into(),
            password: "p".into(),
        };
        let json: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(json["op"], "retrieve");
        assert_eq!(json["password"], "p");
    }

    #[test]
    fn error_reply_round_trips() {
        let r = MyProxyResponse::Error {
            error: MyProxyError::BadPassword,
        };
        let back: MyProxyResponse = serde_json::from_slice(&serde_json::to_vec(&r).unwrap()).unwrap();
        assert!(matches!(back, MyProxyResponse::Error { ref error } if *error == MyProxyError::BadPassword));
    }
}
