//! Blocking HTTPS client for the gateway API.
//!
//! Every request body and response body of a delegation is recorded in a
//! [`Transcript`] exactly as it crossed the wire, so the same scans used on
//! the in-process protocol apply to the real one.

use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use gridgate_core::backend::{JobSnapshot, JobStatus, SubmitOutcome};
use gridgate_core::cert::{IdentityCredential, ProxyBundle};
use gridgate_core::delegation::{
    run_delegation, DelegationAck, DelegationError, DelegationMessage, DelegationOutcome, DelegationTransport,
    Direction, Transcript,
};
use reqwest::blocking::{multipart, Client, RequestBuilder, Response};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ClientError;

const TIMEOUT: StdDuration = StdDuration::from_secs(120);

/// One frame of the gateway's own exchange with the credential store, as the
/// gateway reports it.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RelayFrame {
    pub label: String,
    pub direction: String,
    pub bytes: usize,
    pub carries_password: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub status: JobStatus,
    pub submitted_at: DateTime<Utc>,
    #[serde(default)]
    pub collection_id: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DeleteReply {
    pub id: String,
    pub previous_status: JobStatus,
    pub cancelled: bool,
    pub status: JobStatus,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TokenGrant {
    pub token: String,
    pub token_expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Deserialize)]
struct CompleteReply {
    ack: DelegationAck,
    #[serde(flatten)]
    grant: Option<TokenGrant>,
}

#[derive(Debug, Deserialize)]
struct RelayReply {
    #[serde(flatten)]
    grant: Option<TokenGrant>,
    #[serde(default)]
    proxy_expiry: Option<DateTime<Utc>>,
    relay_frames: Vec<RelayFrame>,
}

/// What a credential-store login produced.
#[derive(Debug, Clone)]
pub struct MyProxyLogin {
    pub grant: TokenGrant,
    pub proxy_expiry: DateTime<Utc>,
}

pub struct GatewayClient {
    http: Client,
    base: String,
    token: Option<String>,
}

impl GatewayClient {
    /// `ca_pem` is added to the trusted roots (the test CA, typically).
    pub fn new(base: &str, ca_pem: Option<&[u8]>) -> Result<Self, ClientError> {
        let mut builder = Client::builder().timeout(TIMEOUT).https_only(true);
        if let Some(pem) = ca_pem {
            let cert = reqwest::Certificate::from_pem(pem).map_err(|e| ClientError::Config(format!("CA: {e}")))?;
            builder = builder.add_root_certificate(cert);
        }
        Ok(Self {
            http: builder.build()?,
            base: base.trim_end_matches('/').to_string(),
            token: None,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn set_token(&mut self, token: Option<String>) {
        self.token = token;
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn authed(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    /// Sends and turns any non-2xx reply into [`ClientError::Api`].
    fn send(&self, req: RequestBuilder) -> Result<Response, ClientError> {
        let resp = self.authed(req).send()?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let bytes = resp.bytes().unwrap_or_default();
        Err(api_error(status, &bytes))
    }

    fn json<T: serde::de::DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let bytes = self.send(req)?.bytes()?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Transport(format!("unexpected reply: {e}")))
    }

    /// Runs the four-message delegation. On success the client holds the
    /// new bearer token.
    pub fn delegate(
        &mut self,
        identity: &IdentityCredential,
        lifetime: Duration,
        transcript: &mut Transcript,
    ) -> Result<DelegationOutcome, ClientError> {
        let mut transport = HttpTransport {
            client: self,
            transcript,
            grant: None,
        };
        let outcome = run_delegation(&mut transport, identity, lifetime).map_err(|e| match e {
            DelegationError::Transport(m) => ClientError::Transport(m),
            other => other.into(),
        })?;
        let grant = transport.grant.take();
        self.token = grant.map(|g| g.token);
        Ok(outcome)
    }

    /// Stores a locally made proxy in the credential store, through the
    /// gateway's relay.
    pub fn myproxy_store(
        &self,
        username: &str,
        password: &str,
        bundle: &ProxyBundle,
        max_renewal: Duration,
        transcript: &mut Transcript,
        relay: &mut Vec<RelayFrame>,
    ) -> Result<(), ClientError> {
        let body = zeroize::Zeroizing::new(
            serde_json::to_vec(&json!({
                "username": username,
                "password": password,
                "bundle_pem": &*bundle.to_pem()?,
                "max_renewal_seconds": max_renewal.num_seconds(),
            }))
            .expect("json"),
        );
        let reply: RelayReply = self.recorded(
            "/myproxy/store",
            body.to_vec(),
            ("myproxy_store_request", "myproxy_store_reply"),
            transcript,
        )?;
        relay.extend(reply.relay_frames);
        Ok(())
    }

    /// Has the gateway fetch the user's proxy from the credential store.
    pub fn login_via_myproxy(
        &mut self,
        username: &str,
        password: &str,
        transcript: &mut Transcript,
        relay: &mut Vec<RelayFrame>,
    ) -> Result<MyProxyLogin, ClientError> {
        let body = serde_json::to_vec(&json!({ "username": username, "password": password })).expect("json");
        let reply: RelayReply = self.recorded(
            "/delegation/myproxy",
            body,
            ("myproxy_login_request", "myproxy_login_reply"),
            transcript,
        )?;
        relay.extend(reply.relay_frames);
        let grant = reply
            .grant
            .ok_or_else(|| ClientError::Transport("login reply without token".into()))?;
        self.token = Some(grant.token.clone());
        Ok(MyProxyLogin {
            proxy_expiry: reply
                .proxy_expiry
                .ok_or_else(|| ClientError::Transport("login reply without proxy expiry".into()))?,
            grant,
        })
    }

    /// POSTs a JSON body and records both directions.
    fn recorded<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: Vec<u8>,
        labels: (&str, &str),
        transcript: &mut Transcript,
    ) -> Result<T, ClientError> {
        transcript.record(Direction::ToServer, labels.0, body.clone());
        let resp = self
            .http
            .post(self.url(path))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()?;
        let status = resp.status().as_u16();
        let bytes = resp.bytes()?.to_vec();
        transcript.record(Direction::ToClient, labels.1, bytes.clone());
        if !(200..300).contains(&status) {
            return Err(api_error(status, &bytes));
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Transport(format!("unexpected reply: {e}")))
    }

    pub fn submit(
        &self,
        jdl: &str,
        vo: &str,
        sandbox: Vec<u8>,
        renewal: Option<(&str, &str)>,
    ) -> Result<SubmitOutcome, ClientError> {
        let mut meta = json!({ "jdl": jdl, "vo": vo });
        if let Some((username, password)) = renewal {
            meta["myproxy"] = json!({ "username": username, "password": password });
        }
        let form = multipart::Form::new()
            .part(
                "meta",
                multipart::Part::bytes(serde_json::to_vec(&meta).expect("json"))
                    .mime_str("application/json")
                    .expect("mime"),
            )
            .part(
                "sandbox",
                multipart::Part::bytes(sandbox)
                    .file_name("sandbox.tar.gz")
                    .mime_str("application/gzip")
                    .expect("mime"),
            );
        self.json(self.http.post(self.url("/jobs")).multipart(form))
    }

    pub fn jobs(&self) -> Result<Vec<JobSummary>, ClientError> {
        self.json(self.http.get(self.url("/jobs")))
    }

    pub fn job(&self, id: &str) -> Result<JobSnapshot, ClientError> {
        self.json(self.http.get(self.url(&format!("/jobs/{id}"))))
    }

    pub fn output(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        Ok(self.send(self.http.get(self.url(&format!("/jobs/{id}/output"))))?.bytes()?.to_vec())
    }

    pub fn delete(&self, id: &str) -> Result<DeleteReply, ClientError> {
        self.json(self.http.delete(self.url(&format!("/jobs/{id}"))))
    }

    pub fn renew(&self, id: &str) -> Result<DateTime<Utc>, ClientError> {
        let v: Value = self.json(self.http.post(self.url(&format!("/jobs/{id}/renew"))))?;
        serde_json::from_value(v["proxy_expiry"].clone())
            .map_err(|e| ClientError::Transport(format!("unexpected reply: {e}")))
    }

    /// Returns `(cert_pem, key_pem)`.
    pub fn convert(
        &self,
        p12: Vec<u8>,
        password: &str,
    ) -> Result<(String, zeroize::Zeroizing<String>), ClientError> {
        let form = multipart::Form::new()
            .part("p12", multipart::Part::bytes(p12).file_name("credential.p12"))
            .text("password", password.to_string());
        #[derive(Deserialize)]
        struct Pems {
            cert_pem: String,
            key_pem: zeroize::Zeroizing<String>,
        }
        let pems: Pems = self.json(self.http.post(self.url("/convert")).multipart(form))?;
        Ok((pems.cert_pem, pems.key_pem))
    }

    pub fn validate_jdl(&self, jdl: &str) -> Result<Value, ClientError> {
        self.json(self.http.post(self.url("/jdl/validate")).json(&json!({ "jdl": jdl })))
    }

    pub fn info(&self) -> Result<Value, ClientError> {
        self.json(self.http.get(self.url("/info")))
    }

    pub fn session(&self) -> Result<Value, ClientError> {
        self.json(self.http.get(self.url("/session")))
    }

    /// Needs a gateway started with `admin = true`.
    pub fn set_myproxy_delay(&self, delay_ms: u64) -> Result<(), ClientError> {
        self.send(
            self.http
                .put(self.url("/admin/myproxy-delay"))
                .json(&json!({ "delay_ms": delay_ms })),
        )?;
        Ok(())
    }
}

fn api_error(status: u16, bytes: &[u8]) -> ClientError {
    let body: Value = serde_json::from_slice(bytes).unwrap_or(Value::Null);
    ClientError::Api {
        status,
        code: body["error"].as_str().unwrap_or("http_error").to_string(),
        message: body["message"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| String::from_utf8_lossy(bytes).into_owned()),
        body,
    }
}

/// The delegation protocol over HTTPS: init and complete are one POST each.
struct HttpTransport<'a> {
    client: &'a GatewayClient,
    transcript: &'a mut Transcript,
    grant: Option<TokenGrant>,
}

impl HttpTransport<'_> {
    fn post(&mut self, path: &str, msg: &DelegationMessage, body: Vec<u8>) -> Result<(u16, Vec<u8>), DelegationError> {
        self.transcript.record(Direction::ToServer, msg.kind(), body.clone());
        let resp = self
            .client
            .http
            .post(self.client.url(path))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(|e| DelegationError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .bytes()
            .map_err(|e| DelegationError::Transport(e.to_string()))?
            .to_vec();
        Ok((status, bytes))
    }
}

fn reply_error(status: u16, bytes: &[u8]) -> DelegationError {
    let body: Value = serde_json::from_slice(bytes).unwrap_or(Value::Null);
    let message = body["message"].as_str().unwrap_or("").to_string();
    match (status, body["error"].as_str()) {
        (404, Some("unknown_session")) => DelegationError::UnknownSession,
        (409, Some("session_expired")) => DelegationError::SessionExpired,
        (400, Some("malformed_dn")) => DelegationError::MalformedDn(message),
        _ => DelegationError::Rejected(format!("{status}: {message}")),
    }
}

impl DelegationTransport for HttpTransport<'_> {
    fn exchange(&mut self, msg: &DelegationMessage) -> Result<DelegationMessage, DelegationError> {
        let decode = |e: serde_json::Error| DelegationError::Decode(e.to_string());
        match msg {
            DelegationMessage::InitRequest(req) => {
                let (status, bytes) = self.post("/delegation/init", msg, serde_json::to_vec(req).map_err(decode)?)?;
                self.transcript.record(Direction::ToClient, "csr_challenge", bytes.clone());
                if status != 200 {
                    return Err(reply_error(status, &bytes));
                }
                Ok(DelegationMessage::CsrChallenge(serde_json::from_slice(&bytes).map_err(decode)?))
            }
            DelegationMessage::SignedUpload(upload) => {
                let (status, bytes) =
                    self.post("/delegation/complete", msg, serde_json::to_vec(upload).map_err(decode)?)?;
                self.transcript.record(Direction::ToClient, "delegation_ack", bytes.clone());
                match status {
                    200 | 422 => {
                        let reply: CompleteReply = serde_json::from_slice(&bytes).map_err(|e| {
                            if status == 422 {
                                reply_error(status, &bytes)
                            } else {
                                decode(e)
                            }
                        })?;
                        self.grant = reply.grant;
                        Ok(DelegationMessage::DelegationAck(reply.ack))
                    }
                    _ => Err(reply_error(status, &bytes)),
                }
            }
            other => Err(DelegationError::Unexpected(other.kind())),
        }
    }
}
