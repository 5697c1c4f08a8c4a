//! The HTTP routes. Every error body is `{"error": code, "message": text}`,
//! sometimes with extra fields.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Multipart, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use gridgate_core::backend::{
    JobSnapshot, JobStatus, MyProxyError, RenewalRegistration, SubmitRequest, VomsError, WmsError, WmsMode,
};
use gridgate_core::cert::{convert_p12_to_pem, validate_proxy_chain, CertError, DistinguishedName, ProxyBundle};
use gridgate_core::delegation::{DelegationError, InitRequest, SignedUpload, Transcript};
use gridgate_core::jdl::{check_jdl, expand_parametric, serialize_jdl, JdlIssue};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;
use zeroize::Zeroizing;

use crate::state::{ApiSession, AppState, ProxyLookupError};

/// Compressed input sandboxes larger than this are refused outright.
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;
const MAX_P12_BYTES: usize = 1024 * 1024;

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    fn with(mut self, extra: Value) -> Self {
        self.extra = Some(extra);
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (self.extra, &mut body) {
            map.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_body<T>(body: Result<Json<T>, axum::extract::rejection::JsonRejection>) -> ApiResult<T> {
    body.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

impl From<DelegationError> for ApiError {
    fn from(e: DelegationError) -> Self {
        let message = e.to_string();
        match e {
            DelegationError::MalformedDn(_) => Self::new(StatusCode::BAD_REQUEST, "malformed_dn", message),
            DelegationError::UnknownSession => Self::new(StatusCode::NOT_FOUND, "unknown_session", message),
            DelegationError::SessionExpired => Self::new(StatusCode::CONFLICT, "session_expired", message),
            DelegationError::ChainInvalid { ack, reason } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "chain_invalid", reason).with(json!({ "ack": ack }))
            }
            DelegationError::Cert(CertError::Crypto(_)) => Self::internal(message),
            _ => Self::bad_request(message),
        }
    }
}

impl From<WmsError> for ApiError {
    fn from(e: WmsError) -> Self {
        let message = e.to_string();
        match e {
            WmsError::UnknownJob(_) => Self::new(StatusCode::NOT_FOUND, "not_found", "no such job"),
            WmsError::InvalidDescriptor(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_jdl", message),
            WmsError::ProxyExpired => Self::new(StatusCode::CONFLICT, "proxy_expired", message),
            WmsError::NotFinished(st) => {
                Self::new(StatusCode::CONFLICT, "not_finished", message).with(json!({ "status": st }))
            }
            WmsError::Cleared => Self::new(StatusCode::CONFLICT, "cleared", message),
            WmsError::NotTerminal(st) => {
                Self::new(StatusCode::CONFLICT, "not_terminal", message).with(json!({ "status": st }))
            }
            WmsError::JobTerminal(st) => {
                Self::new(StatusCode::CONFLICT, "job_terminal", message).with(json!({ "status": st }))
            }
            WmsError::NoRenewalCredential => Self::new(StatusCode::CONFLICT, "no_renewal_credential", message),
            WmsError::RenewalDenied(_) => Self::new(StatusCode::CONFLICT, "renewal_denied", message),
            WmsError::Sandbox(_) => Self::new(StatusCode::BAD_REQUEST, "bad_sandbox", message),
            WmsError::AssertionMismatch(_) | WmsError::Timetable(_) | WmsError::NoRuntime => Self::internal(message),
        }
    }
}

impl From<MyProxyError> for ApiError {
    fn from(e: MyProxyError) -> Self {
        let message = e.to_string();
        let (status, code) = match e {
            MyProxyError::InvalidRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            MyProxyError::InvalidProxy(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_proxy"),
            MyProxyError::Unknown => (StatusCode::NOT_FOUND, "unknown_credential"),
            MyProxyError::BadPassword => (StatusCode::UNAUTHORIZED, "bad_password"),
            MyProxyError::Expired => (StatusCode::CONFLICT, "credential_expired"),
            MyProxyError::Link(_) => (StatusCode::BAD_GATEWAY, "myproxy_link"),
        };
        Self::new(status, code, message)
    }
}

/// The caller's bearer session.
pub struct Authenticated(pub ApiSession);

impl FromRequestParts<Arc<AppState>> for Authenticated {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let no_session = || ApiError::new(StatusCode::UNAUTHORIZED, "no_session", "delegate first to obtain a token");
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(no_session)?;
        state
            .sessions
            .resolve(token.trim(), state.now())
            .map(Authenticated)
            .ok_or_else(no_session)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}

#[derive(Serialize)]
struct TokenGrant {
    token: String,
    token_expires_at: DateTime<Utc>,
    dn: String,
    proxy_expiry: DateTime<Utc>,
}

fn grant(state: &AppState, bundle: ProxyBundle) -> TokenGrant {
    let now = state.now();
    let dn = bundle.end_user_dn().clone();
    let proxy_expiry = bundle.expiry();
    state.proxies.put(bundle, now);
    let (token, session) = state.sessions.mint(dn.clone(), now);
    TokenGrant {
        token,
        token_expires_at: session.expires_at,
        dn: dn.to_string(),
        proxy_expiry,
    }
}

async fn delegation_init(
    State(state): State<Arc<AppState>>,
    body: Result<Json<InitRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Response> {
    let req = json_body(body)?;
    let challenge = blocking(move || state.delegation.init(&req, state.now())).await??;
    Ok(Json(challenge).into_response())
}

async fn delegation_complete(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SignedUpload>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Response> {
    let upload = json_body(body)?;
    let st = state.clone();
    let (bundle, ack) = blocking(move || st.delegation.complete(&upload, st.now())).await??;
    let grant = grant(&state, bundle);
    tracing::info!(dn = %grant.dn, "delegation completed");
    Ok(Json(json!({
        "ack": ack,
        "token": grant.token,
        "token_expires_at": grant.token_expires_at,
    }))
    .into_response())
}

#[derive(Serialize)]
struct RelayFrame {
    label: String,
    direction: &'static str,
    bytes: usize,
    carries_password: bool,
}

fn relay_frames(transcript: &Transcript) -> Vec<RelayFrame> {
    transcript
        .frames()
        .iter()
        .map(|f| RelayFrame {
            label: f.label.clone(),
            direction: match f.direction {
                gridgate_core::delegation::Direction::ToServer => "to_server",
                gridgate_core::delegation::Direction::ToClient => "to_client",
            },
            bytes: f.bytes.len(),
            carries_password: f.carries_password(),
        })
        .collect()
}

#[derive(Deserialize)]
struct MyProxyLogin {
    username: String,
    password: Zeroizing<String>,
}

/// The external flow: the gateway fetches the user's proxy from the
/// repository with a username and password, then treats it like a
/// delegated one.
async fn delegation_myproxy(
    State(state): State<Arc<AppState>>,
    body: Result<Json<MyProxyLogin>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Response> {
    let login = json_body(body)?;
    let mut frames = Transcript::default();
    let retrieved = state
        .myproxy
        .retrieve_traced(&login.username, &login.password, state.now(), &mut frames)
        .await?;
    drop(login);
    let report = validate_proxy_chain(&retrieved.bundle, &state.trust_anchors, state.now());
    if !report.valid {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "chain_invalid", report.summary()));
    }
    let grant = grant(&state, retrieved.bundle);
    tracing::info!(dn = %grant.dn, "proxy retrieved from credential store");
    Ok(Json(json!({
        "token": grant.token,
        "token_expires_at": grant.token_expires_at,
        "dn": grant.dn,
        "proxy_expiry": grant.proxy_expiry,
        "relay_frames": relay_frames(&frames),
    }))
    .into_response())
}

#[derive(Deserialize)]
struct MyProxyStore {
    username: String,
    password: Zeroizing<String>,
    bundle_pem: Zeroizing<String>,
    max_renewal_seconds: i64,
}

/// Relays a credential into the repository, as `myproxy-init` would.
async fn myproxy_store(
    State(state): State<Arc<AppState>>,
    body: Result<Json<MyProxyStore>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Response> {
    let req = json_body(body)?;
    let bundle = ProxyBundle::from_pem(req.bundle_pem.as_bytes())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_proxy", e.to_string()))?;
    let mut frames = Transcript::default();
    state
        .myproxy
        .store_traced(
            &req.username,
            &req.password,
            &bundle,
            Duration::seconds(req.max_renewal_seconds),
            state.now(),
            &mut frames,
        )
        .await?;
    Ok(Json(json!({ "stored": true, "relay_frames": relay_frames(&frames) })).into_response())
}

async fn convert(mut multipart: Multipart) -> ApiResult<Response> {
    let mut archive: Option<Zeroizing<Vec<u8>>> = None;
    let mut password: Option<Zeroizing<String>> = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        match field.name() {
            Some("p12") => {
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                archive = Some(Zeroizing::new(bytes.to_vec()));
            }
            Some("password") => {
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                let text = String::from_utf8(bytes.to_vec())
                    .map_err(|_| ApiError::bad_request("password is not UTF-8"))?;
                password = Some(Zeroizing::new(text));
            }
            _ => {}
        }
    }
    let archive = archive.ok_or_else(|| ApiError::bad_request("missing p12 part"))?;
    let password = password.unwrap_or_default();
    let pair = blocking(move || convert_p12_to_pem(&archive, &password))
        .await?
        .map_err(|e| match e {
            CertError::BadPassword => ApiError::new(StatusCode::BAD_REQUEST, "bad_password", e.to_string()),
            CertError::MalformedArchive => ApiError::new(StatusCode::BAD_REQUEST, "malformed_archive", e.to_string()),
            other => ApiError::new(StatusCode::BAD_REQUEST, "malformed_archive", other.to_string()),
        })?;
    let body = Zeroizing::new(
        serde_json::to_vec(&json!({ "cert_pem": pair.cert_pem, "key_pem": &*pair.key_pem }))
            .map_err(|e| ApiError::internal(e.to_string()))?,
    );
    Ok(([(header::CONTENT_TYPE, "application/json")], body.to_vec()).into_response())
}

#[derive(Deserialize)]
struct ValidateRequest {
    jdl: String,
}

#[derive(Serialize)]
struct ValidateResponse {
    valid: bool,
    issues: Vec<JdlIssue>,
    /// How many jobs a submission would create.
    jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalized: Option<String>,
}

async fn jdl_validate(body: Result<Json<ValidateRequest>, axum::extract::rejection::JsonRejection>) -> ApiResult<Response> {
    let req = json_body(body)?;
    let (descriptor, issues) = check_jdl(&req.jdl);
    let valid = descriptor.is_some() && !issues.iter().any(JdlIssue::is_error);
    let jobs = match (&descriptor, valid) {
        (Some(d), true) => expand_parametric(d).map(|v| v.len()).unwrap_or(0),
        _ => 0,
    };
    Ok(Json(ValidateResponse {
        valid,
        issues,
        jobs,
        normalized: descriptor.as_ref().map(serialize_jdl),
    })
    .into_response())
}

#[derive(Deserialize)]
struct SubmitMeta {
    jdl: String,
    vo: String,
    #[serde(default)]
    myproxy: Option<MyProxyLogin>,
}

async fn submit_job(
    State(state): State<Arc<AppState>>,
    Authenticated(session): Authenticated,
    mut multipart: Multipart,
) -> ApiResult<Response> {
    let mut meta: Option<SubmitMeta> = None;
    let mut sandbox = Bytes::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        match field.name() {
            Some("meta") => {
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                let bytes = Zeroizing::new(bytes.to_vec());
                meta = Some(
                    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("meta: {e}")))?,
                );
            }
            Some("sandbox") => {
                sandbox = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
            }
            _ => {}
        }
    }
    let meta = meta.ok_or_else(|| ApiError::bad_request("missing meta part"))?;

    let (descriptor, issues) = check_jdl(&meta.jdl);
    let descriptor = match descriptor {
        Some(d) if !issues.iter().any(JdlIssue::is_error) => d,
        _ => {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_jdl", "job description has errors")
                .with(json!({ "issues": issues })))
        }
    };
    let now = state.now();
    let bundle = state.proxies.live(&session.dn, now).map_err(|e| match e {
        ProxyLookupError::NoProxy => ApiError::new(StatusCode::CONFLICT, "no_proxy", "no delegated proxy for this user"),
        ProxyLookupError::ProxyExpired => {
            ApiError::new(StatusCode::CONFLICT, "proxy_expired", "the delegated proxy has expired; delegate again")
        }
    })?;
    let assertion = state.voms.authorize(&bundle, &meta.vo, now).map_err(|e| match e {
        VomsError::NotAMember { .. } => ApiError::new(StatusCode::FORBIDDEN, "not_a_member", e.to_string()),
        VomsError::UnknownVo(_) => ApiError::new(StatusCode::FORBIDDEN, "unknown_vo", e.to_string()),
        VomsError::InvalidProxy(_) => ApiError::new(StatusCode::CONFLICT, "proxy_expired", e.to_string()),
        other => ApiError::internal(other.to_string()),
    })?;
    let renewal = meta
        .myproxy
        .as_ref()
        .map(|m| RenewalRegistration::new(m.username.clone(), m.password.as_str()));
    let wms = state.wms.clone();
    let outcome = blocking(move || {
        wms.submit(SubmitRequest {
            descriptor: &descriptor,
            assertion: &assertion,
            bundle: &bundle,
            input_archive: &sandbox,
            renewal,
        })
    })
    .await??;
    tracing::info!(jobs = outcome.job_ids.len(), "submitted");
    Ok(Json(outcome).into_response())
}

#[derive(Serialize)]
struct JobSummary {
    id: String,
    status: JobStatus,
    submitted_at: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    collection_id: Option<String>,
}

async fn list_jobs(State(state): State<Arc<AppState>>, Authenticated(session): Authenticated) -> Json<Vec<JobSummary>> {
    Json(
        state
            .wms
            .list(&session.dn)
            .into_iter()
            .map(|j| JobSummary {
                id: j.id,
                status: j.status,
                submitted_at: j.submitted_at,
                collection_id: j.collection_id,
            })
            .collect(),
    )
}

/// The job, provided the caller owns it. Foreign and unknown ids look alike.
fn owned(state: &AppState, dn: &DistinguishedName, id: &str) -> ApiResult<JobSnapshot> {
    match state.wms.status(id) {
        Ok(job) if job.owner_dn == *dn => Ok(job),
        _ => Err(WmsError::UnknownJob(id.to_string()).into()),
    }
}

async fn get_job(
    State(state): State<Arc<AppState>>,
    Authenticated(session): Authenticated,
    Path(id): Path<String>,
) -> ApiResult<Json<JobSnapshot>> {
    owned(&state, &session.dn, &id).map(Json)
}

async fn job_output(
    State(state): State<Arc<AppState>>,
    Authenticated(session): Authenticated,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    owned(&state, &session.dn, &id)?;
    let archive = state.wms.output(&id)?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/gzip".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}-output.tar.gz\"")),
        ],
        archive,
    )
        .into_response())
}

async fn delete_job(
    State(state): State<Arc<AppState>>,
    Authenticated(session): Authenticated,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let before = owned(&state, &session.dn, &id)?.status;
    if before == JobStatus::Cleared {
        return Err(WmsError::Cleared.into());
    }
    let after_cancel = state.wms.cancel(&id)?;
    let status = state.wms.clear(&id)?;
    Ok(Json(json!({
        "id": id,
        "previous_status": before,
        "cancelled": before.is_active() && after_cancel == JobStatus::Cancelled,
        "status": status,
    }))
    .into_response())
}

async fn renew_job(
    State(state): State<Arc<AppState>>,
    Authenticated(session): Authenticated,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    owned(&state, &session.dn, &id)?;
    let expiry = state.wms.renew_job_proxy(&id).await?;
    Ok(Json(json!({ "id": id, "proxy_expiry": expiry })).into_response())
}

async fn session_info(State(state): State<Arc<AppState>>, Authenticated(session): Authenticated) -> Json<Value> {
    Json(json!({
        "dn": session.dn.to_string(),
        "issued_at": session.issued_at,
        "expires_at": session.expires_at,
        "proxy_expiry": state.proxies.expiry(&session.dn),
        "vos": state.voms.registry().memberships(&session.dn),
    }))
}

async fn info(State(state): State<Arc<AppState>>) -> Json<Value> {
    let config = state.wms.config();
    Json(json!({
        "name": "gridgate",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": config.mode,
        "simulate_step_ms": (config.mode == WmsMode::Simulate).then(|| config.simulate_step.num_milliseconds()),
        "myproxy_delay_ms": state.myproxy.delay_ms(),
        "vos": state.voms.registry().vos().map(str::to_string).collect::<Vec<_>>(),
    }))
}

#[derive(Deserialize)]
struct DelaySetting {
    delay_ms: u64,
}

async fn get_delay(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "delay_ms": state.myproxy.delay_ms() }))
}

async fn set_delay(
    State(state): State<Arc<AppState>>,
    body: Result<Json<DelaySetting>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = json_body(body)?;
    state.myproxy.set_delay_ms(req.delay_ms);
    tracing::info!(delay_ms = req.delay_ms, "credential store delay changed");
    Ok(Json(json!({ "delay_ms": req.delay_ms })))
}

const PLACEHOLDER_UI: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>GridGate</title></head>\
<body><h1>GridGate</h1><p>No web UI bundle is installed. Set <code>ui_dir</code> in the gateway \
configuration to serve one here. The JSON API is available under this origin.</p></body></html>\n";

async fn placeholder_ui() -> Html<&'static str> {
    Html(PLACEHOLDER_UI)
}

/// Request log: method, path, status and duration only. Bodies and headers
/// are never logged.
async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let response = next.run(req).await;
    tracing::info!(
        %method,
        path,
        status = response.status().as_u16(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        "request"
    );
    response
}

pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/delegation/init", post(delegation_init))
        .route("/delegation/complete", post(delegation_complete))
        .route("/delegation/myproxy", post(delegation_myproxy))
        .route("/myproxy/store", post(myproxy_store))
        .route("/convert", post(convert).layer(DefaultBodyLimit::max(MAX_P12_BYTES)))
        .route("/jdl/validate", post(jdl_validate))
        .route(
            "/jobs",
            get(list_jobs).post(submit_job).layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)),
        )
        .route("/jobs/{id}", get(get_job).delete(delete_job))
        .route("/jobs/{id}/output", get(job_output))
        .route("/jobs/{id}/renew", post(renew_job))
        .route("/session", get(session_info))
        .route("/info", get(info));
    if state.admin {
        app = app.route("/admin/myproxy-delay", get(get_delay).put(set_delay));
    }
    app = match ui_dir {
        Some(dir) => app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app
            .route("/ui", get(placeholder_ui))
            .route("/ui/", get(placeholder_ui)),
    };
    app.layer(middleware::from_fn(log_requests)).with_state(state)
}
