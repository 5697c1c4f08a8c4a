//! Workload management: job records, their status machine, and two ways of
//! moving jobs through it.
//!
//! In [`WmsMode::Run`] the job's executable runs in a scratch directory on a
//! background worker. In [`WmsMode::Simulate`] statuses follow a scripted
//! timetable and advance lazily whenever a job is looked at, so a manual
//! clock gives fully deterministic runs.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use zeroize::Zeroizing;

use super::clock::Clock;
use super::myproxy::{MyProxyError, MyProxyLink};
use super::sandbox::{
    check_relative_path, collect_dir, compress_sandbox, decompress_sandbox, unpack_into, SandboxError, SandboxFile,
};
use super::status::{can_transition, JobStatus, StatusChange};
use super::voms::AttributeAssertion;
use crate::cert::{remaining_lifetime, DistinguishedName, ProxyBundle, PublicKey};
use crate::jdl::{expand_parametric, parse_jdl, serialize_jdl, validate_jdl, JobDescriptor};

const DEFAULT_STDOUT: &str = "std.out";
const DEFAULT_STDERR: &str = "std.err";
const POLL: std::time::Duration = std::time::Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum WmsError {
    #[error("invalid job description: {0}")]
    InvalidDescriptor(String),
    #[error("attribute assertion does not match: {0}")]
    AssertionMismatch(String),
    #[error("proxy has expired")]
    ProxyExpired,
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("job is {0}; output exists only for finished jobs")]
    NotFinished(JobStatus),
    #[error("job was cleared; its output is gone")]
    Cleared,
    #[error("job is {0}; only finished jobs can be cleared")]
    NotTerminal(JobStatus),
    #[error("job is already {0}")]
    JobTerminal(JobStatus),
    #[error("no renewal credential was registered for this job")]
    NoRenewalCredential,
    #[error("renewal denied: {0}")]
    RenewalDenied(String),
    #[error("timetable: {0}")]
    Timetable(String),
    #[error("run mode needs a tokio runtime")]
    NoRuntime,
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WmsMode {
    Run,
    Simulate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimetableEntry {
    /// Zero-based position of the job in submission order; every member of
    /// a collection counts.
    pub ordinal: usize,
    pub status: JobStatus,
    pub offset: Duration,
}

/// Scripted status changes for simulate mode.
///
/// Jobs with no entry of their own follow READY, RUNNING, DONE_OK at one,
/// two and three simulate steps after submission.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timetable {
    entries: Vec<TimetableEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Object {
        ordinal: usize,
        status: JobStatus,
        offset_seconds: f64,
    },
    Tuple(usize, JobStatus, f64),
}

impl Timetable {
    pub fn new(entries: Vec<TimetableEntry>) -> Self {
        Self { entries }
    }

    /// A JSON list whose items are `{"ordinal","status","offset_seconds"}`
    /// objects or `[ordinal, status, offset_seconds]` triples.
    pub fn parse(json: &str) -> Result<Self, WmsError> {
        let raw: Vec<RawEntry> = serde_json::from_str(json).map_err(|e| WmsError::Timetable(e.to_string()))?;
        let mut entries = Vec::with_capacity(raw.len());
        for r in raw {
            let (ordinal, status, secs) = match r {
                RawEntry::Object {
                    ordinal,
                    status,
                    offset_seconds,
                } => (ordinal, status, offset_seconds),
                RawEntry::Tuple(o, s, t) => (o, s, t),
            };
            if !secs.is_finite() || secs < 0.0 {
                return Err(WmsError::Timetable(format!("bad offset {secs} for job {ordinal}")));
            }
            entries.push(TimetableEntry {
                ordinal,
                status,
                offset: Duration::milliseconds((secs * 1000.0).round() as i64),
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, WmsError> {
        let text = std::fs::read_to_string(path).map_err(|e| WmsError::Timetable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn script_for(&self, ordinal: usize, step: Duration) -> Vec<(JobStatus, Duration)> {
        let mut own: Vec<_> = self
            .entries
            .iter()
            .filter(|e| e.ordinal == ordinal)
            .map(|e| (e.status, e.offset))
            .collect();
        if own.is_empty() {
            return vec![
                (JobStatus::Ready, step),
                (JobStatus::Running, step * 2),
                (JobStatus::DoneOk, step * 3),
            ];
        }
        own.sort_by_key(|(_, at)| *at);
        own
    }
}

#[derive(Debug, Clone)]
pub struct WmsConfig {
    pub mode: WmsMode,
    /// Jobs executing at once in run mode.
    pub workers: usize,
    pub wall_limit: std::time::Duration,
    pub simulate_step: Duration,
    pub timetable: Timetable,
    /// Parent of per-job scratch directories; the system temp dir when unset.
    pub scratch_root: Option<PathBuf>,
}

impl Default for WmsConfig {
    fn default() -> Self {
        Self {
            mode: WmsMode::Run,
            workers: 4,
            wall_limit: std::time::Duration::from_secs(60),
            simulate_step: Duration::seconds(1),
            timetable: Timetable::default(),
            scratch_root: None,
        }
    }
}

impl WmsConfig {
    pub fn simulate(step: Duration) -> Self {
        Self {
            mode: WmsMode::Simulate,
            simulate_step: step,
            ..Self::default()
        }
    }
}

/// MyProxy credentials a job may renew its proxy from. Held in memory only.
pub struct RenewalRegistration {
    pub username: String,
    password: Zeroizing<String>,
}

impl RenewalRegistration {
    pub fn new(username: impl Into<String>, password: impl Into<String>) -> Self {
        Self {
            username: username.into(),
            password: Zeroizing::new(password.into()),
        }
    }
}

impl std::fmt::Debug for RenewalRegistration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RenewalRegistration")
            .field("username", &self.username)
            .finish_non_exhaustive()
    }
}

pub struct SubmitRequest<'a> {
    pub descriptor: &'a JobDescriptor,
    pub assertion: &'a AttributeAssertion,
    pub bundle: &'a ProxyBundle,
    pub input_archive: &'a [u8],
    pub renewal: Option<RenewalRegistration>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub job_ids: Vec<String>,
    pub collection_id: Option<String>,
    pub warnings: Vec<String>,
}

/// The observable part of a job record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub id: String,
    pub owner_dn: DistinguishedName,
    pub vo: String,
    pub jdl: String,
    pub status: JobStatus,
    pub history: Vec<StatusChange>,
    pub exit_code: Option<i32>,
    pub collection_id: Option<String>,
    pub submitted_at: DateTime<Utc>,
    pub proxy_expiry: DateTime<Utc>,
    pub renewable: bool,
    pub reason: Option<String>,
    pub ordinal: usize,
}

/// Receives every job change, for persistence.
pub trait JobEventSink: Send + Sync {
    /// `output` is set exactly when the change produced an output archive.
    fn record(&self, snapshot: &JobSnapshot, output: Option<&[u8]>);
}

struct Job {
    snap: JobSnapshot,
    descriptor: JobDescriptor,
    bundle: Option<ProxyBundle>,
    input: Option<Arc<Vec<u8>>>,
    output: Option<Arc<Vec<u8>>>,
    renewal: Option<Arc<RenewalRegistration>>,
    script: Vec<(JobStatus, DateTime<Utc>)>,
    process_group: Option<i32>,
    proxy_path: Option<PathBuf>,
}

impl Job {
    fn transition(&mut self, to: JobStatus, at: DateTime<Utc>) -> bool {
        if !can_transition(self.snap.status, to) {
            return false;
        }
        // history is monotone even if a scripted time lies behind the last entry
        let at = self.snap.history.last().map_or(at, |last| at.max(last.at));
        self.snap.status = to;
        self.snap.history.push(StatusChange { status: to, at });
        if !to.is_active() {
            self.script.clear();
            self.input = None;
            self.renewal = None;
            self.bundle = None;
        }
        true
    }

    fn kill(&mut self) {
        if let Some(pgid) = self.process_group.take() {
            // SAFETY: killpg has no memory-safety preconditions.
            unsafe {
                libc::killpg(pgid, libc::SIGKILL);
            }
        }
    }
}

fn stdout_name(jd: &JobDescriptor) -> String {
    jd.str_attr("StdOutput").unwrap_or(DEFAULT_STDOUT).to_string()
}

fn stderr_name(jd: &JobDescriptor) -> String {
    jd.str_attr("StdError").unwrap_or(DEFAULT_STDERR).to_string()
}

fn random_id(prefix: &str) -> String {
    let mut bytes = [0u8; 16];
    openssl::rand::rand_bytes(&mut bytes).expect("system RNG");
    format!("{prefix}{}", hex::encode(bytes))
}

fn has_glob_meta(s: &str) -> bool {
    s.contains(['*', '?', '[', ']'])
}

/// Deterministic stand-in output for a simulated job.
fn synthetic_output(snap: &JobSnapshot, jd: &JobDescriptor, exit_code: i32) -> Result<Vec<u8>, SandboxError> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for name in jd.string_list("OutputSandbox") {
        if !has_glob_meta(&name) {
            let body = format!("simulated output {name} of job {}\n", snap.id);
            files.insert(name, body.into_bytes());
        }
    }
    files.insert(stderr_name(jd), Vec::new());
    files.insert(
        stdout_name(jd),
        format!("simulated job {} exited with code {exit_code}\n", snap.id).into_bytes(),
    );
    let files: Vec<SandboxFile> = files
        .into_iter()
        .filter(|(name, _)| check_relative_path(name).is_ok())
        .collect();
    compress_sandbox(&files)
}

/// The job table and the executors that drive it.
pub struct Wms {
    config: WmsConfig,
    voms_key: PublicKey,
    clock: Arc<dyn Clock>,
    jobs: RwLock<HashMap<String, Arc<Mutex<Job>>>>,
    order: Mutex<Vec<String>>,
    next_ordinal: AtomicUsize,
    myproxy: Option<Arc<MyProxyLink>>,
    sink: RwLock<Option<Arc<dyn JobEventSink>>>,
    workers: Arc<Semaphore>,
    runtime: Option<tokio::runtime::Handle>,
}

impl Wms {
    pub fn new(
        config: WmsConfig,
        voms_key: PublicKey,
        clock: Arc<dyn Clock>,
        myproxy: Option<Arc<MyProxyLink>>,
    ) -> Result<Arc<Self>, WmsError> {
        let runtime = tokio::runtime::Handle::try_current().ok();
        if config.mode == WmsMode::Run && runtime.is_none() {
            return Err(WmsError::NoRuntime);
        }
        Ok(Arc::new(Self {
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            voms_key,
            clock,
            jobs: RwLock::new(HashMap::new()),
            order: Mutex::new(Vec::new()),
            next_ordinal: AtomicUsize::new(0),
            myproxy,
            sink: RwLock::new(None),
            runtime,
        }))
    }

    pub fn config(&self) -> &WmsConfig {
        &self.config
    }

    pub fn myproxy(&self) -> Option<&Arc<MyProxyLink>> {
        self.myproxy.as_ref()
    }

    pub fn set_event_sink(&self, sink: Arc<dyn JobEventSink>) {
        *self.sink.write().unwrap() = Some(sink);
    }

    fn emit(&self, job: &Job, output: Option<&[u8]>) {
        if let Some(sink) = self.sink.read().unwrap().as_ref() {
            sink.record(&job.snap, output);
        }
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<Job>>, WmsError> {
        self.jobs
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| WmsError::UnknownJob(id.to_string()))
    }

    pub fn submit(self: &Arc<Self>, req: SubmitRequest<'_>) -> Result<SubmitOutcome, WmsError> {
        let now = self.clock.now();
        let issues = validate_jdl(req.descriptor);
        let errors: Vec<String> = issues.iter().filter(|i| i.is_error()).map(|i| i.message.clone()).collect();
        if !errors.is_empty() {
            return Err(WmsError::InvalidDescriptor(errors.join("; ")));
        }
        let mut warnings: Vec<String> = issues.iter().map(|i| i.message.clone()).collect();
        for attr in ["Requirements", "Rank"] {
            if req.descriptor.contains(attr) {
                warnings.push(format!("{attr} accepted and ignored: there is a single compute endpoint"));
            }
        }

        let holder = req.bundle.end_user_dn();
        if !req.assertion.verify(&self.voms_key) {
            return Err(WmsError::AssertionMismatch("signature does not verify".into()));
        }
        if req.assertion.holder_dn != *holder {
            return Err(WmsError::AssertionMismatch(format!(
                "assertion is for {}, proxy belongs to {holder}",
                req.assertion.holder_dn
            )));
        }
        if !req.assertion.is_valid_at(now) {
            return Err(WmsError::AssertionMismatch("assertion is not valid now".into()));
        }
        if remaining_lifetime(req.bundle, now) <= Duration::zero() {
            return Err(WmsError::ProxyExpired);
        }

        let members = expand_parametric(req.descriptor).map_err(|e| WmsError::InvalidDescriptor(e.to_string()))?;
        let files = decompress_sandbox(req.input_archive)?;
        for member in &members {
            for name in member.string_list("InputSandbox") {
                if !files.iter().any(|(p, _)| *p == name) {
                    return Err(WmsError::InvalidDescriptor(format!("InputSandbox file {name:?} is not in the archive")));
                }
            }
            if let Some(args) = member.str_attr("Arguments") {
                shell_words::split(args)
                    .map_err(|e| WmsError::InvalidDescriptor(format!("Arguments: {e}")))?;
            }
        }

        let collection_id = (members.len() > 1).then(|| random_id("gc-"));
        let input = Arc::new(req.input_archive.to_vec());
        let renewal = req.renewal.map(Arc::new);
        let mut created = Vec::with_capacity(members.len());
        for descriptor in members {
            let id = random_id("gg-");
            let ordinal = self.next_ordinal.fetch_add(1, Ordering::Relaxed);
            let script = match self.config.mode {
                WmsMode::Simulate => self
                    .config
                    .timetable
                    .script_for(ordinal, self.config.simulate_step)
                    .into_iter()
                    .map(|(st, off)| (st, now + off))
                    .collect(),
                WmsMode::Run => Vec::new(),
            };
            let job = Job {
                snap: JobSnapshot {
                    id: id.clone(),
                    owner_dn: holder.clone(),
                    vo: req.assertion.vo.clone(),
                    jdl: serialize_jdl(&descriptor),
                    status: JobStatus::Submitted,
                    history: vec![StatusChange {
                        status: JobStatus::Submitted,
                        at: now,
                    }],
                    exit_code: None,
                    collection_id: collection_id.clone(),
                    submitted_at: now,
                    proxy_expiry: req.bundle.expiry(),
                    renewable: renewal.is_some(),
                    reason: None,
                    ordinal,
                },
                descriptor,
                bundle: Some(req.bundle.clone()),
                input: Some(input.clone()),
                output: None,
                renewal: renewal.clone(),
                script,
                process_group: None,
                proxy_path: None,
            };
            self.emit(&job, None);
            let job = Arc::new(Mutex::new(job));
            self.jobs.write().unwrap().insert(id.clone(), job.clone());
            self.order.lock().unwrap().push(id.clone());
            if self.config.mode == WmsMode::Run {
                self.enqueue(id.clone(), job);
            }
            created.push(id);
        }
        Ok(SubmitOutcome {
            job_ids: created,
            collection_id,
            warnings,
        })
    }

    /// Applies every scripted change that is due.
    fn advance(&self, job: &mut Job) {
        if self.config.mode != WmsMode::Simulate || job.script.is_empty() {
            return;
        }
        let now = self.clock.now();
        let due = job.script.iter().take_while(|(_, at)| *at <= now).count();
        let mut events: Vec<_> = job.script.drain(..due).collect();
        for (status, at) in events.drain(..) {
            if !job.transition(status, at) {
                continue;
            }
            let mut output = None;
            if status.is_done() {
                let code = if status == JobStatus::DoneOk { 0 } else { 1 };
                job.snap.exit_code = Some(code);
                match synthetic_output(&job.snap, &job.descriptor, code) {
                    Ok(bytes) => output = Some(Arc::new(bytes)),
                    Err(e) => job.snap.reason = Some(format!("could not build output: {e}")),
                }
                job.output = output.clone();
            }
            self.emit(job, output.as_deref().map(Vec::as_slice));
            if !job.snap.status.is_active() {
                break;
            }
        }
    }

    fn with_job<T>(&self, id: &str, f: impl FnOnce(&mut Job) -> T) -> Result<T, WmsError> {
        let job = self.lookup(id)?;
        let mut job = job.lock().unwrap();
        self.advance(&mut job);
        Ok(f(&mut job))
    }

    pub fn status(&self, id: &str) -> Result<JobSnapshot, WmsError> {
        self.with_job(id, |job| job.snap.clone())
    }

    /// Snapshots of `owner`'s jobs in submission order.
    pub fn list(&self, owner: &DistinguishedName) -> Vec<JobSnapshot> {
        let ids = self.order.lock().unwrap().clone();
        ids.iter()
            .filter_map(|id| self.lookup(id).ok())
            .filter_map(|job| {
                let mut job = job.lock().unwrap();
                (job.snap.owner_dn == *owner).then(|| {
                    self.advance(&mut job);
                    job.snap.clone()
                })
            })
            .collect()
    }

    /// Every job, in submission order.
    pub fn all(&self) -> Vec<JobSnapshot> {
        let ids = self.order.lock().unwrap().clone();
        ids.iter().filter_map(|id| self.status(id).ok()).collect()
    }

    pub fn output(&self, id: &str) -> Result<Vec<u8>, WmsError> {
        self.with_job(id, |job| match (&job.output, job.snap.status) {
            (_, JobStatus::Cleared) => Err(WmsError::Cleared),
            (Some(out), st) if st.is_done() => Ok(out.as_ref().clone()),
            (_, st) => Err(WmsError::NotFinished(st)),
        })?
    }

    /// Active jobs become CANCELLED; finished ones are reported as they are.
    pub fn cancel(&self, id: &str) -> Result<JobStatus, WmsError> {
        self.with_job(id, |job| {
            if job.snap.status.is_active() {
                job.kill();
                job.transition(JobStatus::Cancelled, self.clock.now());
                job.snap.reason = Some("cancelled by owner".into());
                self.emit(job, None);
            }
            job.snap.status
        })
    }

    pub fn clear(&self, id: &str) -> Result<JobStatus, WmsError> {
        self.with_job(id, |job| match job.snap.status {
            JobStatus::Cleared => Ok(JobStatus::Cleared),
            st if st.is_terminal() => {
                job.transition(JobStatus::Cleared, self.clock.now());
                job.output = None;
                job.bundle = None;
                self.emit(job, None);
                Ok(JobStatus::Cleared)
            }
            st => Err(WmsError::NotTerminal(st)),
        })?
    }

    /// Replaces the job's working proxy with a fresh one from MyProxy.
    pub async fn renew_job_proxy(&self, id: &str) -> Result<DateTime<Utc>, WmsError> {
        let (registration, owner, current) = self.with_job(id, |job| {
            if !job.snap.status.is_active() {
                return Err(WmsError::JobTerminal(job.snap.status));
            }
            let reg = job.renewal.clone().ok_or(WmsError::NoRenewalCredential)?;
            Ok((reg, job.snap.owner_dn.clone(), job.snap.proxy_expiry))
        })??;
        let link = self.myproxy.as_ref().ok_or(WmsError::NoRenewalCredential)?;
        let retrieved = link
            .retrieve(&registration.username, &registration.password, self.clock.now())
            .await
            .map_err(|e: MyProxyError| WmsError::RenewalDenied(e.to_string()))?;
        if *retrieved.bundle.end_user_dn() != owner {
            return Err(WmsError::RenewalDenied("stored credential belongs to another user".into()));
        }
        let new_expiry = retrieved.renewal_horizon();
        if new_expiry <= current {
            return Err(WmsError::RenewalDenied(format!(
                "stored credential cannot extend the proxy past {current}"
            )));
        }
        self.with_job(id, |job| {
            if !job.snap.status.is_active() {
                return Err(WmsError::JobTerminal(job.snap.status));
            }
            if let Some(path) = &job.proxy_path {
                if let Err(e) = retrieved.bundle.write_to(path) {
                    tracing::warn!(job = %job.snap.id, "could not refresh proxy file: {e}");
                }
            }
            job.bundle = Some(retrieved.bundle.clone());
            job.snap.proxy_expiry = new_expiry;
            self.emit(job, None);
            Ok(new_expiry)
        })?
    }

    /// Reloads persisted jobs. Jobs that were still active when the previous
    /// process stopped cannot be resumed and become ABORTED.
    pub fn restore(&self, records: Vec<(JobSnapshot, Option<Vec<u8>>)>) -> Result<usize, WmsError> {
        let now = self.clock.now();
        let mut restored = 0;
        for (snap, output) in records {
            let descriptor = parse_jdl(&snap.jdl).map_err(|e| WmsError::InvalidDescriptor(e.to_string()))?;
            let mut job = Job {
                snap,
                descriptor,
                bundle: None,
                input: None,
                output: output.map(Arc::new),
                renewal: None,
                script: Vec::new(),
                process_group: None,
                proxy_path: None,
            };
            if job.snap.status.is_active() {
                job.transition(JobStatus::Aborted, now);
                job.snap.reason = Some("gateway restarted while the job was active".into());
                self.emit(&job, None);
            }
            if !job.snap.status.is_done() {
                job.output = None;
            }
            self.next_ordinal.fetch_max(job.snap.ordinal + 1, Ordering::Relaxed);
            let id = job.snap.id.clone();
            if self
                .jobs
                .write()
                .unwrap()
                .insert(id.clone(), Arc::new(Mutex::new(job)))
                .is_none()
            {
                self.order.lock().unwrap().push(id);
            }
            restored += 1;
        }
        Ok(restored)
    }

    fn enqueue(self: &Arc<Self>, id: String, job: Arc<Mutex<Job>>) {
        {
            let mut j = job.lock().unwrap();
            j.transition(JobStatus::Ready, self.clock.now());
            self.emit(&j, None);
        }
        let this = self.clone();
        let runtime = self.runtime.as_ref().expect("checked at construction");
        runtime.spawn(async move {
            let permit = this.workers.clone().acquire_owned().await;
            if permit.is_err() {
                return;
            }
            if let Err(e) = this.execute(&job).await {
                let mut j = job.lock().unwrap();
                j.kill();
                if j.transition(JobStatus::Aborted, this.clock.now()) {
                    j.snap.reason = Some(e);
                    this.emit(&j, None);
                }
            }
            tracing::debug!(job = %id, "worker finished");
        });
    }

    /// Runs one job to completion. An `Err` aborts the job with that reason.
    async fn execute(&self, job: &Arc<Mutex<Job>>) -> Result<(), String> {
        let (descriptor, input, bundle, id) = {
            let j = job.lock().unwrap();
            if !j.snap.status.is_active() {
                return Ok(());
            }
            (j.descriptor.clone(), j.input.clone(), j.bundle.clone(), j.snap.id.clone())
        };
        let scratch_root = self.config.scratch_root.clone().unwrap_or_else(std::env::temp_dir);
        std::fs::create_dir_all(&scratch_root).map_err(|e| format!("scratch root: {e}"))?;
        let scratch = tempfile::Builder::new()
            .prefix(&format!("{id}-"))
            .tempdir_in(&scratch_root)
            .map_err(|e| format!("scratch directory: {e}"))?;
        let work = scratch.path().join("work");
        std::fs::create_dir(&work).map_err(|e| format!("scratch directory: {e}"))?;
        if let Some(input) = input {
            let files = decompress_sandbox(&input).map_err(|e| e.to_string())?;
            unpack_into(&work, &files).map_err(|e| e.to_string())?;
        }
        let proxy_path = scratch.path().join("proxy.pem");
        if let Some(bundle) = &bundle {
            bundle.write_to(&proxy_path).map_err(|e| format!("proxy file: {e}"))?;
        }

        let mut cmd = build_command(&descriptor, &work, &proxy_path)?;
        let mut child = match cmd.spawn() {
            Ok(child) => child,
            Err(e) => {
                return Err(format!(
                    "could not start {}: {e}",
                    descriptor.executable().unwrap_or_default()
                ))
            }
        };
        {
            let mut j = job.lock().unwrap();
            j.process_group = child.id().map(|pid| pid as i32);
            j.proxy_path = Some(proxy_path.clone());
            if !j.transition(JobStatus::Running, self.clock.now()) {
                // cancelled while the sandbox was being prepared
                j.kill();
                return Ok(());
            }
            self.emit(&j, None);
        }

        let started = std::time::Instant::now();
        let mut abort: Option<String> = None;
        let exit = loop {
            tokio::select! {
                status = child.wait() => break status,
                _ = tokio::time::sleep(POLL) => {
                    let mut j = job.lock().unwrap();
                    if !j.snap.status.is_active() {
                        j.kill();
                    } else if started.elapsed() >= self.config.wall_limit {
                        abort = Some(format!("wall-clock limit of {:?} exceeded", self.config.wall_limit));
                        j.kill();
                    } else if self.clock.now() >= j.snap.proxy_expiry {
                        abort = Some("proxy expired while the job was running".into());
                        j.kill();
                    }
                }
            }
        };

        let mut j = job.lock().unwrap();
        j.process_group = None;
        j.proxy_path = None;
        if j.snap.status != JobStatus::Running {
            return Ok(());
        }
        if let Some(reason) = abort {
            return Err(reason);
        }
        let exit = exit.map_err(|e| format!("waiting for the job: {e}"))?;
        let code = exit_code(&exit);
        let output = collect_output(&work, &descriptor).map_err(|e| format!("collecting output: {e}"))?;
        j.snap.exit_code = Some(code);
        j.output = Some(Arc::new(output));
        let to = if code == 0 { JobStatus::DoneOk } else { JobStatus::DoneFailed };
        j.transition(to, self.clock.now());
        let out = j.output.clone();
        self.emit(&j, out.as_deref().map(Vec::as_slice));
        Ok(())
    }
}

fn exit_code(status: &std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

fn build_command(jd: &JobDescriptor, work: &Path, proxy_path: &Path) -> Result<tokio::process::Command, String> {
    use std::os::unix::fs::PermissionsExt;
    use std::process::Stdio;

    let exe = jd.executable().ok_or("no Executable")?;
    let local = work.join(exe);
    let program = if check_relative_path(exe).is_ok() && local.is_file() {
        std::fs::set_permissions(&local, std::fs::Permissions::from_mode(0o755))
            .map_err(|e| format!("chmod {exe}: {e}"))?;
        local
    } else {
        PathBuf::from(exe)
    };
    let args = match jd.str_attr("Arguments") {
        Some(a) => shell_words::split(a).map_err(|e| format!("Arguments: {e}"))?,
        None => Vec::new(),
    };
    let open_out = |name: String| -> Result<Stdio, String> {
        check_relative_path(&name).map_err(|e| e.to_string())?;
        let path = work.join(&name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| format!("{name}: {e}"))?;
        }
        std::fs::File::create(&path)
            .map(Stdio::from)
            .map_err(|e| format!("{name}: {e}"))
    };

    let mut cmd = tokio::process::Command::new(program);
    cmd.args(args)
        .current_dir(work)
        .env("X509_USER_PROXY", proxy_path)
        .stdout(open_out(stdout_name(jd))?)
        .stderr(open_out(stderr_name(jd))?)
        .process_group(0)
        .kill_on_drop(true);
    cmd.stdin(match jd.str_attr("StdInput") {
        Some(name) => {
            check_relative_path(name).map_err(|e| e.to_string())?;
            std::fs::File::open(work.join(name))
                .map(Stdio::from)
                .map_err(|e| format!("StdInput {name}: {e}"))?
        }
        None => Stdio::null(),
    });
    for entry in jd.string_list("Environment") {
        match entry.split_once('=') {
            Some((k, v)) if !k.is_empty() => {
                cmd.env(k, v);
            }
            _ => return Err(format!("Environment entry {entry:?} is not NAME=value")),
        }
    }
    Ok(cmd)
}

/// OutputSandbox matches plus the captured standard streams.
fn collect_output(work: &Path, jd: &JobDescriptor) -> Result<Vec<u8>, SandboxError> {
    let patterns: Vec<glob::Pattern> = jd
        .string_list("OutputSandbox")
        .iter()
        .filter_map(|p| glob::Pattern::new(p).ok())
        .collect();
    let streams = [stdout_name(jd), stderr_name(jd)];
    let files: Vec<SandboxFile> = collect_dir(work)?
        .into_iter()
        .filter(|(path, _)| streams.contains(path) || patterns.iter().any(|p| p.matches(path)))
        .collect();
    compress_sandbox(&files)
}
