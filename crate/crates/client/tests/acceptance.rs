//! Acceptance run: one line per criterion, in a fixed order.
//!
//! Runs without the libtest harness so the criteria execute one after
//! another (timings stay meaningful) and the key-confinement scan can cover
//! the transcripts every earlier criterion produced. Pass a word on the
//! command line to run only criteria whose name contains it.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use chrono::{DateTime, Duration, DurationRound, Utc};
use gridgate_client::bench::{run_bench, run_once, BenchConfig, BenchMode};
use gridgate_client::{ClientError, GatewayClient};
use gridgate_core::backend::{
    compress_sandbox, decompress_sandbox, JobSnapshot, JobStatus, ManualClock, SandboxError, SandboxFile,
    Timetable, TimetableEntry, WmsConfig,
};
use gridgate_core::cert::{
    build_p12, validate_proxy_chain, Certificate, DistinguishedName, IdentityCredential, ProxyBundle, Rdn,
};
use gridgate_core::delegation::{SecretNeedles, Transcript};
use gridgate_core::jdl::{expand_parametric, parse_jdl_bytes, serialize_jdl, JdlValue, PARAM_TOKEN};
use gridgate_gateway::testenv::{TestEnvironment, P12_PASSWORD};
use gridgate_gateway::{GatewayOptions, RunningGateway};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- fixtures

fn env() -> &'static TestEnvironment {
    static ENV: OnceLock<TestEnvironment> = OnceLock::new();
    ENV.get_or_init(|| TestEnvironment::generate(23).unwrap())
}

fn anchors() -> Vec<Certificate> {
    vec![env().ca.certificate().clone()]
}

fn ca_pem() -> Vec<u8> {
    env().ca.certificate().to_pem().into_bytes()
}

fn now() -> DateTime<Utc> {
    Utc::now().duration_trunc(Duration::seconds(1)).unwrap()
}

fn options(step: Duration) -> GatewayOptions {
    let e = env();
    let mut opts = GatewayOptions::new(e.server.clone(), anchors(), e.registry.clone());
    opts.wms = WmsConfig::simulate(step);
    opts
}

/// All gateway log output of this process.
fn log_buffer() -> &'static Arc<Mutex<Vec<u8>>> {
    static LOGS: OnceLock<Arc<Mutex<Vec<u8>>>> = OnceLock::new();
    LOGS.get_or_init(|| {
        let buf = Arc::new(Mutex::new(Vec::new()));
        let sink = buf.clone();
        let subscriber = tracing_subscriber::fmt()
            .with_max_level(tracing::Level::DEBUG)
            .with_ansi(false)
            .with_writer(move || SharedWriter(sink.clone()))
            .finish();
        tracing::subscriber::set_global_default(subscriber).unwrap();
        buf
    })
}

struct SharedWriter(Arc<Mutex<Vec<u8>>>);

impl std::io::Write for SharedWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Wire captures gathered along the way, each with the keys that must not
/// appear in it.
#[derive(Default)]
struct Evidence {
    captures: Vec<(String, Transcript, Arc<SecretNeedles>)>,
    /// Needles for every key seen, for the log scan.
    all_keys: Vec<Arc<SecretNeedles>>,
}

impl Evidence {
    fn add(&mut self, label: impl Into<String>, transcript: Transcript, needles: Arc<SecretNeedles>) {
        self.captures.push((label.into(), transcript, needles));
    }
}

fn needles(keys: &[&IdentityCredential], bundle: Option<&ProxyBundle>) -> SecretNeedles {
    let mut out: Option<SecretNeedles> = None;
    let mut push = |n: SecretNeedles| out = Some(match out.take() {
        Some(acc) => acc.merge(n),
        None => n,
    });
    for k in keys {
        push(SecretNeedles::for_key(k.private_key()).unwrap());
    }
    if let Some(b) = bundle {
        push(SecretNeedles::for_key(b.proxy_private_key()).unwrap());
    }
    out.expect("at least one key")
}

// ------------------------------------------------------------------ oracles

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

/// `openssl verify -allow_proxy_certs` on the bundle.
fn openssl_accepts(bundle: &ProxyBundle, at: DateTime<Utc>) -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let ca = write_file(dir.path(), "ca.pem", &ca_pem());
    let chain: String = bundle.issuer_chain().iter().map(|c| c.to_pem()).collect();
    let chain = write_file(dir.path(), "chain.pem", chain.as_bytes());
    let proxy = write_file(dir.path(), "proxy.pem", bundle.proxy_cert().to_pem().as_bytes());
    let out = Command::new("openssl")
        .args(["verify", "-allow_proxy_certs", "-CAfile"])
        .arg(&ca)
        .arg("-untrusted")
        .arg(&chain)
        .args(["-attime", &at.timestamp().to_string()])
        .arg(&proxy)
        .output()
        .expect("openssl binary available");
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn openssl(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = Command::new("openssl").args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "openssl {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// The transition matrix, written out pair by pair.
fn legal_transition(from: &str, to: &str) -> bool {
    const PAIRS: &[(&str, &str)] = &[
        ("SUBMITTED", "READY"),
        ("READY", "RUNNING"),
        ("RUNNING", "DONE_OK"),
        ("RUNNING", "DONE_FAILED"),
        ("SUBMITTED", "ABORTED"),
        ("READY", "ABORTED"),
        ("RUNNING", "ABORTED"),
        ("SUBMITTED", "CANCELLED"),
        ("READY", "CANCELLED"),
        ("RUNNING", "CANCELLED"),
        ("DONE_OK", "CLEARED"),
        ("DONE_FAILED", "CLEARED"),
        ("ABORTED", "CLEARED"),
        ("CANCELLED", "CLEARED"),
    ];
    PAIRS.contains(&(from, to))
}

/// Violations in one job record, judged by the matrix above.
fn history_violations(job: &JobSnapshot) -> Vec<String> {
    let mut bad = Vec::new();
    let names: Vec<&str> = job.history.iter().map(|c| c.status.as_str()).collect();
    if names.first() != Some(&"SUBMITTED") {
        bad.push(format!("{} starts with {:?}", job.id, names.first()));
    }
    for (i, w) in names.windows(2).enumerate() {
        if !legal_transition(w[0], w[1]) {
            bad.push(format!("{}: {} -> {}", job.id, w[0], w[1]));
        }
        if job.history[i + 1].at < job.history[i].at {
            bad.push(format!("{}: time runs backwards at {}", job.id, i + 1));
        }
    }
    if names.last() != Some(&job.status.as_str()) {
        bad.push(format!("{}: status {} is not the last history entry", job.id, job.status));
    }
    if let Err(e) = gridgate_core::backend::check_history(&job.history) {
        bad.push(format!("{}: check_history: {e}", job.id));
    }
    bad
}

// --------------------------------------------------------------- criteria

fn random_dn(rng: &mut ChaCha8Rng, index: usize) -> DistinguishedName {
    const WORDS: &[&str] = &[
        "Grid", "Physics", "Catania", "Roma", "Torino", "Lab", "Dept", "Unit 7", "Sezione", "CERN-like",
    ];
    let mut rdns = vec![Rdn::new("C", ["IT", "FR", "DE", "CH", "US"].choose(rng).unwrap().to_string()).unwrap()];
    rdns.push(Rdn::new("O", format!("{} {}", WORDS.choose(rng).unwrap(), rng.gen_range(1..1000))).unwrap());
    for _ in 0..rng.gen_range(0..3) {
        rdns.push(Rdn::new("OU", WORDS.choose(rng).unwrap().to_string()).unwrap());
    }
    if rng.gen_bool(0.3) {
        rdns.push(Rdn::new("L", WORDS.choose(rng).unwrap().to_string()).unwrap());
    }
    let len = rng.gen_range(3..20);
    let name: String = (0..len)
        .map(|_| *b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .-".choose(rng).unwrap() as char)
        .collect();
    rdns.push(Rdn::new("CN", format!("{}{index}", name.trim())).unwrap());
    DistinguishedName::new(rdns).unwrap()
}

fn delegation_end_to_end(ev: &mut Evidence) -> String {
    const COUNT: usize = 100;
    const WORKERS: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1E6);
    let cases: Vec<(usize, DistinguishedName, Duration)> = (0..COUNT)
        .map(|i| (i, random_dn(&mut rng, i), Duration::seconds(rng.gen_range(60..=24 * 3600))))
        .collect();

    // The users' long-lived credentials exist before any delegation; making
    // them is setup and stays outside the timed phase.
    let setup = Instant::now();
    let t0 = now();
    let users: Vec<IdentityCredential> = std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .chunks(COUNT.div_ceil(WORKERS))
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|(_, dn, _)| env().ca.issue_user(dn, t0 - Duration::hours(1), t0 + Duration::days(30)).unwrap())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let setup = setup.elapsed();

    let gw = RunningGateway::start(options(Duration::seconds(1))).unwrap();
    let started = Instant::now();
    let work: Vec<_> = cases.iter().zip(&users).collect();
    let results: Vec<Result<(String, Transcript, SecretNeedles), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = work
            .chunks(COUNT.div_ceil(WORKERS))
            .map(|chunk| {
                let gw = &gw;
                s.spawn(move || {
                    let mut client = GatewayClient::new(&gw.url(), Some(&ca_pem())).unwrap();
                    chunk
                        .iter()
                        .map(|((i, dn, lifetime), user)| {
                            let t0 = now();
                            let mut transcript = Transcript::default();
                            let outcome = client
                                .delegate(user, *lifetime, &mut transcript)
                                .map_err(|e| format!("#{i} {dn}: {e}"))?;
                            let at = now();
                            let bundle = gw
                                .state()
                                .proxies
                                .live(dn, at)
                                .map_err(|e| format!("#{i} {dn}: no live proxy ({e:?})"))?;
                            let report = validate_proxy_chain(&bundle, &anchors(), at);
                            if !report.valid {
                                return Err(format!("#{i} {dn}: validate_proxy_chain: {}", report.summary()));
                            }
                            openssl_accepts(&bundle, at).map_err(|e| format!("#{i} {dn}: openssl: {e}"))?;
                            let expiry = outcome.effective_expiry;
                            if bundle.expiry() != expiry
                                || expiry < t0 + *lifetime - Duration::seconds(1)
                                || expiry > at + *lifetime
                            {
                                return Err(format!("#{i}: expiry {expiry} for lifetime {lifetime}"));
                            }
                            Ok((format!("delegation #{i}"), transcript, needles(&[user], Some(&bundle))))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let elapsed = started.elapsed();

    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((label, transcript, n)) => {
                let n = Arc::new(n);
                ev.all_keys.push(n.clone());
                ev.add(label, transcript, n);
            }
            Err(e) => failures.push(e),
        }
    }
    assert!(failures.is_empty(), "{} of {COUNT} failed; first: {}", failures.len(), failures[0]);
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    format!(
        "{COUNT}/{COUNT} bundles accepted by validate_proxy_chain and openssl verify; delegations {:.1}s (user credential setup {:.1}s)",
        elapsed.as_secs_f64(),
        setup.as_secs_f64()
    )
}

fn password_frames(ev: &mut Evidence) -> String {
    let mut opts = options(Duration::milliseconds(10));
    opts.admin = true;
    let gw = RunningGateway::start(opts).unwrap();
    let alice = &env().alice;
    let cfg = BenchConfig::default();
    let alice_needles = Arc::new(needles(&[alice], None));
    ev.all_keys.push(alice_needles.clone());
    let (mut local, mut external) = (Vec::new(), Vec::new());
    for rep in 0..5 {
        for mode in [BenchMode::LocalDelegation, BenchMode::ExternalMyproxy] {
            let run = run_once(&gw.url(), Some(&ca_pem()), alice, &cfg, mode, 0, rep).unwrap();
            let link = gw.state().myproxy.take_transcript();
            let link_passwords = link.password_frames();
            match mode {
                BenchMode::LocalDelegation => {
                    assert_eq!(link.len(), 0, "local delegation touched the credential store");
                    local.push(run.password_frames());
                    let bundle = gw.state().proxies.live(alice.dn(), now()).unwrap();
                    ev.add("password run, local", run.transcript, Arc::new(needles(&[alice], Some(&bundle))));
                }
                BenchMode::ExternalMyproxy => {
                    external.push(run.password_frames().max(link_passwords));
                    ev.add("password run, external", run.transcript, alice_needles.clone());
                    ev.add("credential-store link", link, alice_needles.clone());
                }
            }
        }
    }
    assert!(local.iter().all(|&n| n == 0), "local runs carried passwords: {local:?}");
    assert!(external.iter().all(|&n| n >= 1), "external runs without a password frame: {external:?}");
    format!(
        "password-bearing frames per run: local {local:?}, external {external:?}"
    )
}

fn bench_ordering(ev: &mut Evidence) -> String {
    let mut opts = options(Duration::milliseconds(10));
    opts.admin = true;
    let gw = RunningGateway::start(opts).unwrap();
    let alice = &env().alice;
    let cfg = BenchConfig::default();
    assert_eq!(cfg.delays_ms, vec![10, 50, 200]);
    assert_eq!(cfg.repetitions, 20);
    let started = Instant::now();
    let report = run_bench(&gw.url(), Some(&ca_pem()), alice, &cfg).unwrap();
    let elapsed = started.elapsed();
    let alice_needles = Arc::new(needles(&[alice], None));
    for run in &report.runs {
        ev.add(format!("bench {}", run.sample.mode.as_str()), run.transcript.clone(), alice_needles.clone());
    }
    ev.add("bench credential-store link", gw.state().myproxy.take_transcript(), alice_needles);

    let mut summary = Vec::new();
    report.write_summary(&mut summary).unwrap();
    let summary = String::from_utf8(summary).unwrap();
    let mut problems = Vec::new();
    for delay in [10, 50, 200] {
        let local = report.mean_total(BenchMode::LocalDelegation, delay).unwrap();
        let external = report.mean_total(BenchMode::ExternalMyproxy, delay).unwrap();
        if local >= external {
            problems.push(format!("delay {delay} ms: local {local:.4}s >= external {external:.4}s"));
        }
    }
    let local_frames = report.frame_counts(BenchMode::LocalDelegation);
    let external_frames = report.frame_counts(BenchMode::ExternalMyproxy);
    if local_frames != vec![4] {
        problems.push(format!("local frame counts {local_frames:?}"));
    }
    if external_frames.iter().any(|&f| f <= 4) {
        problems.push(format!("external frame counts {external_frames:?}"));
    }
    if elapsed.as_secs_f64() >= 300.0 {
        problems.push(format!("took {elapsed:?}"));
    }
    assert_eq!(report.runs.len(), 3 * 20 * 2);
    assert!(problems.is_empty(), "{}\n{summary}", problems.join("; "));
    let rows: Vec<String> = summary
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().take(3).collect::<Vec<_>>().join("/"))
        .collect();
    format!(
        "local faster at every delay (delay/local_s/external_s: {}); frames local {local_frames:?} external {external_frames:?}; {:.1}s",
        rows.join(", "),
        elapsed.as_secs_f64()
    )
}

fn lifecycle(ev: &mut Evidence) -> String {
    const JOBS: usize = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(0x11FE);
    let statuses = [
        JobStatus::Ready,
        JobStatus::Running,
        JobStatus::DoneOk,
        JobStatus::DoneFailed,
        JobStatus::Aborted,
        JobStatus::Cancelled,
        JobStatus::Cleared,
        JobStatus::Submitted,
    ];
    // a third of the jobs get a random script, legal or not
    let mut entries = Vec::new();
    for ordinal in 0..JOBS {
        if rng.gen_bool(0.33) {
            let mut offset = 0;
            for _ in 0..rng.gen_range(1..5) {
                offset += rng.gen_range(200..2500);
                entries.push(TimetableEntry {
                    ordinal,
                    status: *statuses.choose(&mut rng).unwrap(),
                    offset: Duration::milliseconds(offset),
                });
            }
        }
    }
    let clock = Arc::new(ManualClock::new(now() + Duration::seconds(5)));
    let mut opts = options(Duration::seconds(1));
    opts.wms.timetable = Timetable::new(entries);
    opts.clock = clock.clone() as Arc<dyn gridgate_core::backend::Clock>;
    let gw = RunningGateway::start(opts).unwrap();
    let alice = &env().alice;
    let mut client = GatewayClient::new(&gw.url(), Some(&ca_pem())).unwrap();
    let mut transcript = Transcript::default();
    client.delegate(alice, Duration::hours(24), &mut transcript).unwrap();
    let bundle = gw.state().proxies.live(alice.dn(), gridgate_core::backend::Clock::now(&*clock)).unwrap();
    ev.add("lifecycle delegation", transcript, Arc::new(needles(&[alice], Some(&bundle))));

    let archive = compress_sandbox(&[]).unwrap();
    let mut ids: Vec<String> = Vec::new();
    let mut collections: HashMap<String, Vec<String>> = HashMap::new();
    let mut member_of: HashMap<String, String> = HashMap::new();
    let mut deleted: Vec<String> = Vec::new();
    let mut problems = Vec::new();
    let mut member_cancels = 0;
    let mut active_cancels = 0;

    while ids.len() < JOBS {
        let left = JOBS - ids.len();
        let members = if left >= 2 && rng.gen_bool(0.3) { rng.gen_range(2..=6).min(left) } else { 1 };
        let jdl = if members > 1 {
            format!("Executable = \"/bin/echo\";\nArguments = \"_PARAM_\";\nParameters = {members};\n")
        } else {
            "Executable = \"/bin/hostname\";\n".to_string()
        };
        let out = client.submit(&jdl, "theophys", archive.clone(), None).unwrap();
        assert_eq!(out.job_ids.len(), members);
        if let Some(cid) = &out.collection_id {
            for id in &out.job_ids {
                member_of.insert(id.clone(), cid.clone());
            }
            collections.insert(cid.clone(), out.job_ids.clone());
        }
        ids.extend(out.job_ids);

        clock.advance(Duration::milliseconds(rng.gen_range(0..1500)));

        if rng.gen_bool(0.3) {
            let candidates: Vec<&String> = ids.iter().filter(|id| !deleted.contains(id)).collect();
            let target = (*candidates.choose(&mut rng).unwrap()).clone();
            let siblings: Vec<String> = member_of
                .get(&target)
                .map(|cid| collections[cid].iter().filter(|s| **s != target).cloned().collect())
                .unwrap_or_default();
            let before: Vec<JobSnapshot> = siblings.iter().map(|s| client.job(s).unwrap()).collect();
            let prior = client.job(&target).unwrap();
            let reply = client.delete(&target).unwrap();
            deleted.push(target.clone());
            if reply.previous_status != prior.status || reply.cancelled != prior.status.is_active() {
                problems.push(format!("{target}: delete reply {reply:?} after {}", prior.status));
            }
            if reply.cancelled {
                active_cancels += 1;
            }
            let after = client.job(&target).unwrap();
            let tail: Vec<JobStatus> = after.history.iter().rev().take(2).rev().map(|c| c.status).collect();
            let want_tail = if prior.status.is_active() {
                vec![JobStatus::Cancelled, JobStatus::Cleared]
            } else {
                vec![prior.status, JobStatus::Cleared]
            };
            if tail != want_tail {
                problems.push(format!("{target}: history ends {tail:?}, expected {want_tail:?}"));
            }
            if !siblings.is_empty() {
                member_cancels += 1;
                for (sib, was) in siblings.iter().zip(&before) {
                    let now = client.job(sib).unwrap();
                    if now.status != was.status || now.history != was.history {
                        problems.push(format!("cancelling {target} changed sibling {sib}: {} -> {}", was.status, now.status));
                    }
                }
            }
        }
    }

    clock.advance(Duration::hours(1));
    let listed = client.jobs().unwrap();
    assert_eq!(listed.len(), JOBS, "job list size");
    let mut illegal = Vec::new();
    let mut finals: BTreeMap<&'static str, usize> = BTreeMap::new();
    for id in &ids {
        let job = client.job(id).unwrap();
        illegal.extend(history_violations(&job));
        *finals.entry(job.status.as_str()).or_default() += 1;
        if deleted.contains(id) && job.status != JobStatus::Cleared {
            problems.push(format!("{id} was deleted but is {}", job.status));
        }
    }
    assert!(illegal.is_empty(), "{} illegal transitions, first: {}", illegal.len(), illegal[0]);
    assert!(problems.is_empty(), "{} problems, first: {}", problems.len(), problems[0]);
    assert!(member_cancels > 0 && active_cancels > 0, "run never cancelled a member or an active job");
    format!(
        "{JOBS} jobs ({} collections), {} deletes ({active_cancels} of active jobs, {member_cancels} of collection members), 0 illegal transitions; final {finals:?}",
        collections.len(),
        deleted.len()
    )
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/jdl")
}

fn fixtures() -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jdl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// One expected member: attribute name to a string or a list of strings.
fn matches_expectation(member: &gridgate_core::jdl::JobDescriptor, want: &serde_json::Map<String, serde_json::Value>) -> Result<(), String> {
    for (name, expected) in want {
        let got = member.get(name).ok_or_else(|| format!("{name} missing"))?;
        let ok = match expected {
            serde_json::Value::String(s) => got == &JdlValue::Str(s.clone()),
            serde_json::Value::Array(items) => {
                got == &JdlValue::List(items.iter().map(|i| JdlValue::Str(i.as_str().unwrap().into())).collect())
            }
            other => return Err(format!("unsupported expectation {other}")),
        };
        if !ok {
            return Err(format!("{name}: got {got:?}, want {expected}"));
        }
    }
    Ok(())
}

fn jdl_robustness(_: &mut Evidence) -> String {
    let corpus = fixtures();
    let mut round_trips = 0;
    for (name, bytes) in corpus.iter().filter(|(n, _)| !n.starts_with("malformed")) {
        let jd = parse_jdl_bytes(bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        let text = serialize_jdl(&jd);
        let again = parse_jdl_bytes(text.as_bytes()).unwrap_or_else(|e| panic!("{name} reparse: {e}\n{text}"));
        assert_eq!(again, jd, "{name}");
        assert_eq!(serialize_jdl(&again), text, "{name}: serialization is not stable");
        round_trips += 1;
    }
    assert!(corpus.iter().filter(|(n, _)| n.starts_with("malformed")).all(|(_, b)| parse_jdl_bytes(b).is_err()));

    let mut expansions = 0;
    for (name, bytes) in corpus.iter().filter(|(n, _)| n.starts_with("parametric")) {
        let stem = name.trim_end_matches(".jdl");
        let expected: Vec<serde_json::Map<String, serde_json::Value>> =
            serde_json::from_slice(&std::fs::read(fixture_dir().join(format!("{stem}.expected.json"))).unwrap())
                .unwrap();
        let jd = parse_jdl_bytes(bytes).unwrap();
        let members = expand_parametric(&jd).unwrap();
        assert_eq!(members.len(), expected.len(), "{stem}: member count");
        for (i, (member, want)) in members.iter().zip(&expected).enumerate() {
            matches_expectation(member, want).unwrap_or_else(|e| panic!("{stem} member {i}: {e}"));
            assert!(!serialize_jdl(member).contains(PARAM_TOKEN), "{stem} member {i} kept the token");
        }
        expansions += 1;
    }
    assert_eq!(expansions, 4, "parametric fixtures");

    const ITERATIONS: usize = 1_000_000;
    let started = Instant::now();
    let seeds: Vec<&[u8]> = corpus.iter().map(|(_, b)| b.as_slice()).collect();
    let alphabet = b"[]{};=,\"\\\n #/_-.0123456789aeEPARMxyz";
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let mut parsed = 0usize;
    let mut input = Vec::new();
    let previous_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut crash = None;
    for i in 0..ITERATIONS {
        input.clear();
        if i % 8 == 0 {
            let len = rng.gen_range(0..96);
            input.extend((0..len).map(|_| rng.gen::<u8>()));
        } else {
            input.extend_from_slice(seeds.choose(&mut rng).unwrap());
            for _ in 0..rng.gen_range(1..5) {
                let len = input.len();
                match rng.gen_range(0..5) {
                    0 if len > 0 => {
                        let at = rng.gen_range(0..len);
                        input[at] = if rng.gen_bool(0.5) { *alphabet.choose(&mut rng).unwrap() } else { rng.gen() };
                    }
                    1 => {
                        let at = rng.gen_range(0..=len);
                        input.insert(at, *alphabet.choose(&mut rng).unwrap());
                    }
                    2 if len > 0 => {
                        let at = rng.gen_range(0..len);
                        let end = (at + rng.gen_range(1..16)).min(len);
                        input.drain(at..end);
                    }
                    3 if len > 0 => {
                        let at = rng.gen_range(0..len);
                        let end = (at + rng.gen_range(1..24)).min(len);
                        let chunk = input[at..end].to_vec();
                        let to = rng.gen_range(0..=len);
                        input.splice(to..to, chunk);
                    }
                    _ => input.truncate(rng.gen_range(0..=len)),
                }
            }
        }
        match catch_unwind(AssertUnwindSafe(|| parse_jdl_bytes(&input).is_ok())) {
            Ok(true) => parsed += 1,
            Ok(false) => {}
            Err(_) => {
                crash = Some((i, String::from_utf8_lossy(&input).into_owned()));
                break;
            }
        }
    }
    std::panic::set_hook(previous_hook);
    if let Some((i, text)) = crash {
        panic!("parse_jdl panicked at iteration {i} on {text:?}");
    }
    format!(
        "{round_trips} fixtures round-trip, {expansions} expansions match their hand expansion, {ITERATIONS} fuzz inputs without a crash ({parsed} parsed) in {:.1}s",
        started.elapsed().as_secs_f64()
    )
}

fn random_file_set(rng: &mut ChaCha8Rng) -> Vec<SandboxFile> {
    const CHARS: &[char] = &[
        'a', 'b', 'z', 'Q', '0', '7', '_', ' ', 'ä', 'ö', 'ß', 'é', 'ñ', 'ø', 'Ω', 'π', 'ж', '中', '文', '日', '本',
        '한', '글', '🙂', '✓',
    ];
    let word = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.gen_range(1..10);
        (0..n).map(|_| *CHARS.choose(rng).unwrap()).collect::<String>().trim().to_string()
    };
    let count = rng.gen_range(0..=100);
    (0..count)
        .map(|i| {
            let mut path = String::new();
            for _ in 0..rng.gen_range(0..3) {
                path.push_str(&format!("dir{}/", word(rng)));
            }
            path.push_str(&format!("{}-{i}.bin", word(rng)));
            let size = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(0..=64 * 1024) };
            let mut data = vec![0u8; size];
            if rng.gen_bool(0.5) {
                rng.fill(&mut data[..]);
            } else {
                // compressible text
                for (j, b) in data.iter_mut().enumerate() {
                    *b = b"grid job output line\n"[j % 21];
                }
            }
            (path, data)
        })
        .collect()
}

/// Extracts with GNU tar and reads the tree back.
fn system_tar_extract(archive: &[u8]) -> BTreeMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let file = write_file(dir.path(), "a.tar.gz", archive);
    let root = dir.path().join("x");
    std::fs::create_dir(&root).unwrap();
    let status = Command::new("tar").arg("-xzf").arg(&file).arg("-C").arg(&root).status().unwrap();
    assert!(status.success());
    let mut out = BTreeMap::new();
    let mut stack = vec![root.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(&root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn sandbox_round_trip(_: &mut Evidence) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5A4D);
    let mut files_total = 0;
    let mut bytes_total = 0;
    for set in 0..200 {
        let files = random_file_set(&mut rng);
        let archive = compress_sandbox(&files).unwrap();
        let back = decompress_sandbox(&archive).unwrap();
        let want: BTreeMap<String, Vec<u8>> = files.iter().cloned().collect();
        let got: BTreeMap<String, Vec<u8>> = back.into_iter().collect();
        assert_eq!(got.len(), want.len(), "set {set}: file count");
        assert!(got == want, "set {set}: contents differ");
        if set % 10 == 0 {
            assert!(system_tar_extract(&archive) == want, "set {set}: GNU tar disagrees");
        }
        files_total += files.len();
        bytes_total += files.iter().map(|f| f.1.len()).sum::<usize>();
    }

    assert!(matches!(
        compress_sandbox(&[("../etc/x".into(), Vec::new())]),
        Err(SandboxError::PathTraversal(_))
    ));
    let dir = tempfile::tempdir().unwrap();
    let inner = dir.path().join("inner");
    std::fs::create_dir(&inner).unwrap();
    write_file(dir.path(), "evil.txt", b"escape");
    let hostile = |member: &str| {
        let archive = inner.join("hostile.tar.gz");
        let status = Command::new("tar")
            .args(["-czPf"])
            .arg(&archive)
            .arg(member)
            .current_dir(&inner)
            .status()
            .unwrap();
        assert!(status.success());
        decompress_sandbox(&std::fs::read(&archive).unwrap())
    };
    let absolute = dir.path().join("evil.txt").display().to_string();
    assert!(matches!(hostile(&absolute), Err(SandboxError::PathTraversal(_))), "absolute entry accepted");
    assert!(matches!(hostile("../evil.txt"), Err(SandboxError::PathTraversal(_))), "dot-dot entry accepted");
    format!(
        "200 sets ({files_total} files, {:.1} MiB) identical after the round trip, 20 also checked with GNU tar; '..' and absolute entries rejected",
        bytes_total as f64 / (1024.0 * 1024.0)
    )
}

fn p12_conversion(ev: &mut Evidence) -> String {
    let gw = RunningGateway::start(options(Duration::seconds(1))).unwrap();
    let client = GatewayClient::new(&gw.url(), Some(&ca_pem())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0;
    for (name, who) in [("alice", &env().alice), ("bob", &env().bob)] {
        let p12 = build_p12(who, P12_PASSWORD, name, std::slice::from_ref(env().ca.certificate())).unwrap();
        let p12_path = write_file(dir.path(), &format!("{name}.p12"), &p12);
        let (cert_pem, key_pem) = client.convert(p12.clone(), P12_PASSWORD).unwrap();

        // the openssl CLI reads the same archive
        let pass = format!("pass:{P12_PASSWORD}");
        let p12_arg = p12_path.to_str().unwrap();
        let cli_cert = openssl(&["pkcs12", "-in", p12_arg, "-passin", &pass, "-nokeys", "-clcerts"], dir.path());
        let cli_key = openssl(&["pkcs12", "-in", p12_arg, "-passin", &pass, "-nocerts", "-nodes"], dir.path());
        let der = |kind: &str, pem: &[u8], file: &str| {
            let path = write_file(dir.path(), file, pem);
            let args: Vec<&str> = match kind {
                "x509" => vec!["x509", "-in", path.to_str().unwrap(), "-outform", "DER"],
                _ => vec!["pkey", "-in", path.to_str().unwrap(), "-outform", "DER"],
            };
            openssl(&args, dir.path())
        };
        assert_eq!(der("x509", cert_pem.as_bytes(), "a.pem"), der("x509", &cli_cert, "b.pem"), "{name}: certificate");
        assert_eq!(der("pkey", key_pem.as_bytes(), "a.key"), der("pkey", &cli_key, "b.key"), "{name}: key");

        // re-bundle with the CLI and convert again
        let cert_file = write_file(dir.path(), "c.pem", cert_pem.as_bytes());
        let key_file = write_file(dir.path(), "c.key", key_pem.as_bytes());
        let rebundled = dir.path().join("re.p12");
        openssl(
            &[
                "pkcs12", "-export", "-in", cert_file.to_str().unwrap(), "-inkey", key_file.to_str().unwrap(),
                "-passout", "pass:second-password", "-out", rebundled.to_str().unwrap(),
            ],
            dir.path(),
        );
        std::fs::remove_file(&key_file).unwrap();
        let (cert_again, key_again) = client.convert(std::fs::read(&rebundled).unwrap(), "second-password").unwrap();
        assert_eq!(cert_again, cert_pem, "{name}: certificate after re-bundling");
        assert_eq!(*key_again, *key_pem, "{name}: key after re-bundling");

        let wrong = client.convert(p12.clone(), "not-the-password").unwrap_err();
        assert!(matches!(&wrong, ClientError::Api { status: 400, code, .. } if code == "bad_password"), "{wrong:?}");
        let garbage = client.convert(b"\x30\x82garbage".to_vec(), P12_PASSWORD).unwrap_err();
        assert!(matches!(&garbage, ClientError::Api { status: 400, code, .. } if code == "malformed_archive"), "{garbage:?}");

        let logs = log_buffer().lock().unwrap().clone();
        let key_needles = SecretNeedles::for_key(who.private_key()).unwrap();
        assert!(!key_needles.found_in(&logs), "{name}: key material in the log");
        let text = String::from_utf8_lossy(&logs);
        for secret in [P12_PASSWORD, "not-the-password", "second-password"] {
            assert!(!text.contains(secret), "{name}: password {secret:?} in the log");
        }
        use base64::Engine;
        let p12_b64 = base64::engine::general_purpose::STANDARD.encode(&p12);
        assert!(!text.contains(&p12_b64[..48]), "{name}: archive bytes in the log");
        assert!(text.contains("/convert"), "request log missing");
        ev.all_keys.push(Arc::new(key_needles));
        checked += 1;
    }
    format!("{checked} archives match the openssl CLI and survive re-bundling; bad password and garbage rejected; log clean")
}

fn key_confinement(ev: &mut Evidence) -> String {
    assert!(ev.captures.len() >= 100, "only {} captures to scan", ev.captures.len());
    let mut frames = 0;
    let mut leaks = Vec::new();
    for (label, transcript, needles) in &ev.captures {
        frames += transcript.len();
        for frame in transcript.leaks(needles) {
            leaks.push(format!("{label}: {frame}"));
        }
    }
    let logs = log_buffer().lock().unwrap().clone();
    for (i, n) in ev.all_keys.iter().enumerate() {
        if n.found_in(&logs) {
            leaks.push(format!("gateway log holds key #{i}"));
        }
    }
    assert!(leaks.is_empty(), "{} leaks, first: {}", leaks.len(), leaks[0]);
    format!(
        "{frames} frames in {} captures and {} KiB of gateway log hold no user or session key",
        ev.captures.len(),
        logs.len() / 1024
    )
}

// ------------------------------------------------------------------ driver

type Criterion = fn(&mut Evidence) -> String;

fn main() -> ExitCode {
    log_buffer();
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, Criterion); 8] = [
        ("delegation-end-to-end", delegation_end_to_end),
        ("password-frames", password_frames),
        ("bench-ordering", bench_ordering),
        ("lifecycle-soundness", lifecycle),
        ("jdl-robustness", jdl_robustness),
        ("sandbox-round-trip", sandbox_round_trip),
        ("p12-to-pem", p12_conversion),
        // last: scans what the others captured
        ("key-confinement", key_confinement),
    ];
    let mut evidence = Evidence::default();
    let mut lines = Vec::new();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut evidence)));
        let secs = started.elapsed().as_secs_f64();
        let line = match result {
            Ok(detail) => format!("PASS {name} ({secs:.1}s): {detail}"),
            Err(payload) => {
                failed += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                format!("FAIL {name} ({secs:.1}s): {msg}")
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for line in &lines {
        println!("  {}", line.split(':').next().unwrap());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
