//! Timing harness comparing on-gateway delegation with the external
//! credential-store flow over the same submit, monitor and output cycle.

use std::io::Write;
use std::time::{Duration as StdDuration, Instant};

use chrono::{Duration, DurationRound, Utc};
use gridgate_core::backend::compress_sandbox;
use gridgate_core::cert::{create_local_proxy, IdentityCredential, DEFAULT_STRENGTH};
use gridgate_core::delegation::Transcript;
use serde::Serialize;
use serde_json::Value;

use crate::error::ClientError;
use crate::http::{GatewayClient, RelayFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BenchMode {
    #[serde(rename = "local-delegation")]
    LocalDelegation,
    #[serde(rename = "external-myproxy")]
    ExternalMyproxy,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::LocalDelegation => "local-delegation",
            BenchMode::ExternalMyproxy => "external-myproxy",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub delays_ms: Vec<u64>,
    pub repetitions: usize,
    pub modes: Vec<BenchMode>,
    pub jdl: String,
    pub vo: String,
    pub lifetime: Duration,
    pub poll_interval: StdDuration,
    pub monitor_timeout: StdDuration,
    /// Prefix for the credential-store usernames; each run gets its own.
    pub myproxy_username: String,
    pub myproxy_password: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            delays_ms: vec![10, 50, 200],
            repetitions: 20,
            modes: vec![BenchMode::LocalDelegation, BenchMode::ExternalMyproxy],
            jdl: "Executable = \"/bin/true\";\nStdOutput = \"std.out\";\nOutputSandbox = {\"std.out\"};\n".into(),
            vo: "theophys".into(),
            lifetime: Duration::hours(12),
            poll_interval: StdDuration::from_millis(5),
            monitor_timeout: StdDuration::from_secs(60),
            myproxy_username: "bench".into(),
            myproxy_password: "bench-password".into(),
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSample {
    pub mode: BenchMode,
    pub repetition: usize,
    pub delay_ms: u64,
    pub delegate_s: f64,
    pub submit_s: f64,
    pub monitor_s: f64,
    pub output_s: f64,
    pub total_s: f64,
    pub frames: usize,
}

/// A sample plus the evidence behind its frame count.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub sample: BenchSample,
    /// Bodies the client sent and received while obtaining credentials.
    pub transcript: Transcript,
    /// The gateway's frames to and from the credential store.
    pub relay: Vec<RelayFrame>,
}

impl BenchRun {
    pub fn password_frames(&self) -> usize {
        self.transcript.password_frames() + self.relay.iter().filter(|f| f.carries_password).count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
}

impl BenchReport {
    fn matching(&self, mode: BenchMode, delay_ms: u64) -> impl Iterator<Item = &BenchRun> {
        self.runs
            .iter()
            .filter(move |r| r.sample.mode == mode && r.sample.delay_ms == delay_ms)
    }

    pub fn mean_total(&self, mode: BenchMode, delay_ms: u64) -> Option<f64> {
        let totals: Vec<f64> = self.matching(mode, delay_ms).map(|r| r.sample.total_s).collect();
        (!totals.is_empty()).then(|| totals.iter().sum::<f64>() / totals.len() as f64)
    }

    /// Distinct frame counts seen for a mode.
    pub fn frame_counts(&self, mode: BenchMode) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .runs
            .iter()
            .filter(|r| r.sample.mode == mode)
            .map(|r| r.sample.frames)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn delays(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.runs.iter().map(|r| r.sample.delay_ms).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), ClientError> {
        let mut writer = csv::Writer::from_writer(w);
        for run in &self.runs {
            writer
                .serialize(&run.sample)
                .map_err(|e| ClientError::Io(std::io::Error::other(e)))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "delay_ms  local_mean_s  external_mean_s  local_frames  external_frames")?;
        for delay in self.delays() {
            let fmt = |m| self.mean_total(m, delay).map_or("-".into(), |v| format!("{v:.4}"));
            let frames = |m| {
                self.frame_counts(m)
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("/")
            };
            writeln!(
                out,
                "{delay:>8}  {:>12}  {:>15}  {:>12}  {:>15}",
                fmt(BenchMode::LocalDelegation),
                fmt(BenchMode::ExternalMyproxy),
                frames(BenchMode::LocalDelegation),
                frames(BenchMode::ExternalMyproxy),
            )?;
        }
        Ok(())
    }
}

/// Checks the gateway can run the bench: simulate mode, and the delay knob
/// available when it must change.
fn prepare(client: &GatewayClient, delay_ms: u64) -> Result<(), ClientError> {
    let info: Value = client.info()?;
    if info["mode"] != "simulate" {
        return Err(ClientError::Bench("the gateway must run in simulate mode".into()));
    }
    if info["myproxy_delay_ms"].as_u64() == Some(delay_ms) {
        return Ok(());
    }
    client.set_myproxy_delay(delay_ms).map_err(|e| match e {
        ClientError::Api { status: 404, .. } => ClientError::Bench(format!(
            "gateway delay is {} ms and cannot be changed (start it with admin = true)",
            info["myproxy_delay_ms"]
        )),
        other => other,
    })
}

fn secs(d: StdDuration) -> f64 {
    d.as_secs_f64()
}

/// Delegate, submit, monitor to a terminal state, and fetch every output.
pub fn run_once(
    base: &str,
    ca_pem: Option<&[u8]>,
    identity: &IdentityCredential,
    cfg: &BenchConfig,
    mode: BenchMode,
    delay_ms: u64,
    repetition: usize,
) -> Result<BenchRun, ClientError> {
    let mut client = GatewayClient::new(base, ca_pem)?;
    let archive = compress_sandbox(&[])?;
    let mut transcript = Transcript::default();
    let mut relay = Vec::new();

    let started = Instant::now();
    match mode {
        BenchMode::LocalDelegation => {
            client.delegate(identity, cfg.lifetime, &mut transcript)?;
        }
        BenchMode::ExternalMyproxy => {
            let now = Utc::now().duration_trunc(Duration::seconds(1)).expect("truncation");
            let bundle = create_local_proxy(identity, cfg.lifetime, now, DEFAULT_STRENGTH)?;
            let username = format!("{}-{}-{delay_ms}-{repetition}", cfg.myproxy_username, std::process::id());
            client.myproxy_store(
                &username,
                &cfg.myproxy_password,
                &bundle,
                cfg.lifetime,
                &mut transcript,
                &mut relay,
            )?;
            client.login_via_myproxy(&username, &cfg.myproxy_password, &mut transcript, &mut relay)?;
        }
    }
    let delegated = Instant::now();

    let outcome = client.submit(&cfg.jdl, &cfg.vo, archive, None)?;
    let submitted = Instant::now();

    let deadline = submitted + cfg.monitor_timeout;
    let mut pending = outcome.job_ids.clone();
    while !pending.is_empty() {
        let mut still = Vec::new();
        for id in pending {
            if !client.job(&id)?.status.is_terminal() {
                still.push(id);
            }
        }
        pending = still;
        if pending.is_empty() {
            break;
        }
        if Instant::now() > deadline {
            return Err(ClientError::Bench(format!("jobs {pending:?} did not finish in time")));
        }
        std::thread::sleep(cfg.poll_interval);
    }
    let monitored = Instant::now();

    for id in &outcome.job_ids {
        client.output(id)?;
    }
    let finished = Instant::now();

    Ok(BenchRun {
        sample: BenchSample {
            mode,
            repetition,
            delay_ms,
            delegate_s: secs(delegated - started),
            submit_s: secs(submitted - delegated),
            monitor_s: secs(monitored - submitted),
            output_s: secs(finished - monitored),
            total_s: secs(finished - started),
            frames: transcript.len() + relay.len(),
        },
        transcript,
        relay,
    })
}

/// Every delay, every repetition, each mode in turn. The order of modes
/// alternates between repetitions so neither always runs first.
pub fn run_bench(
    base: &str,
    ca_pem: Option<&[u8]>,
    identity: &IdentityCredential,
    cfg: &BenchConfig,
) -> Result<BenchReport, ClientError> {
    if cfg.repetitions == 0 || cfg.delays_ms.is_empty() || cfg.modes.is_empty() {
        return Err(ClientError::Bench("need at least one delay, mode and repetition".into()));
    }
    let admin = GatewayClient::new(base, ca_pem)?;
    let mut report = BenchReport::default();
    for &delay in &cfg.delays_ms {
        prepare(&admin, delay)?;
        for rep in 0..cfg.repetitions {
            let mut modes = cfg.modes.clone();
            if rep % 2 == 1 {
                modes.reverse();
            }
            for mode in modes {
                report.runs.push(run_once(base, ca_pem, identity, cfg, mode, delay, rep)?);
            }
        }
    }
    Ok(report)
}
