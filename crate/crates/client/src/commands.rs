//! The subcommands. Each writes its human-readable result to `out` and
//! returns the same data for callers that want it.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use gridgate_core::backend::{collect_dir, compress_sandbox, decompress_sandbox, unpack_into, JobStatus};
use gridgate_core::delegation::Transcript;

use crate::config::{require_owner_only, CachedToken, ClientConfig};
use crate::error::ClientError;
use crate::http::{DeleteReply, GatewayClient};

pub fn connect(config: &ClientConfig) -> Result<GatewayClient, ClientError> {
    GatewayClient::new(config.gateway()?, config.ca_pem()?.as_deref())
}

/// Delegates and caches the token. Returns the proxy expiry.
pub fn cmd_delegate(
    config: &ClientConfig,
    lifetime: Option<Duration>,
    out: &mut dyn Write,
) -> Result<DateTime<Utc>, ClientError> {
    let identity = config.identity()?;
    let mut client = connect(config)?;
    let expiry = delegate_and_cache(config, &mut client, &identity, lifetime.unwrap_or_else(|| config.lifetime()))?;
    writeln!(out, "delegated {} until {}", identity.dn(), expiry.to_rfc3339())?;
    Ok(expiry)
}

fn delegate_and_cache(
    config: &ClientConfig,
    client: &mut GatewayClient,
    identity: &gridgate_core::cert::IdentityCredential,
    lifetime: Duration,
) -> Result<DateTime<Utc>, ClientError> {
    let outcome = client.delegate(identity, lifetime, &mut Transcript::default())?;
    let token = client
        .token()
        .ok_or_else(|| ClientError::Transport("delegation reply carried no token".into()))?;
    let session = client.session()?;
    let expires_at = serde_json::from_value(session["expires_at"].clone())
        .map_err(|e| ClientError::Transport(format!("session reply: {e}")))?;
    CachedToken {
        gateway: client.base().to_string(),
        token: token.to_string(),
        expires_at,
    }
    .save(&config.token_cache_path())?;
    Ok(outcome.effective_expiry)
}

/// Runs `f` with a cached session; a missing or rejected token triggers one
/// re-delegation when an identity is configured.
fn with_session<T>(
    config: &ClientConfig,
    f: impl Fn(&GatewayClient) -> Result<T, ClientError>,
) -> Result<T, ClientError> {
    let mut client = connect(config)?;
    let cached = CachedToken::load(&config.token_cache_path(), client.base(), Utc::now());
    let had_token = cached.is_some();
    client.set_token(cached.map(|c| c.token));
    if had_token {
        match f(&client) {
            Err(ClientError::Api { status: 401, .. }) => {}
            other => return other,
        }
    }
    let identity = config.identity().map_err(|e| match e {
        ClientError::Usage(_) => ClientError::Usage("no session: run `delegate` first".into()),
        other => other,
    })?;
    delegate_and_cache(config, &mut client, &identity, config.lifetime())?;
    f(&client)
}

/// Submits; prints one id per line.
pub fn cmd_submit(
    config: &ClientConfig,
    jdl_path: &Path,
    sandbox_dir: Option<&Path>,
    vo: Option<&str>,
    renewal: Option<(&str, &str)>,
    out: &mut dyn Write,
) -> Result<Vec<String>, ClientError> {
    let jdl = std::fs::read_to_string(jdl_path)
        .map_err(|e| ClientError::Usage(format!("{}: {e}", jdl_path.display())))?;
    let files = match sandbox_dir {
        Some(dir) if !dir.is_dir() => {
            return Err(ClientError::Usage(format!("sandbox directory {} does not exist", dir.display())))
        }
        Some(dir) => collect_dir(dir)?,
        None => Vec::new(),
    };
    let archive = compress_sandbox(&files)?;
    let vo = vo
        .or(config.vo.as_deref())
        .ok_or_else(|| ClientError::Usage("no VO (use --vo)".into()))?;
    let outcome = with_session(config, |c| c.submit(&jdl, vo, archive.clone(), renewal))?;
    for w in &outcome.warnings {
        writeln!(out, "warning: {w}")?;
    }
    for id in &outcome.job_ids {
        writeln!(out, "{id}")?;
    }
    Ok(outcome.job_ids)
}

fn format_age(age: Duration) -> String {
    let s = age.num_seconds().max(0);
    match s {
        0..=59 => format!("{s}s"),
        60..=3599 => format!("{}m{:02}s", s / 60, s % 60),
        _ => format!("{}h{:02}m", s / 3600, (s % 3600) / 60),
    }
}

/// A table of (id, status, age); one row when `id` is given.
pub fn cmd_status(
    config: &ClientConfig,
    id: Option<&str>,
    out: &mut dyn Write,
) -> Result<Vec<(String, JobStatus)>, ClientError> {
    let now = Utc::now();
    let rows: Vec<(String, JobStatus, DateTime<Utc>)> = match id {
        Some(id) => {
            let job = with_session(config, |c| c.job(id))?;
            vec![(job.id, job.status, job.submitted_at)]
        }
        None => with_session(config, |c| c.jobs())?
            .into_iter()
            .map(|j| (j.id, j.status, j.submitted_at))
            .collect(),
    };
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(2).max(2);
    writeln!(out, "{:<width$}  {:<11}  AGE", "ID", "STATUS")?;
    for (id, status, at) in &rows {
        writeln!(out, "{id:<width$}  {:<11}  {}", status.as_str(), format_age(now - *at))?;
    }
    Ok(rows.into_iter().map(|(id, st, _)| (id, st)).collect())
}

/// Downloads the output archive and unpacks it into `dest`.
pub fn cmd_output(
    config: &ClientConfig,
    id: &str,
    dest: &Path,
    out: &mut dyn Write,
) -> Result<Vec<PathBuf>, ClientError> {
    let archive = with_session(config, |c| c.output(id))?;
    let files = decompress_sandbox(&archive)?;
    std::fs::create_dir_all(dest)?;
    unpack_into(dest, &files)?;
    let paths: Vec<PathBuf> = files.iter().map(|f| dest.join(&f.0)).collect();
    for p in &paths {
        writeln!(out, "{}", p.display())?;
    }
    Ok(paths)
}

/// Cancels (when still active) and clears.
pub fn cmd_cancel(config: &ClientConfig, id: &str, out: &mut dyn Write) -> Result<DeleteReply, ClientError> {
    let reply = with_session(config, |c| c.delete(id))?;
    if reply.cancelled {
        writeln!(out, "{id}: cancelled and cleared")?;
    } else {
        writeln!(
            out,
            "{id}: already terminal ({}); cleared",
            reply.previous_status.as_str()
        )?;
    }
    Ok(reply)
}

pub fn cmd_renew(config: &ClientConfig, id: &str, out: &mut dyn Write) -> Result<DateTime<Utc>, ClientError> {
    let expiry = with_session(config, |c| c.renew(id))?;
    writeln!(out, "{id}: proxy valid until {}", expiry.to_rfc3339())?;
    Ok(expiry)
}

/// Converts a p12 archive through the gateway, writing `usercert.pem` and
/// an owner-only `userkey.pem` into `out_dir`.
pub fn cmd_convert(
    config: &ClientConfig,
    p12: &Path,
    password: &str,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<(PathBuf, PathBuf), ClientError> {
    require_owner_only(p12)?;
    let bytes = std::fs::read(p12)?;
    let client = connect(config)?;
    let (cert_pem, key_pem) = client.convert(bytes, password)?;
    std::fs::create_dir_all(out_dir)?;
    let cert_path = out_dir.join("usercert.pem");
    let key_path = out_dir.join("userkey.pem");
    std::fs::write(&cert_path, cert_pem)?;
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
        options.mode(0o600);
        let mut file = options.open(&key_path)?;
        file.set_permissions(std::fs::Permissions::from_mode(0o600))?;
        file.write_all(key_pem.as_bytes())?;
    }
    #[cfg(not(unix))]
    options.open(&key_path)?.write_all(key_pem.as_bytes())?;
    writeln!(out, "{}\n{}", cert_path.display(), key_path.display())?;
    Ok((cert_path, key_path))
}
