//! Gateway configuration: a TOML file plus environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gridgate_core::backend::{Clock, SystemClock, Timetable, VoRegistry, WmsConfig, WmsMode};
use gridgate_core::cert::{Certificate, IdentityCredential, DEFAULT_STRENGTH, SUPPORTED_STRENGTHS};
use serde::Deserialize;

use crate::GatewayError;

pub const ENV_ADDR: &str = "GRIDGATE_ADDR";
pub const ENV_MODE: &str = "GRIDGATE_MODE";
pub const ENV_MYPROXY_DELAY: &str = "GRIDGATE_MYPROXY_DELAY_MS";

/// The file format. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub tls_cert: PathBuf,
    pub tls_key: PathBuf,
    /// A PEM file or a directory of PEM files.
    pub trust_anchors: PathBuf,
    pub vo_registry: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: WmsMode,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_wall_limit")]
    pub wall_limit_seconds: u64,
    #[serde(default = "default_step")]
    pub simulate_step_ms: u64,
    pub timetable: Option<PathBuf>,
    #[serde(default)]
    pub myproxy_delay_ms: u64,
    pub journal: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub scratch_dir: Option<PathBuf>,
    #[serde(default)]
    pub admin: bool,
    #[serde(default = "default_strength")]
    pub key_strength: u32,
}

fn default_listen() -> String {
    "127.0.0.1:8443".into()
}
fn default_mode() -> WmsMode {
    WmsMode::Run
}
fn default_workers() -> usize {
    4
}
fn default_wall_limit() -> u64 {
    60
}
fn default_step() -> u64 {
    1000
}
fn default_strength() -> u32 {
    DEFAULT_STRENGTH
}

/// Everything the gateway needs, loaded and checked.
pub struct GatewayOptions {
    pub listen: SocketAddr,
    pub server_identity: IdentityCredential,
    pub trust_anchors: Vec<Certificate>,
    pub registry: VoRegistry,
    pub wms: WmsConfig,
    pub myproxy_delay_ms: u64,
    pub key_strength: u32,
    pub journal: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    /// Enables the /admin endpoints (benchmark knobs).
    pub admin: bool,
    pub clock: Arc<dyn Clock>,
}

impl GatewayOptions {
    /// Defaults around the essentials; simulate mode with a one second step.
    pub fn new(server_identity: IdentityCredential, trust_anchors: Vec<Certificate>, registry: VoRegistry) -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 0)),
            server_identity,
            trust_anchors,
            registry,
            wms: WmsConfig::simulate(chrono::Duration::seconds(1)),
            myproxy_delay_ms: 0,
            key_strength: DEFAULT_STRENGTH,
            journal: None,
            ui_dir: None,
            admin: false,
            clock: Arc::new(SystemClock),
        }
    }
}

fn config_err(msg: impl Into<String>) -> GatewayError {
    GatewayError::Config(msg.into())
}

/// Every certificate in a PEM file, or in every `*.pem` file of a directory.
pub fn load_certificates(path: &Path) -> Result<Vec<Certificate>, GatewayError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pem" || x == "crt"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for file in files {
        let text = std::fs::read(&file).map_err(|e| config_err(format!("{}: {e}", file.display())))?;
        let blocks = pem::parse_many(&text).map_err(|e| config_err(format!("{}: {e}", file.display())))?;
        for block in blocks.into_iter().filter(|b| b.tag() == "CERTIFICATE") {
            out.push(
                Certificate::from_der(block.into_contents())
                    .map_err(|e| config_err(format!("{}: {e}", file.display())))?,
            );
        }
    }
    if out.is_empty() {
        return Err(config_err(format!("no certificates in {}", path.display())));
    }
    Ok(out)
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.tls_cert);
        fix(&mut self.tls_key);
        fix(&mut self.trust_anchors);
        fix(&mut self.vo_registry);
        for p in [&mut self.timetable, &mut self.journal, &mut self.ui_dir, &mut self.scratch_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Applies GRIDGATE_ADDR, GRIDGATE_MODE and GRIDGATE_MYPROXY_DELAY_MS.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), GatewayError> {
        if let Some(addr) = get(ENV_ADDR) {
            self.listen = addr;
        }
        if let Some(mode) = get(ENV_MODE) {
            self.mode = match mode.to_ascii_lowercase().as_str() {
                "run" => WmsMode::Run,
                "simulate" => WmsMode::Simulate,
                other => return Err(config_err(format!("{ENV_MODE}: unknown mode {other:?}"))),
            };
        }
        if let Some(delay) = get(ENV_MYPROXY_DELAY) {
            self.myproxy_delay_ms = delay
                .parse()
                .map_err(|_| config_err(format!("{ENV_MYPROXY_DELAY}: not a number: {delay:?}")))?;
        }
        Ok(())
    }

    pub fn into_options(self) -> Result<GatewayOptions, GatewayError> {
        let listen: SocketAddr = self
            .listen
            .parse()
            .map_err(|e| config_err(format!("listen address {:?}: {e}", self.listen)))?;
        if !SUPPORTED_STRENGTHS.contains(&self.key_strength) {
            return Err(config_err(format!("unsupported key_strength {}", self.key_strength)));
        }
        let read = |p: &Path| std::fs::read(p).map_err(|e| config_err(format!("{}: {e}", p.display())));
        let server_identity = IdentityCredential::from_pem(&read(&self.tls_cert)?, &read(&self.tls_key)?)
            .map_err(|e| config_err(format!("TLS credential: {e}")))?;
        let trust_anchors = load_certificates(&self.trust_anchors)?;
        let registry = VoRegistry::load(&self.vo_registry).map_err(|e| config_err(e.to_string()))?;
        let timetable = match &self.timetable {
            Some(p) => Timetable::load(p).map_err(|e| config_err(e.to_string()))?,
            None => Timetable::default(),
        };
        Ok(GatewayOptions {
            listen,
            server_identity,
            trust_anchors,
            registry,
            wms: WmsConfig {
                mode: self.mode,
                workers: self.workers.max(1),
                wall_limit: std::time::Duration::from_secs(self.wall_limit_seconds),
                simulate_step: chrono::Duration::milliseconds(self.simulate_step_ms as i64),
                timetable,
                scratch_root: self.scratch_dir,
            },
            myproxy_delay_ms: self.myproxy_delay_ms,
            key_strength: self.key_strength,
            journal: self.journal,
            ui_dir: self.ui_dir,
            admin: self.admin,
            clock: Arc::new(SystemClock),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        tls_cert = "server.pem"
        tls_key = "server.key"
        trust_anchors = "anchors"
        vo_registry = "/etc/gridgate/vos.tsv"
    "#;

    #[test]
    fn defaults_and_path_resolution() {
        let mut cfg = ConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(cfg.listen, "127.0.0.1:8443");
        assert_eq!(cfg.mode, WmsMode::Run);
        assert_eq!(cfg.workers, 4);
        assert_eq!(cfg.wall_limit_seconds, 60);
        cfg.resolve_paths(Path::new("/srv/gg"));
        assert_eq!(cfg.tls_cert, Path::new("/srv/gg/server.pem"));
        assert_eq!(cfg.vo_registry, Path::new("/etc/gridgate/vos.tsv"));
    }

    #[test]
    fn env_overrides() {
        let mut cfg = ConfigFile::parse(MINIMAL).unwrap();
        let env = |k: &str| match k {
            ENV_ADDR => Some("0.0.0.0:9000".to_string()),
            ENV_MODE => Some("SIMULATE".to_string()),
            ENV_MYPROXY_DELAY => Some("50".to_string()),
            _ => None,
        };
        cfg.apply_env(env).unwrap();
        assert_eq!((cfg.listen.as_str(), cfg.mode, cfg.myproxy_delay_ms), ("0.0.0.0:9000", WmsMode::Simulate, 50));
        assert!(cfg.apply_env(|k| (k == ENV_MODE).then(|| "fast".to_string())).is_err());
        assert!(cfg.apply_env(|k| (k == ENV_MYPROXY_DELAY).then(|| "-3".to_string())).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse(&format!("{MINIMAL}\nlisten_port = 3")).is_err());
    }
}
