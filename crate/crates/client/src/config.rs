//! Client settings, the local identity, and the token cache.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use gridgate_core::cert::{
    convert_p12_to_pem, load_private_key_file, CertError, Certificate, IdentityCredential, PrivateKey,
};
use serde::{Deserialize, Serialize};

use crate::error::ClientError;

pub const ENV_P12_PASSWORD: &str = "GRIDGATE_P12_PASSWORD";
pub const DEFAULT_LIFETIME_HOURS: i64 = 12;

/// Settings from an optional TOML file; command-line flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub gateway: Option<String>,
    /// CA certificate used to verify the gateway.
    pub ca: Option<PathBuf>,
    pub cert: Option<PathBuf>,
    pub key: Option<PathBuf>,
    pub p12: Option<PathBuf>,
    pub vo: Option<String>,
    pub lifetime_hours: Option<i64>,
    pub token_cache: Option<PathBuf>,
}

impl ClientConfig {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ClientError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.ca, &mut cfg.cert, &mut cfg.key, &mut cfg.p12, &mut cfg.token_cache]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Fields set in `other` replace ours.
    pub fn overlay(mut self, other: ClientConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(gateway, ca, cert, key, p12, vo, lifetime_hours, token_cache);
        self
    }

    pub fn gateway(&self) -> Result<&str, ClientError> {
        self.gateway
            .as_deref()
            .ok_or_else(|| ClientError::Usage("no gateway URL (use --gateway)".into()))
    }

    pub fn lifetime(&self) -> Duration {
        Duration::hours(self.lifetime_hours.unwrap_or(DEFAULT_LIFETIME_HOURS))
    }

    pub fn token_cache_path(&self) -> PathBuf {
        self.token_cache.clone().unwrap_or_else(|| {
            let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
            home.join(".gridgate").join("token.json")
        })
    }

    pub fn ca_pem(&self) -> Result<Option<Vec<u8>>, ClientError> {
        self.ca
            .as_ref()
            .map(|p| std::fs::read(p).map_err(|e| ClientError::Config(format!("{}: {e}", p.display()))))
            .transpose()
    }

    /// The user's credential, from cert and key PEM files or from a p12
    /// archive whose password is in `GRIDGATE_P12_PASSWORD`.
    pub fn identity(&self) -> Result<IdentityCredential, ClientError> {
        match (&self.cert, &self.key, &self.p12) {
            (Some(cert), Some(key), _) => {
                let private = load_private_key_file(key)?;
                let cert = Certificate::from_pem(&std::fs::read(cert)?)?;
                Ok(IdentityCredential::new(cert, private)?)
            }
            (_, _, Some(p12)) => {
                require_owner_only(p12)?;
                let password = zeroize::Zeroizing::new(std::env::var(ENV_P12_PASSWORD).unwrap_or_default());
                let bytes = zeroize::Zeroizing::new(std::fs::read(p12)?);
                let pair = convert_p12_to_pem(&bytes, &password)?;
                let private = PrivateKey::from_pem(pair.key_pem.as_bytes())?;
                Ok(IdentityCredential::new(Certificate::from_pem(pair.cert_pem.as_bytes())?, private)?)
            }
            _ => Err(ClientError::Usage(
                "no identity: give --cert and --key, or --p12".into(),
            )),
        }
    }
}

/// Key material must not be readable by group or others.
pub fn require_owner_only(path: &Path) -> Result<(), ClientError> {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(path)?.permissions().mode() & 0o777;
        if mode & 0o077 != 0 {
            return Err(CertError::InsecureKeyFile {
                path: path.display().to_string(),
                mode,
            }
            .into());
        }
    }
    Ok(())
}

/// The bearer token from the last delegation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedToken {
    pub gateway: String,
    pub token: String,
    pub expires_at: DateTime<Utc>,
}

impl CachedToken {
    pub fn load(path: &Path, gateway: &str, now: DateTime<Utc>) -> Option<Self> {
        let text = std::fs::read_to_string(path).ok()?;
        let cached: Self = serde_json::from_str(&text).ok()?;
        (cached.gateway == gateway && now < cached.expires_at).then_some(cached)
    }

    /// Written with owner-only permissions.
    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut options = std::fs::OpenOptions::new();
        options.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
            options.mode(0o600);
            let file = options.open(path)?;
            file.set_permissions(std::fs::Permissions::from_mode(0o600))?;
        }
        let text = serde_json::to_string_pretty(self).expect("json");
        std::fs::write(path, text)?;
        Ok(())
    }
}
