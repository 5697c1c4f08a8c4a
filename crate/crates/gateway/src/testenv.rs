//! A complete, reproducible test deployment: CA, server and user
//! credentials, VO registry and a gateway configuration.

use std::io::Write;
use std::path::{Path, PathBuf};

use gridgate_core::backend::VoRegistry;
use gridgate_core::cert::{build_p12, DistinguishedName, IdentityCredential, TestCa};

use crate::GatewayError;

pub const ALICE_DN: &str = "/C=IT/O=GridGate Test/OU=Personal Certificate/CN=Alice Rossi";
pub const BOB_DN: &str = "/C=IT/O=GridGate Test/OU=Personal Certificate/CN=Bob Bianchi";
/// Password protecting the generated `.p12` files.
pub const P12_PASSWORD: &str = "gridgate-test";
pub const SERVER_HOSTS: [&str; 2] = ["localhost", "127.0.0.1"];

/// In-memory form of a test deployment.
pub struct TestEnvironment {
    pub ca: TestCa,
    pub server: IdentityCredential,
    pub alice: IdentityCredential,
    pub bob: IdentityCredential,
    pub registry: VoRegistry,
}

impl TestEnvironment {
    /// Same seed, same keys and certificates.
    pub fn generate(seed: u64) -> Result<Self, GatewayError> {
        let ca = TestCa::from_seed(seed)?;
        let server = ca.issue_server_seeded(&SERVER_HOSTS, seed)?;
        let alice_dn = DistinguishedName::parse(ALICE_DN)?;
        let bob_dn = DistinguishedName::parse(BOB_DN)?;
        let alice = ca.issue_user_seeded(&alice_dn, seed)?;
        let bob = ca.issue_user_seeded(&bob_dn, seed)?;
        let mut registry = VoRegistry::default();
        let add = |reg: &mut VoRegistry, vo: &str, dn: &DistinguishedName| {
            reg.add_member(vo, dn.clone()).map_err(|e| GatewayError::Config(e.to_string()))
        };
        add(&mut registry, "theophys", &alice_dn)?;
        add(&mut registry, "theophys", &bob_dn)?;
        add(&mut registry, "gilda", &alice_dn)?;
        Ok(Self {
            ca,
            server,
            alice,
            bob,
            registry,
        })
    }

    /// Writes everything under `out` and returns the configuration path.
    pub fn write(&self, out: &Path) -> Result<PathBuf, GatewayError> {
        std::fs::create_dir_all(out)?;
        write_file(&out.join("ca.pem"), self.ca.certificate().to_pem().as_bytes(), false)?;
        write_identity(out, "server", &self.server)?;
        for (name, identity) in [("alice", &self.alice), ("bob", &self.bob)] {
            write_identity(out, name, identity)?;
            let p12 = build_p12(identity, P12_PASSWORD, name, std::slice::from_ref(self.ca.certificate()))?;
            write_file(&out.join(format!("{name}.p12")), &p12, true)?;
        }
        write_file(&out.join("vos.tsv"), self.registry.render().as_bytes(), false)?;
        let config = out.join("gridgate.toml");
        write_file(&config, SAMPLE_CONFIG.as_bytes(), false)?;
        Ok(config)
    }
}

const SAMPLE_CONFIG: &str = r#"# Generated by `gridgate gen-test-ca`.
listen = "127.0.0.1:8443"
tls_cert = "server.pem"
tls_key = "server.key"
trust_anchors = "ca.pem"
vo_registry = "vos.tsv"
mode = "simulate"
simulate_step_ms = 1000
workers = 4
wall_limit_seconds = 60
myproxy_delay_ms = 0
journal = "journal.jsonl"
admin = false
"#;

fn write_identity(out: &Path, name: &str, identity: &IdentityCredential) -> Result<(), GatewayError> {
    write_file(&out.join(format!("{name}.pem")), identity.certificate().to_pem().as_bytes(), false)?;
    let key = identity.private_key().to_pem()?;
    write_file(&out.join(format!("{name}.key")), key.as_bytes(), true)
}

fn write_file(path: &Path, bytes: &[u8], secret: bool) -> Result<(), GatewayError> {
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
        let mode = if secret { 0o600 } else { 0o644 };
        options.mode(mode);
        let mut file = options.open(path)?;
        file.set_permissions(std::fs::Permissions::from_mode(mode))?;
        file.write_all(bytes)?;
    }
    #[cfg(not(unix))]
    {
        let _ = secret;
        options.open(path)?.write_all(bytes)?;
    }
    Ok(())
}
