//! The gateway server: delegation endpoints, proxy storage, and the job API
//! over the simulated grid backend, served over HTTPS only.

pub mod api;
pub mod config;
pub mod journal;
pub mod state;
pub mod testenv;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use gridgate_core::backend::{MyProxyLink, MyProxySim, Voms, Wms, WmsError};
use gridgate_core::cert::{CertError, IdentityCredential};
use gridgate_core::delegation::SessionStore;
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto;
use hyper_util::service::TowerToHyperService;
use openssl::pkey::PKey;
use openssl::ssl::{Ssl, SslAcceptor, SslMethod};
use openssl::x509::X509;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio_openssl::SslStream;

pub use config::{ConfigFile, GatewayOptions};
use journal::Journal;
use state::{ApiSessions, AppState, ProxyStore};

const SWEEP_INTERVAL: std::time::Duration = std::time::Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("TLS setup: {0}")]
    Tls(String),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Wms(#[from] WmsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<openssl::error::ErrorStack> for GatewayError {
    fn from(e: openssl::error::ErrorStack) -> Self {
        GatewayError::Tls(e.to_string())
    }
}

fn tls_acceptor(identity: &IdentityCredential) -> Result<Arc<SslAcceptor>, GatewayError> {
    let cert = X509::from_der(identity.certificate().to_der())?;
    let key = PKey::private_key_from_pkcs8(&identity.private_key().to_pkcs8_der()?)?;
    let mut builder = SslAcceptor::mozilla_intermediate_v5(SslMethod::tls_server())?;
    builder.set_certificate(&cert)?;
    builder.set_private_key(&key)?;
    builder.check_private_key()?;
    Ok(Arc::new(builder.build()))
}

/// Builds the shared state and replays the journal. Must run inside a tokio
/// runtime.
pub fn build_state(opts: &GatewayOptions) -> Result<Arc<AppState>, GatewayError> {
    let voms = Voms::new(opts.registry.clone(), opts.trust_anchors.clone())?;
    let sim = Arc::new(MyProxySim::new(opts.trust_anchors.clone()));
    let myproxy = Arc::new(MyProxyLink::new(sim, opts.myproxy_delay_ms));
    let wms = Wms::new(opts.wms.clone(), voms.public_key().clone(), opts.clock.clone(), Some(myproxy.clone()))?;
    if let Some(path) = &opts.journal {
        let records = Journal::replay(path)?;
        // the sink goes in first so restored aborts are journalled too
        wms.set_event_sink(Arc::new(Journal::open(path)?));
        if !records.is_empty() {
            let n = wms.restore(records)?;
            tracing::info!(jobs = n, "restored jobs from journal");
        }
    }
    Ok(Arc::new(AppState {
        clock: opts.clock.clone(),
        trust_anchors: opts.trust_anchors.clone(),
        delegation: SessionStore::new(opts.trust_anchors.clone()).with_key_strength(opts.key_strength),
        proxies: ProxyStore::default(),
        sessions: ApiSessions::default(),
        voms,
        wms,
        myproxy,
        admin: opts.admin,
        key_strength: opts.key_strength,
    }))
}

/// A gateway bound to its port but not yet accepting.
pub struct BoundGateway {
    listener: TcpListener,
    acceptor: Arc<SslAcceptor>,
    state: Arc<AppState>,
    ui_dir: Option<PathBuf>,
}

impl BoundGateway {
    pub async fn bind(opts: GatewayOptions) -> Result<Self, GatewayError> {
        let acceptor = tls_acceptor(&opts.server_identity)?;
        let state = build_state(&opts)?;
        let listener = TcpListener::bind(opts.listen).await?;
        Ok(Self {
            listener,
            acceptor,
            state,
            ui_dir: opts.ui_dir,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    /// Accepts connections until `shutdown` resolves.
    pub async fn serve(self, shutdown: impl Future<Output = ()>) {
        let app = api::router(self.state.clone(), self.ui_dir);
        let sweeper = tokio::spawn(sweep(self.state.clone()));
        tokio::pin!(shutdown);
        loop {
            let (tcp, peer) = tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.listener.accept() => match accepted {
                    Ok(c) => c,
                    Err(e) => {
                        tracing::warn!("accept failed: {e}");
                        continue;
                    }
                },
            };
            let acceptor = self.acceptor.clone();
            let service = TowerToHyperService::new(app.clone());
            tokio::spawn(async move {
                let ssl = match Ssl::new(acceptor.context()) {
                    Ok(s) => s,
                    Err(e) => return tracing::warn!("TLS session setup failed: {e}"),
                };
                let Ok(mut stream) = SslStream::new(ssl, tcp) else {
                    return;
                };
                if let Err(e) = std::pin::Pin::new(&mut stream).accept().await {
                    tracing::debug!(%peer, "TLS handshake failed: {e}");
                    return;
                }
                if let Err(e) = auto::Builder::new(TokioExecutor::new())
                    .serve_connection(TokioIo::new(stream), service)
                    .await
                {
                    tracing::debug!(%peer, "connection ended: {e}");
                }
            });
        }
        sweeper.abort();
    }
}

async fn sweep(state: Arc<AppState>) {
    let mut ticker = tokio::time::interval(SWEEP_INTERVAL);
    loop {
        ticker.tick().await;
        let now = state.now();
        let expired = state.delegation.expire_stale(now);
        let tokens = state.sessions.sweep(now);
        if expired + tokens > 0 {
            tracing::debug!(expired, tokens, "swept stale sessions");
        }
    }
}

/// A gateway on its own runtime, for embedding in tests and tools. Stops
/// when dropped.
pub struct RunningGateway {
    runtime: Option<tokio::runtime::Runtime>,
    shutdown: watch::Sender<bool>,
    addr: SocketAddr,
    state: Arc<AppState>,
}

impl RunningGateway {
    pub fn start(opts: GatewayOptions) -> Result<Self, GatewayError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .thread_name("gridgate")
            .build()?;
        let bound = runtime.block_on(BoundGateway::bind(opts))?;
        let addr = bound.local_addr()?;
        let state = bound.state().clone();
        let (shutdown, mut rx) = watch::channel(false);
        runtime.spawn(bound.serve(async move {
            let _ = rx.wait_for(|stop| *stop).await;
        }));
        Ok(Self {
            runtime: Some(runtime),
            shutdown,
            addr,
            state,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `https://localhost:PORT`, matching the test server certificate.
    pub fn url(&self) -> String {
        format!("https://localhost:{}", self.addr.port())
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    pub fn handle(&self) -> tokio::runtime::Handle {
        self.runtime.as_ref().expect("running").handle().clone()
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        let _ = self.shutdown.send(true);
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_timeout(std::time::Duration::from_secs(2));
        }
    }
}

impl Drop for RunningGateway {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}
