use std::path::PathBuf;
use std::process::ExitCode;

use chrono::Duration;
use clap::{Parser, Subcommand, ValueEnum};
use gridgate_client::bench::{run_bench, BenchConfig, BenchMode};
use gridgate_client::commands::{cmd_cancel, cmd_convert, cmd_delegate, cmd_output, cmd_renew, cmd_status, cmd_submit};
use gridgate_client::config::ENV_P12_PASSWORD;
use gridgate_client::{ClientConfig, ClientError};

#[derive(Parser)]
#[command(name = "gridgate-client", version, about = "Client for the gridgate job gateway")]
struct Cli {
    /// Gateway base URL, e.g. https://localhost:8443
    #[arg(long, global = true)]
    gateway: Option<String>,
    /// CA certificate that signed the gateway's certificate.
    #[arg(long, global = true)]
    ca: Option<PathBuf>,
    #[arg(long, global = true)]
    cert: Option<PathBuf>,
    #[arg(long, global = true)]
    key: Option<PathBuf>,
    /// PKCS#12 identity; its password is read from GRIDGATE_P12_PASSWORD.
    #[arg(long, global = true)]
    p12: Option<PathBuf>,
    /// TOML file with any of the above plus vo, lifetime_hours, token_cache.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Local,
    External,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Delegate a proxy to the gateway and start a session.
    Delegate {
        /// Proxy lifetime in hours.
        #[arg(long)]
        hours: Option<i64>,
    },
    /// Submit a job description with an optional input directory.
    Submit {
        jdl: PathBuf,
        #[arg(long)]
        sandbox: Option<PathBuf>,
        #[arg(long)]
        vo: Option<String>,
        /// Register a credential-store account for proxy renewal.
        #[arg(long, requires = "myproxy_password")]
        myproxy_user: Option<String>,
        #[arg(long, env = "GRIDGATE_MYPROXY_PASSWORD", hide_env_values = true)]
        myproxy_password: Option<String>,
    },
    /// Show all jobs, or one.
    Status { id: Option<String> },
    /// Download and unpack a finished job's output.
    Output {
        id: String,
        #[arg(long, default_value = ".")]
        dest: PathBuf,
    },
    /// Terminate a job (cancel if running, then clear).
    Cancel { id: String },
    /// Refresh a running job's proxy from the credential store.
    Renew { id: String },
    /// Convert a .p12 archive to PEM files through the gateway.
    Convert {
        archive: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Time the job cycle with local delegation against the credential-store flow.
    Bench {
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Injected credential-store delay in ms; repeat for several settings.
        #[arg(long = "delay", default_values_t = [10u64, 50, 200])]
        delays: Vec<u64>,
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
        #[arg(long)]
        vo: Option<String>,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_from(cli: &Cli) -> Result<ClientConfig, ClientError> {
    let file = match &cli.config {
        Some(path) => ClientConfig::load(path)?,
        None => ClientConfig::default(),
    };
    Ok(file.overlay(ClientConfig {
        gateway: cli.gateway.clone(),
        ca: cli.ca.clone(),
        cert: cli.cert.clone(),
        key: cli.key.clone(),
        p12: cli.p12.clone(),
        ..ClientConfig::default()
    }))
}

fn run(cli: Cli) -> Result<(), ClientError> {
    let config = config_from(&cli)?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Delegate { hours } => {
            cmd_delegate(&config, hours.map(Duration::hours), &mut out)?;
        }
        Command::Submit {
            jdl,
            sandbox,
            vo,
            myproxy_user,
            myproxy_password,
        } => {
            let renewal = myproxy_user.as_deref().zip(myproxy_password.as_deref());
            cmd_submit(&config, &jdl, sandbox.as_deref(), vo.as_deref(), renewal, &mut out)?;
        }
        Command::Status { id } => {
            cmd_status(&config, id.as_deref(), &mut out)?;
        }
        Command::Output { id, dest } => {
            cmd_output(&config, &id, &dest, &mut out)?;
        }
        Command::Cancel { id } => {
            cmd_cancel(&config, &id, &mut out)?;
        }
        Command::Renew { id } => {
            cmd_renew(&config, &id, &mut out)?;
        }
        Command::Convert { archive, out: dir } => {
            let password = std::env::var(ENV_P12_PASSWORD).unwrap_or_default();
            cmd_convert(&config, &archive, &password, &dir, &mut out)?;
        }
        Command::Bench {
            mode,
            delays,
            repetitions,
            vo,
            out: csv_path,
        } => {
            let identity = config.identity()?;
            let mut cfg = BenchConfig {
                delays_ms: delays,
                repetitions,
                modes: match mode {
                    ModeArg::Local => vec![BenchMode::LocalDelegation],
                    ModeArg::External => vec![BenchMode::ExternalMyproxy],
                    ModeArg::Both => vec![BenchMode::LocalDelegation, BenchMode::ExternalMyproxy],
                },
                lifetime: config.lifetime(),
                ..BenchConfig::default()
            };
            if let Some(vo) = vo.or(config.vo.clone()) {
                cfg.vo = vo;
            }
            let report = run_bench(config.gateway()?, config.ca_pem()?.as_deref(), &identity, &cfg)?;
            match csv_path {
                Some(path) => report.write_csv(std::fs::File::create(path)?)?,
                None => report.write_csv(&mut out)?,
            }
            report.write_summary(&mut std::io::stderr())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridgate-client: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
