use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridgate_gateway::testenv::TestEnvironment;
use gridgate_gateway::{BoundGateway, ConfigFile, GatewayError};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "gridgate", version, about = "Grid job gateway with dynamic proxy delegation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTPS gateway.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a deterministic test CA, credentials, VO registry and config.
    GenTestCa {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn serve(config: PathBuf) -> Result<(), GatewayError> {
    let mut file = ConfigFile::load(&config)?;
    file.apply_env(|k| std::env::var(k).ok())?;
    let opts = file.into_options()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let gateway = BoundGateway::bind(opts).await?;
        tracing::info!(addr = %gateway.local_addr()?, "gateway listening (https)");
        gateway
            .serve(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await;
        Ok(())
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config } => serve(config),
        Command::GenTestCa { seed, out } => TestEnvironment::generate(seed)
            .and_then(|env| env.write(&out))
            .map(|config| println!("wrote {}", config.display())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridgate: {e}");
            ExitCode::FAILURE
        }
    }
}
