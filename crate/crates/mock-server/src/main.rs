use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

use btdpo_mock_server::{serve, ServerSpec};

/// Serves deterministic translator, student, scorer and trainer mocks.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// JSON file with the mock tables; defaults to empty tables.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let spec: ServerSpec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ServerSpec::default(),
    };
    serve(
        spec,
        args.addr,
        |addr, _| println!("listening on http://{addr}"),
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    )
    .await?;
    Ok(())
}
