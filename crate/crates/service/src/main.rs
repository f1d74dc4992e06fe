use std::error::Error;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::info;

use melodyevo::pipeline::{CorpusContext, PipelineConfig};
use melodyevo::score_store::{ScoreStore, SharedStore};
use melodyevo_service::{router, AppState};

/// Serve pending melodies for scoring and run training and generation jobs.
#[derive(Debug, Parser)]
#[command(name = "melodyevo-service", version)]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// TOML pipeline settings; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Score store file (overrides the config).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Model file written by training and read by generation (overrides the config).
    #[arg(long)]
    model: Option<PathBuf>,
    /// ABC file or directory (overrides the config).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory of the built scoring UI, served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match serve(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(args: Args) -> Result<(), Box<dyn Error>> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_toml_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(store) = args.store {
        config.store_path = store;
    }
    if let Some(model) = args.model {
        config.model_path = model;
    }
    if let Some(corpus) = args.corpus {
        config.corpus_path = corpus;
    }
    config.validate()?;
    if let Some(dir) = config.store_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let store = ScoreStore::open(&config.store_path)?;
    let ctx = CorpusContext::load(&config.corpus_path)?;
    info!(
        "store {} ({} melodies), corpus {} ({} tunes)",
        config.store_path.display(),
        store.len(),
        config.corpus_path.display(),
        ctx.corpus.tunes.len()
    );
    let app = router(
        AppState::new(SharedStore::new(store), ctx, config),
        args.static_dir.as_deref(),
    );
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse()?;

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
