use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use mi_dialogue::model::Condition;
use mi_dialogue::pool::{load_corpus, PoolBuilder};

use mi_dialogue_server::analysis::analyze_conditions;
use mi_dialogue_server::config::ServiceConfig;
use mi_dialogue_server::engine::{build_embedder, build_gateway, build_tracker, load_registry, Engine};
use mi_dialogue_server::http::router;
use mi_dialogue_server::session::SessionManager;
use mi_dialogue_server::ServiceError;

#[derive(Parser)]
#[command(name = "mi-dialogue", version, about = "Schema-guided MI counselor dialogue engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP session service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Talk to the counselor in the terminal. `/end` ends and saves.
    Chat {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "ours")]
        condition: Condition,
    },
    /// Build the pseudo-strategy pool from an annotated corpus.
    BuildPool {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute per-condition MITI metrics from logs and annotations.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ServiceConfig, ServiceError> {
    match path {
        Some(p) => ServiceConfig::load(p),
        None => Ok(ServiceConfig::default()),
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    match cli.command {
        Command::Serve { config, bind } => {
            let cfg = load_config(config.as_ref())?;
            let engine = Arc::new(Engine::from_config(&cfg)?);
            let manager = Arc::new(SessionManager::open(
                engine,
                &cfg.paths.data_dir,
                cfg.server.min_user_utterances,
            )?);
            let manager = if cfg.server.record_timestamps {
                manager
            } else {
                Arc::new(Arc::into_inner(manager).expect("sole owner").with_clock(|| None))
            };
            let app = router(manager, cfg.paths.static_dir.clone());
            let bind = bind.unwrap_or(cfg.server.bind);
            let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Config(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .map_err(|e| ServiceError::Config(format!("bind {bind}: {e}")))?;
                tracing::info!(%bind, "listening");
                axum::serve(listener, app)
                    .await
                    .map_err(|e| ServiceError::Storage(e.to_string()))
            })
        }
        Command::Chat { config, condition } => {
            let cfg = load_config(config.as_ref())?;
            let engine = Arc::new(Engine::from_config(&cfg)?);
            let manager = SessionManager::open(engine, &cfg.paths.data_dir, cfg.server.min_user_utterances)?;
            let session = manager.create_session(condition, None)?;
            let id = session.session_id;
            println!("session {id} ({}); type /end to finish", condition.as_str());
            let stdin = std::io::stdin();
            let mut lines = stdin.lock().lines();
            loop {
                print!("client> ");
                std::io::stdout().flush().ok();
                let Some(Ok(line)) = lines.next() else { break };
                let line = line.trim();
                if line == "/end" {
                    break;
                }
                if line.is_empty() {
                    continue;
                }
                match manager.post_utterance(&id, line) {
                    Ok(reply) => println!("counselor> {}", reply.counselor_text),
                    Err(e) => eprintln!("error: {e}"),
                }
            }
            let end = manager.end_session(&id)?;
            println!(
                "saved {} ({} client utterances, protocol met: {})",
                end.log_path.display(),
                end.user_utterance_count,
                end.protocol_met
            );
            Ok(())
        }
        Command::BuildPool { config, corpus, out } => {
            let cfg = load_config(config.as_ref())?;
            let gateway = build_gateway(&cfg)?;
            let registry = load_registry(&cfg)?;
            let embedder = build_embedder(&cfg);
            let tracker = build_tracker(&cfg, gateway.clone(), registry.clone())?;
            let dialogues = load_corpus(&corpus).map_err(|e| ServiceError::Config(e.to_string()))?;
            let builder = PoolBuilder::new(&tracker, gateway, &registry, embedder.as_ref());
            let (pool, report) = builder
                .build(&dialogues)
                .map_err(|e| ServiceError::Storage(e.to_string()))?;
            pool.save(&out).map_err(|e| ServiceError::Storage(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Analyze {
            config,
            logs,
            annotations,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let (_, comparison) = analyze_conditions(&logs, &annotations, &cfg.analyzer)?;
            std::fs::write(&out, &comparison.csv).map_err(|e| ServiceError::Storage(format!("{}: {e}", out.display())))?;
            print!("{}", comparison.text);
            Ok(())
        }
    }
}
