//! `serve`, and the commands that talk to a running service.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use cstgn_client::Client;
use cstgn_core::checkpoint;
use cstgn_core::interactive::SessionConfig;
use cstgn_protocol::GraphParams;
use cstgn_service::{serve, AppState, ServiceConfig};
use serde::Serialize;
use tracing::{error, info};

use crate::args::{parse_ids, ConfigFile, GraphArgs};
use crate::user_error;

#[derive(Debug, Args)]
pub struct ServeCmd {
    #[arg(long, env = "CSTGN_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// 0 picks a free port; the bound address is printed either way.
    #[arg(long, env = "CSTGN_PORT")]
    pub port: Option<u16>,
    #[arg(long, env = "CSTGN_HOST", default_value = "127.0.0.1")]
    pub host: String,
    /// Meta step folded in at finalize [default: 0.5].
    #[arg(long, env = "CSTGN_ALPHA")]
    pub alpha: Option<f64>,
    /// Default threshold of session queries [default: 0.5].
    #[arg(long, env = "CSTGN_ETA")]
    pub eta: Option<f64>,
    /// Gradient steps per feedback round [default: 5].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Feedback learning rate [default: 0.01].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Dropout seed of every session [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Most nodes in one graph view.
    #[arg(long, default_value_t = 500)]
    pub node_budget: usize,
    /// Seconds before an untouched session is discarded.
    #[arg(long, default_value_t = 1800)]
    pub idle_timeout: u64,
}

async fn shutdown_signal() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        error!(error = %e, "cannot listen for ctrl-c");
        std::future::pending::<()>().await;
    }
    info!("shutting down");
}

pub fn serve_cmd(a: &ServeCmd) -> Result<()> {
    let file = ConfigFile::load(a.graph.config.as_deref())?;
    let d = SessionConfig::default();
    let session = SessionConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(d.epochs),
        lr: a.lr.or(file.lr).unwrap_or(d.lr),
        alpha: a.alpha.or(file.alpha).unwrap_or(d.alpha),
        eta: a.eta.or(file.eta).unwrap_or(d.eta),
        seed: a.seed.or(file.seed).unwrap_or(d.seed),
    };
    if session.epochs < 1 || !(0.0..=1.0).contains(&session.alpha) || !(0.0..=1.0).contains(&session.eta) {
        return Err(user_error("need epochs >= 1 and alpha, eta in [0, 1]"));
    }
    let config = ServiceConfig {
        session,
        node_budget: a.node_budget,
        idle_timeout: Duration::from_secs(a.idle_timeout),
    };
    let port = a.port.or(file.port).unwrap_or(8080);

    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), port))
            .await
            .map_err(|e| user_error(format!("cannot bind {}:{port}: {e}", a.host)))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;

        let state = AppState::new(config);
        let (fail_tx, fail_rx) = tokio::sync::oneshot::channel::<anyhow::Error>();
        {
            let state = state.clone();
            let ckpt = a.checkpoint.clone();
            let graph = a.graph.clone();
            tokio::task::spawn_blocking(move || {
                let loaded = checkpoint::load(&ckpt)
                    .with_context(|| format!("loading checkpoint {}", ckpt.display()))
                    .and_then(|(model, _)| Ok((model, graph.load(&file)?)))
                    .and_then(|(model, g)| Ok(state.install(g, model)?));
                match loaded {
                    Ok(()) => info!("ready"),
                    Err(e) => {
                        let _ = fail_tx.send(e);
                    }
                }
            });
        }
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(serve(listener, state, async move {
            tokio::select! {
                _ = shutdown_signal() => {}
                _ = stop_rx => {}
            }
        }));
        let failure = fail_rx.await.ok();
        if failure.is_some() {
            let _ = stop_tx.send(());
        }
        server.await.context("server task")??;
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })
}

#[derive(Debug, Args)]
pub struct Remote {
    /// Base URL of a running service.
    #[arg(long, env = "CSTGN_URL", default_value = "http://127.0.0.1:8080", global = true)]
    pub url: String,
}

#[derive(Debug, Subcommand)]
pub enum SessionCmd {
    /// Starts a session from the current meta model.
    Create,
    /// Finds the community of the given nodes.
    Query {
        id: String,
        #[arg(long, required = true, num_args = 1..)]
        nodes: Vec<String>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Labels nodes of the last result and adapts the session.
    Feedback {
        id: String,
        /// `node=1` for inside, `node=0` for outside. Repeatable.
        #[arg(long = "label", required = true, num_args = 1..)]
        labels: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Folds the session into the meta model and closes it.
    Finalize { id: String },
}

#[derive(Debug, Args)]
pub struct GraphCmd {
    /// One-based snapshot [default: latest].
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub center: Option<String>,
    #[arg(long)]
    pub radius: Option<usize>,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_labels(raw: &[String]) -> Result<BTreeMap<String, i64>> {
    raw.iter()
        .flat_map(|s| s.split(','))
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (id, l) = s
                .rsplit_once('=')
                .ok_or_else(|| user_error(format!("label {s:?} is not node=0|1")))?;
            let l: i64 = l
                .trim()
                .parse()
                .map_err(|_| user_error(format!("label {s:?} is not node=0|1")))?;
            Ok((id.trim().to_string(), l))
        })
        .collect()
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .context("starting runtime")
}

pub fn session(remote: &Remote, cmd: &SessionCmd) -> Result<()> {
    let c = Client::new(&remote.url);
    runtime()?.block_on(async {
        match cmd {
            SessionCmd::Create => {
                let id = c.create_session().await?;
                print_json(&cstgn_protocol::CreateSessionResponse { session_id: id })
            }
            SessionCmd::Query { id, nodes, eta } => {
                print_json(&c.query(id, &parse_ids(nodes), *eta).await?)
            }
            SessionCmd::Feedback { id, labels, epochs } => {
                let trace = c.feedback(id, parse_labels(labels)?, *epochs).await?;
                print_json(&cstgn_protocol::FeedbackResponse { loss_trace: trace })
            }
            SessionCmd::Finalize { id } => {
                let norm = c.finalize(id).await?;
                print_json(&cstgn_protocol::FinalizeResponse { meta_update_norm: norm })
            }
        }
    })
}

/// Exits with status 1 unless the service reports ready.
pub fn health(remote: &Remote) -> Result<()> {
    let c = Client::new(&remote.url);
    let h = runtime()?.block_on(c.health())?;
    print_json(&h)?;
    if h.status != cstgn_protocol::HealthStatus::Ready {
        return Err(user_error("service is not ready"));
    }
    Ok(())
}

pub fn graph(remote: &Remote, a: &GraphCmd) -> Result<()> {
    let c = Client::new(&remote.url);
    let params = GraphParams {
        t: a.t,
        center: a.center.clone(),
        radius: a.radius,
    };
    print_json(&runtime()?.block_on(c.graph(&params))?)
}
