//! `cstgn`: train, query and evaluate temporal community search models, and
//! run or talk to the interactive search service.
//!
//! Exit status is 0 on success, 1 for a user error (bad flags, missing or
//! malformed files, unknown ids, a refused request) and 2 for an internal
//! failure.

mod args;
mod local;
mod remote;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cstgn_client::ClientError;

#[derive(Debug, Parser)]
#[command(name = "cstgn", version, about = "Temporal community search with a query-driven graph network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Loads a graph and prints its snapshot statistics.
    Ingest(local::IngestArgs),
    /// Trains a model and writes a checkpoint and a metric trace.
    Train(local::TrainCmd),
    /// Finds the community of a set of query nodes.
    Query(local::QueryCmd),
    /// Scores a checkpoint on the test queries.
    Eval(local::EvalCmd),
    /// Runs ablation_gru, snapshot_count, eta_sweep or hidden_sweep.
    Experiment(local::ExperimentCmd),
    /// Runs the HTTP service.
    Serve(remote::ServeCmd),
    /// Drives an interactive session on a running service.
    Session {
        #[command(flatten)]
        remote: remote::Remote,
        #[command(subcommand)]
        command: remote::SessionCmd,
    },
    /// Checks that a running service is ready.
    Health {
        #[command(flatten)]
        remote: remote::Remote,
    },
    /// Fetches a snapshot view from a running service.
    Graph {
        #[command(flatten)]
        remote: remote::Remote,
        #[command(flatten)]
        args: remote::GraphCmd,
    },
}

/// A failure caused by the invocation rather than by this program.
#[derive(Debug)]
struct UserError(String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub(crate) fn user_error(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<cstgn_core::Error>() {
            use cstgn_core::Error as E;
            return match e {
                E::Shape { .. } | E::Numeric(_) | E::Contract(_) => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<ClientError>() {
            return match e {
                ClientError::Api { status, .. } if status.is_server_error() && status.as_u16() != 503 => 2,
                ClientError::Unexpected { .. } => 2,
                _ => 1,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => local::ingest(&a),
        Command::Train(a) => local::train(&a),
        Command::Query(a) => local::query(&a),
        Command::Eval(a) => local::eval(&a),
        Command::Experiment(a) => local::experiment(&a),
        Command::Serve(a) => remote::serve_cmd(&a),
        Command::Session { remote, command } => remote::session(&remote, &command),
        Command::Health { remote } => remote::health(&remote),
        Command::Graph { remote, args } => remote::graph(&remote, &args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
