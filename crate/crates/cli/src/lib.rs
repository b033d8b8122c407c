//! Command-line front end: the HTTP server, one-shot requests, index
//! builds, standalone compilation and a stdio mock adapter.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use interfaze_core::adapters::mock::{serve_lines, MockBehavior, MockSpec};
use interfaze_core::canonical::value_to_canonical;
use interfaze_core::compiler::{compile_context, CompileInput};
use interfaze_core::gateway::{CompletionRequest, Gateway, WireAttachment};
use interfaze_core::retrieval::{build_index_from_dir, IndexKind};
use interfaze_core::schema::{canonical_serialize, parse_state, render_prompt};
use interfaze_core::TokenBudget;

pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Parser)]
#[command(name = "interfaze", version, about = "Context-centric request runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the chat-completions endpoint.
    Serve {
        #[arg(long, env = "INTERFAZE_CONFIG")]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Answer one request and print the response body.
    Run {
        #[arg(long, env = "INTERFAZE_CONFIG")]
        config: PathBuf,
        #[arg(long)]
        query: String,
        /// Attach a file; repeatable.
        #[arg(long = "file")]
        files: Vec<PathBuf>,
        /// Attach a URL; repeatable.
        #[arg(long = "url")]
        urls: Vec<String>,
        /// Also write every executed step, with timings, to stderr.
        #[arg(long)]
        emit_trace: bool,
    },
    /// Standing index maintenance.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Compile a directory of state fragments against a query.
    Compile {
        #[arg(long)]
        fragments: PathBuf,
        #[arg(long)]
        query: String,
        /// JSON token budget; defaults apply when omitted.
        #[arg(long)]
        budgets: Option<PathBuf>,
        /// Print the canonical state instead of the rendered prompt.
        #[arg(long)]
        emit_json: bool,
    },
    /// Serve the line protocol on stdin/stdout from a mock spec.
    AdapterMock {
        /// Mock spec JSON; echoes requests when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    Build {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Provenance timestamp (RFC 3339); the current time by default.
        #[arg(long)]
        timestamp: Option<DateTime<Utc>>,
    },
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

pub fn router(gateway: Gateway) -> Router {
    Router::new().route(COMPLETIONS_PATH, post(completions)).with_state(gateway)
}

async fn completions(State(gateway): State<Gateway>, body: Bytes) -> Response {
    let reply = tokio::task::spawn_blocking(move || gateway.handle_completion(&body)).await;
    match reply {
        Ok(reply) => {
            let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, [(header::CONTENT_TYPE, "application/json")], reply.body).into_response()
        }
        Err(e) => {
            tracing::error!("request handler panicked: {e}");
            let body = r#"{"error":{"code":"INTERNAL","message":"request handler failed"}}"#;
            (StatusCode::INTERNAL_SERVER_ERROR, [(header::CONTENT_TYPE, "application/json")], body).into_response()
        }
    }
}

/// Runs `cli`, writing results to `out` and traces to `err`.
pub fn dispatch(cli: Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<(), Failure> {
    match cli.command {
        Command::Serve { config, port, host } => serve(&config, &host, port),
        Command::Run {
            config,
            query,
            files,
            urls,
            emit_trace,
        } => run(&config, &query, &files, urls, emit_trace, out, err),
        Command::Index {
            action: IndexAction::Build {
                kind,
                input,
                out: dest,
                timestamp,
            },
        } => index_build(&kind, &input, &dest, timestamp.unwrap_or_else(Utc::now), out),
        Command::Compile {
            fragments,
            query,
            budgets,
            emit_json,
        } => compile(&fragments, &query, budgets.as_deref(), emit_json, out),
        Command::AdapterMock { spec } => adapter_mock(spec.as_deref()),
    }
}

fn serve(config: &Path, host: &str, port: u16) -> Result<(), Failure> {
    let gateway = Gateway::from_path(config).map_err(config_err)?;
    let runtime = tokio::runtime::Runtime::new().map_err(runtime_err)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("cannot listen on {host}:{port}"))
            .map_err(runtime_err)?;
        tracing::info!("listening on {}", listener.local_addr().map_err(runtime_err)?);
        axum::serve(listener, router(gateway))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(runtime_err)
    })
}

fn run(
    config: &Path,
    query: &str,
    files: &[PathBuf],
    urls: Vec<String>,
    emit_trace: bool,
    out: &mut dyn std::io::Write,
    err: &mut dyn std::io::Write,
) -> Result<(), Failure> {
    let gateway = Gateway::from_path(config).map_err(config_err)?;
    let mut attachments = Vec::new();
    for path in files {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(runtime_err)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        attachments.push(WireAttachment::from_bytes(name, &bytes));
    }
    let request = CompletionRequest::user(query, attachments, urls);
    let body = serde_json::to_vec(&request).map_err(runtime_err)?;
    let id = interfaze_core::sha256_hex(&body);
    match gateway.run_request(&request, &id[..16]) {
        Ok((response, execution)) => {
            if emit_trace {
                for entry in execution.iter().flat_map(|e| &e.trace) {
                    writeln!(err, "{}", serde_json::to_string(entry).map_err(runtime_err)?).map_err(runtime_err)?;
                }
            }
            writeln!(out, "{}", value_to_canonical(&response)).map_err(runtime_err)
        }
        Err(e) => {
            if emit_trace {
                for entry in &e.trace {
                    writeln!(err, "{}", serde_json::to_string(entry).map_err(runtime_err)?).map_err(runtime_err)?;
                }
            }
            writeln!(out, "{}", value_to_canonical(&e.body())).map_err(runtime_err)?;
            Err(runtime_err(anyhow!("request failed with status {}: {e}", e.status)))
        }
    }
}

fn index_build(kind: &str, input: &Path, dest: &Path, timestamp: DateTime<Utc>, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    let kind: IndexKind = kind.parse().map_err(|e: String| config_err(anyhow!(e)))?;
    let index = build_index_from_dir(kind, input, timestamp).map_err(runtime_err)?;
    index.write_to(dest).map_err(runtime_err)?;
    writeln!(out, "indexed {} segments into {}", index.len(), dest.display()).map_err(runtime_err)
}

fn compile(fragments: &Path, query: &str, budgets: Option<&Path>, emit_json: bool, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    let budgets: TokenBudget = match budgets {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read budgets {}", path.display()))
                .map_err(config_err)?;
            serde_json::from_str(&text)
                .with_context(|| format!("budgets {} are not valid", path.display()))
                .map_err(config_err)?
        }
        None => TokenBudget::default(),
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fragments)
        .with_context(|| format!("cannot list {}", fragments.display()))
        .map_err(runtime_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut states = Vec::new();
    for path in &paths {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(runtime_err)?;
        states.push(
            parse_state(&bytes)
                .with_context(|| format!("fragment {} is not a valid state", path.display()))
                .map_err(runtime_err)?,
        );
    }
    let input = CompileInput {
        fragments: states,
        query: query.to_string(),
        budgets,
        floors: Default::default(),
    };
    let state = compile_context(&input).map_err(runtime_err)?;
    let text = if emit_json {
        String::from_utf8(canonical_serialize(&state).map_err(runtime_err)?).map_err(runtime_err)?
    } else {
        render_prompt(&state, query, &budgets).map_err(runtime_err)?
    };
    writeln!(out, "{text}").map_err(runtime_err)
}

fn adapter_mock(spec: Option<&Path>) -> Result<(), Failure> {
    let spec = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read mock spec {}", path.display()))
                .map_err(config_err)?;
            serde_json::from_str(&text)
                .with_context(|| format!("mock spec {} is not valid", path.display()))
                .map_err(config_err)?
        }
        None => MockSpec::new(MockBehavior::Echo),
    };
    let stdin = std::io::stdin();
    serve_lines(&spec, stdin.lock(), std::io::stdout().lock()).map_err(runtime_err)?;
    Ok(())
}
