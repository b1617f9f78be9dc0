//! TCP listener and per-connection request handling.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use sda_client::protocol::{default_addr, read_frame, write_frame, Event, FrameError, Reply, Request, PROTOCOL_VERSION};
use sda_core::scenario::{Scenario, ScenarioError};

use crate::node::{CommandError, Service};

pub const DEFAULT_COMMAND_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_SCENARIO: &str = "tabletop-4p5m";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: String,
    /// Built-in scenario name or path to a scenario file.
    pub scenario: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub command_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: default_addr(),
            scenario: DEFAULT_SCENARIO.to_string(),
            seed: 7,
            output_dir: PathBuf::from("artifacts"),
            command_timeout: DEFAULT_COMMAND_TIMEOUT,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot set up scenario: {0}")]
    Setup(String),
    #[error("cannot create output directory {path}: {source}")]
    OutputDir { path: String, source: std::io::Error },
}

/// A running service.
pub struct ServerHandle {
    local_addr: SocketAddr,
    service: Arc<Service>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    /// Stops accepting connections and waits for the accept loop to end.
    pub async fn shutdown(mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Runs until the accept loop ends.
    pub async fn wait(mut self) {
        let _ = (&mut self.task).await;
    }
}

/// Binds the listener and starts serving in the background.
pub async fn spawn(cfg: ServerConfig) -> Result<ServerHandle, ServerError> {
    let scenario = Scenario::load(&cfg.scenario)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|source| ServerError::OutputDir { path: cfg.output_dir.display().to_string(), source })?;
    let service = Arc::new(Service::new(&scenario, cfg.seed, cfg.output_dir.clone()).map_err(ServerError::Setup)?);
    let listener = TcpListener::bind(&cfg.bind).await.map_err(|source| ServerError::Bind { addr: cfg.bind.clone(), source })?;
    let local_addr = listener.local_addr().map_err(|source| ServerError::Bind { addr: cfg.bind.clone(), source })?;
    info!(%local_addr, scenario = %scenario.name, seed = cfg.seed, "serving");
    let (stop, mut stopped) = oneshot::channel();
    let svc = service.clone();
    let timeout = cfg.command_timeout;
    let task = tokio::spawn(async move {
        loop {
            tokio::select! {
                _ = &mut stopped => break,
                conn = listener.accept() => match conn {
                    Ok((stream, peer)) => {
                        debug!(%peer, "connection");
                        tokio::spawn(connection(stream, svc.clone(), timeout));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                },
            }
        }
    });
    Ok(ServerHandle { local_addr, service, stop: Some(stop), task })
}

fn encode<T: serde::Serialize>(msg: &T) -> Vec<u8> {
    serde_json::to_vec(msg).expect("protocol messages serialise")
}

async fn connection(stream: TcpStream, service: Arc<Service>, timeout: Duration) {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let (out, mut queue) = mpsc::unbounded_channel::<Vec<u8>>();
    let writer = tokio::spawn(async move {
        while let Some(body) = queue.recv().await {
            if write_frame(&mut wr, &body).await.is_err() {
                break;
            }
        }
    });
    loop {
        match read_frame(&mut rd).await {
            Ok(Some(body)) => dispatch(&body, &service, timeout, &out),
            Ok(None) => break,
            Err(FrameError::TooLarge(n)) => {
                // The stream position is lost; report and hang up.
                let _ = out.send(encode(&Reply::error(None, "bad_request", format!("frame of {n} bytes exceeds the size limit"))));
                break;
            }
            Err(e) => {
                debug!("read failed: {e}");
                break;
            }
        }
    }
    drop(out);
    let _ = writer.await;
}

fn parse_request(body: &[u8]) -> Result<Request, Reply> {
    let value: Value = serde_json::from_slice(body).map_err(|e| Reply::error(None, "bad_request", format!("malformed message: {e}")))?;
    let id = value.get("id").and_then(Value::as_u64);
    let req: Request = serde_json::from_value(value).map_err(|e| Reply::error(id, "bad_request", format!("malformed request: {e}")))?;
    if req.v != PROTOCOL_VERSION {
        return Err(Reply::error(id, "bad_request", format!("unsupported protocol version {}", req.v)));
    }
    Ok(req)
}

fn dispatch(body: &[u8], service: &Arc<Service>, timeout: Duration, out: &mpsc::UnboundedSender<Vec<u8>>) {
    let req = match parse_request(body) {
        Ok(r) => r,
        Err(reply) => {
            let _ = out.send(encode(&reply));
            return;
        }
    };
    let service = service.clone();
    let out = out.clone();
    tokio::spawn(async move {
        let id = req.id;
        debug!(id, cmd = %req.cmd, "request");
        let events = out.clone();
        let job = tokio::task::spawn_blocking(move || {
            let progress = |done: usize, total: usize| {
                let ev = Event { v: PROTOCOL_VERSION, id, event: "progress".into(), data: serde_json::json!({ "done": done, "total": total }) };
                let _ = events.send(encode(&ev));
            };
            service.execute(&req.cmd, &req.args, &progress)
        });
        let reply = match tokio::time::timeout(timeout, job).await {
            Ok(Ok(Ok(result))) => Reply::ok(Some(id), result),
            Ok(Ok(Err(CommandError { code, message }))) => Reply::error(Some(id), code, message),
            Ok(Err(e)) => Reply::error(Some(id), "simulation", format!("command failed: {e}")),
            Err(_) => Reply::error(Some(id), "busy", format!("command did not finish within {} s", timeout.as_secs_f64())),
        };
        let _ = out.send(encode(&reply));
    });
}
