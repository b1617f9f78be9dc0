//! Async client with request multiplexing.
//!
//! A background task owns the read half of the connection and routes each
//! reply to the caller waiting on its id, so several requests may be in
//! flight on one connection and complete in any order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::Value;
use thiserror::Error;
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot, Mutex as AsyncMutex};
use tokio::task::JoinHandle;

use crate::protocol::{read_frame, write_frame, ErrorBody, Event, FrameError, Incoming, Reply, Request, Status};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connect: {0}")]
    Connect(std::io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
    #[error("connection closed before the reply arrived")]
    Closed,
    #[error("invalid message from service: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Error code of an in-band service error.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Remote { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Progress event of a running command.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub event: String,
    pub data: Value,
}

struct Pending {
    reply: oneshot::Sender<Reply>,
    events: Option<mpsc::UnboundedSender<Progress>>,
}

type PendingMap = Arc<Mutex<HashMap<u64, Pending>>>;

pub struct Client {
    writer: AsyncMutex<OwnedWriteHalf>,
    pending: PendingMap,
    next_id: AtomicU64,
    reader: JoinHandle<()>,
}

impl Drop for Client {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

impl Client {
    pub async fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await.map_err(ClientError::Connect)?;
        stream.set_nodelay(true).map_err(ClientError::Connect)?;
        let (mut rd, wr) = stream.into_split();
        let pending: PendingMap = Arc::default();
        let routes = pending.clone();
        let reader = tokio::spawn(async move {
            while let Ok(Some(body)) = read_frame(&mut rd).await {
                match Incoming::parse(&body) {
                    Ok(Incoming::Reply(r)) => {
                        let waiter = r.id.and_then(|id| routes.lock().unwrap().remove(&id));
                        if let Some(p) = waiter {
                            let _ = p.reply.send(r);
                        }
                    }
                    Ok(Incoming::Event(Event { id, event, data, .. })) => {
                        if let Some(tx) = routes.lock().unwrap().get(&id).and_then(|p| p.events.clone()) {
                            let _ = tx.send(Progress { event, data });
                        }
                    }
                    Err(_) => {}
                }
            }
            // Dropping the senders wakes every waiter with `Closed`.
            routes.lock().unwrap().clear();
        });
        Ok(Client { writer: AsyncMutex::new(wr), pending, next_id: AtomicU64::new(1), reader })
    }

    async fn send(&self, cmd: &str, args: Value, events: Option<mpsc::UnboundedSender<Progress>>) -> Result<oneshot::Receiver<Reply>, ClientError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        self.pending.lock().unwrap().insert(id, Pending { reply: tx, events });
        let body = serde_json::to_vec(&Request::new(id, cmd, args)).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let mut w = self.writer.lock().await;
        if let Err(e) = write_frame(&mut *w, &body).await {
            self.pending.lock().unwrap().remove(&id);
            return Err(e.into());
        }
        Ok(rx)
    }

    fn unwrap_reply(reply: Reply) -> Result<Value, ClientError> {
        match reply.status {
            Status::Ok => Ok(reply.result.unwrap_or(Value::Null)),
            Status::Error => {
                let ErrorBody { code, message } = reply.error.unwrap_or(ErrorBody { code: "error".into(), message: String::new() });
                Err(ClientError::Remote { code, message })
            }
        }
    }

    /// Sends a command and waits for its reply.
    pub async fn call(&self, cmd: &str, args: Value) -> Result<Value, ClientError> {
        let rx = self.send(cmd, args, None).await?;
        Self::unwrap_reply(rx.await.map_err(|_| ClientError::Closed)?)
    }

    /// Like [`Client::call`], passing progress events to `on_progress`.
    pub async fn call_with_progress(&self, cmd: &str, args: Value, mut on_progress: impl FnMut(Progress)) -> Result<Value, ClientError> {
        let (etx, mut erx) = mpsc::unbounded_channel();
        let mut rx = self.send(cmd, args, Some(etx)).await?;
        loop {
            tokio::select! {
                biased;
                Some(p) = erx.recv() => on_progress(p),
                reply = &mut rx => {
                    while let Ok(p) = erx.try_recv() {
                        on_progress(p);
                    }
                    return Self::unwrap_reply(reply.map_err(|_| ClientError::Closed)?);
                }
            }
        }
    }

    /// Sends a pre-encoded frame body as is; for protocol testing.
    pub async fn send_raw(&self, body: &[u8]) -> Result<(), ClientError> {
        let mut w = self.writer.lock().await;
        write_frame(&mut *w, body).await?;
        Ok(())
    }

    pub async fn set_mode(&self, node: &str, mode: &str) -> Result<Value, ClientError> {
        self.call("set_mode", serde_json::json!({ "node": node, "mode": mode })).await
    }

    pub async fn set_beam(&self, node: &str, index: i64) -> Result<Value, ClientError> {
        self.call("set_beam", serde_json::json!({ "node": node, "index": index })).await
    }

    pub async fn get_status(&self, node: Option<&str>) -> Result<Value, ClientError> {
        let args = match node {
            Some(n) => serde_json::json!({ "node": n }),
            None => serde_json::json!({}),
        };
        self.call("get_status", args).await
    }
}
