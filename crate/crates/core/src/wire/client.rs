use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{encode, read_frame, EvalRequest, Message, WireMessage};
use crate::backend::{VelocityBatch, VelocityField};
use crate::error::{Error, Result};
use crate::latent::Latent;

pub type ByteReader = Box<dyn Read + Send>;
pub type ByteWriter = Box<dyn Write + Send>;

/// Opens a fresh duplex byte stream to a server.
pub type Connector = dyn Fn() -> std::io::Result<(ByteReader, ByteWriter)> + Send + Sync;

#[derive(Clone)]
pub enum Endpoint {
    /// `host:port`.
    Tcp(String),
    /// A child process speaking the protocol on its stdin/stdout.
    Exec(Vec<String>),
    Custom(Arc<Connector>),
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
            Endpoint::Exec(cmd) => write!(f, "exec:{}", cmd.join(" ")),
            Endpoint::Custom(_) => f.write_str("custom"),
        }
    }
}

impl Endpoint {
    /// Parses `tcp:host:port`, `exec:cmd args…`, or a bare `host:port`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(Error::Config("exec endpoint needs a command".into()));
            }
            return Ok(Endpoint::Exec(argv));
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        if addr.is_empty() || !addr.contains(':') {
            return Err(Error::Config(format!("endpoint `{s}` is not host:port")));
        }
        Ok(Endpoint::Tcp(addr.to_owned()))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    /// Extra connection attempts after a dropped connection.
    pub reconnect_attempts: u32,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(30), reconnect_attempts: 1 }
    }
}

type Pending = Arc<Mutex<HashMap<u64, Sender<Result<Message>>>>>;

struct Connection {
    writer: Mutex<ByteWriter>,
    pending: Pending,
    alive: Arc<Mutex<bool>>,
    socket: Option<TcpStream>,
    _child: Option<ChildGuard>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(s) = &self.socket {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Wire(w) => Error::Wire(w.clone()),
        Error::Protocol(m) => Error::Protocol(m.clone()),
        other => Error::Transport(other.to_string()),
    }
}

/// Reads responses and routes them to waiters by request id.
fn reader_loop(mut reader: ByteReader, pending: Pending, alive: Arc<Mutex<bool>>) {
    let failure = loop {
        match read_frame(&mut reader) {
            Ok(Some(frame)) => {
                let waiter = pending.lock().unwrap().remove(&frame.request_id);
                match waiter {
                    Some(tx) => {
                        let _ = tx.send(Ok(frame.message));
                    }
                    None => break Error::Protocol(format!("response for unknown request id {}", frame.request_id)),
                }
            }
            Ok(None) => break Error::Transport("server closed the connection".into()),
            Err(e) => break e,
        }
    };
    *alive.lock().unwrap() = false;
    for (_, tx) in pending.lock().unwrap().drain() {
        let _ = tx.send(Err(clone_err(&failure)));
    }
}

impl Connection {
    fn open(endpoint: &Endpoint, opts: &RemoteOptions) -> Result<Self> {
        let io = |e: std::io::Error| Error::Transport(format!("{endpoint:?}: {e}"));
        let mut socket = None;
        let (reader, writer, child): (ByteReader, ByteWriter, _) = match endpoint {
            Endpoint::Tcp(addr) => {
                let s = TcpStream::connect(addr).map_err(io)?;
                s.set_nodelay(true).map_err(io)?;
                socket = Some(s.try_clone().map_err(io)?);
                (Box::new(s.try_clone().map_err(io)?), Box::new(s), None)
            }
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(io)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdout), Box::new(stdin), Some(ChildGuard(child)))
            }
            Endpoint::Custom(connect) => {
                let (r, w) = connect().map_err(io)?;
                (r, w, None)
            }
        };
        let pending: Pending = Arc::default();
        let alive = Arc::new(Mutex::new(true));
        {
            let (p, a) = (pending.clone(), alive.clone());
            thread::Builder::new()
                .name("counterflow-wire-reader".into())
                .spawn(move || reader_loop(reader, p, a))
                .map_err(io)?;
        }
        let conn = Connection { writer: Mutex::new(writer), pending, alive, socket, _child: child };
        match conn.call(0, Message::Hello, opts.timeout)? {
            Message::Hello => Ok(conn),
            other => Err(Error::Protocol(format!("expected hello, got message type {}", other.msg_type()))),
        }
    }

    fn is_alive(&self) -> bool {
        *self.alive.lock().unwrap()
    }

    fn register(&self, id: u64) -> Receiver<Result<Message>> {
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(id, tx);
        rx
    }

    fn call(&self, id: u64, message: Message, timeout: Duration) -> Result<Message> {
        let frame = encode(&WireMessage::new(id, message))?;
        let rx = self.register(id);
        if !self.is_alive() {
            self.pending.lock().unwrap().remove(&id);
            return Err(Error::Transport("connection is closed".into()));
        }
        {
            let mut w = self.writer.lock().unwrap();
            if let Err(e) = w.write_all(&frame).and_then(|_| w.flush()) {
                self.pending.lock().unwrap().remove(&id);
                *self.alive.lock().unwrap() = false;
                return Err(Error::Transport(e.to_string()));
            }
        }
        match rx.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&id);
                Err(Error::Transport(format!("no response to request {id} within {timeout:?}")))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport("connection reader stopped".into())),
        }
    }
}

/// Velocity backend served by a remote process over the wire protocol.
///
/// Requests are pipelined over one connection and matched to responses by
/// request id, so concurrent `evaluate` calls are fine.
pub struct RemoteBackend {
    endpoint: Endpoint,
    opts: RemoteOptions,
    conn: Mutex<Option<Arc<Connection>>>,
    next_id: AtomicU64,
}

impl RemoteBackend {
    pub fn connect(endpoint: Endpoint, opts: RemoteOptions) -> Result<Self> {
        let conn = Connection::open(&endpoint, &opts)?;
        Ok(Self { endpoint, opts, conn: Mutex::new(Some(Arc::new(conn))), next_id: AtomicU64::new(1) })
    }

    fn connection(&self) -> Result<Arc<Connection>> {
        let mut slot = self.conn.lock().unwrap();
        if let Some(c) = slot.as_ref().filter(|c| c.is_alive()) {
            return Ok(c.clone());
        }
        *slot = None;
        let mut last = None;
        for attempt in 0..=self.opts.reconnect_attempts {
            match Connection::open(&self.endpoint, &self.opts) {
                Ok(c) => {
                    let c = Arc::new(c);
                    *slot = Some(c.clone());
                    return Ok(c);
                }
                Err(e) => {
                    log::warn!("reconnect attempt {attempt} to {:?} failed: {e}", self.endpoint);
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport("not connected".into())))
    }
}

impl VelocityField for RemoteBackend {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        let conn = self.connection()?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let reply = conn.call(id, Message::EvalRequest(EvalRequest::from_batch(batch)), self.opts.timeout)?;
        match reply {
            Message::EvalResponse(resp) => {
                if resp.items.len() != batch.len() {
                    return Err(Error::Protocol(format!(
                        "{} velocities for {} requests",
                        resp.items.len(),
                        batch.len()
                    )));
                }
                let shape = batch.requests()[0].latent.shape();
                resp.items
                    .iter()
                    .map(|t| {
                        let l = t.to_latent().map_err(|e| Error::Protocol(e.to_string()))?;
                        if l.shape() != shape {
                            return Err(Error::Protocol(format!(
                                "velocity shape {:?} for latent {shape:?}",
                                l.shape()
                            )));
                        }
                        Ok(l)
                    })
                    .collect()
            }
            Message::Error(e) => Err(Error::Remote { code: e.code, message: e.message }),
            other => Err(Error::Protocol(format!("unexpected message type {} in reply", other.msg_type()))),
        }
    }
}
