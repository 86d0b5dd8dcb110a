//! Host side of an MP1 session with a child-process proposer.
//!
//! Writes are serialized through a mutex; a reader thread demultiplexes
//! replies to per-request channels by id, so replies may arrive in any order.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::rle;
use super::wire::{Hello, ProposalRequest, Reply, WireCommand, CAP_BOX_PROMPT, PROTO};
use crate::volume::SliceMask2D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("empty proposer command")]
    EmptyCommand,
    #[error("failed to spawn proposer {command:?}: {message}")]
    Spawn { command: String, message: String },
    #[error("bad hello line: {0:?}")]
    BadHello(String),
    #[error("proposer speaks {0:?}, host requires MP1")]
    VersionMismatch(String),
    #[error("proposer failed to start: {0}")]
    HelloError(String),
    #[error("timed out after {0:?} waiting for hello")]
    HandshakeTimeout(Duration),
    #[error("proposer exited")]
    ChildExited,
    #[error("malformed line from proposer: {0:?}")]
    Malformed(String),
    #[error("request {id}: proposer error: {message}")]
    Remote { id: u64, message: String },
    #[error("request {id}: {source}")]
    Rle { id: u64, source: rle::RleError },
    #[error("request {id}: confidence {conf} outside [0, 1]")]
    BadConfidence { id: u64, conf: f64 },
    #[error("request {id}: no reply within {timeout:?}")]
    ResponseTimeout { id: u64, timeout: Duration },
    #[error("write to proposer failed: {0}")]
    Write(String),
}

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    /// Applies to the hello line and to each reply.
    pub timeout: Duration,
    /// Maximum outstanding requests in [`Session::propose_many`].
    pub window: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            timeout: Duration::from_secs(30),
            window: 32,
        }
    }
}

/// Decoded proposer answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: u64,
    pub mask: SliceMask2D,
    pub confidence: f64,
}

type ReplyResult = Result<Reply, ProtocolError>;

#[derive(Default)]
struct Pending {
    slots: HashMap<u64, Sender<ReplyResult>>,
    broken: Option<ProtocolError>,
    /// Replies whose id matched no outstanding request.
    stray: u64,
}

pub struct Ticket {
    id: u64,
    h: usize,
    w: usize,
    rx: Receiver<ReplyResult>,
}

impl Ticket {
    pub fn id(&self) -> u64 {
        self.id
    }
}

pub struct Session {
    child: Child,
    stdin: Mutex<Option<ChildStdin>>,
    pending: Arc<Mutex<Pending>>,
    next_id: AtomicU64,
    hello: Hello,
    opts: SessionOptions,
    reader: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("pid", &self.child.id())
            .field("hello", &self.hello)
            .field("opts", &self.opts)
            .finish_non_exhaustive()
    }
}

fn reader_loop(stdout: impl BufRead, hello_tx: Sender<Option<String>>, pending: Arc<Mutex<Pending>>) {
    let mut lines = stdout.lines();
    let first = lines.next().and_then(|l| l.ok());
    let got_hello = first.is_some();
    let _ = hello_tx.send(first);
    let fail = |err: ProtocolError| {
        let mut p = pending.lock().unwrap();
        if p.broken.is_none() {
            p.broken = Some(err.clone());
        }
        for (_, tx) in p.slots.drain() {
            let _ = tx.send(Err(err.clone()));
        }
    };
    if !got_hello {
        fail(ProtocolError::ChildExited);
        return;
    }
    for line in lines {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Reply>(&line) {
            Ok(reply) => {
                let mut p = pending.lock().unwrap();
                match p.slots.remove(&reply.id()) {
                    Some(tx) => {
                        let _ = tx.send(Ok(reply));
                    }
                    None => p.stray += 1,
                }
            }
            Err(_) => {
                fail(ProtocolError::Malformed(line));
                return;
            }
        }
    }
    fail(ProtocolError::ChildExited);
}

fn parse_hello(line: &str) -> Result<Hello, ProtocolError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|_| ProtocolError::BadHello(line.to_string()))?;
    let proto = value
        .get("proto")
        .and_then(|p| p.as_str())
        .ok_or_else(|| ProtocolError::BadHello(line.to_string()))?;
    if proto != PROTO {
        return Err(ProtocolError::VersionMismatch(proto.to_string()));
    }
    let hello: Hello = serde_json::from_value(value).map_err(|_| ProtocolError::BadHello(line.to_string()))?;
    if let Some(err) = &hello.error {
        return Err(ProtocolError::HelloError(err.clone()));
    }
    if !hello.caps.iter().any(|c| c == CAP_BOX_PROMPT) {
        return Err(ProtocolError::BadHello(line.to_string()));
    }
    Ok(hello)
}

impl Session {
    /// Spawns `command` and completes the MP1 handshake.
    pub fn spawn(command: &[String], opts: SessionOptions) -> Result<Session, ProtocolError> {
        let (program, args) = command.split_first().ok_or(ProtocolError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProtocolError::Spawn {
                command: command.join(" "),
                message: e.to_string(),
            })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let pending = Arc::new(Mutex::new(Pending::default()));
        let (hello_tx, hello_rx) = mpsc::channel();
        let reader = {
            let pending = Arc::clone(&pending);
            std::thread::spawn(move || reader_loop(BufReader::new(stdout), hello_tx, pending))
        };
        let mut session = Session {
            child,
            stdin: Mutex::new(stdin),
            pending,
            next_id: AtomicU64::new(1),
            hello: Hello::new(""),
            opts,
            reader: Some(reader),
        };
        let hello = match hello_rx.recv_timeout(opts.timeout) {
            Ok(Some(line)) => parse_hello(&line),
            Ok(None) | Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::ChildExited),
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::HandshakeTimeout(opts.timeout)),
        };
        match hello {
            Ok(h) => {
                session.hello = h;
                Ok(session)
            }
            Err(e) => {
                session.kill();
                Err(e)
            }
        }
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn options(&self) -> SessionOptions {
        self.opts
    }

    /// Number of replies received for unknown ids so far.
    pub fn stray_replies(&self) -> u64 {
        self.pending.lock().unwrap().stray
    }

    /// Sends one request without waiting for its reply.
    pub fn submit(&self, req: &ProposalRequest) -> Result<Ticket, ProtocolError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        {
            let mut p = self.pending.lock().unwrap();
            if let Some(err) = &p.broken {
                return Err(err.clone());
            }
            p.slots.insert(id, tx);
        }
        let mut line = serde_json::to_string(&req.to_wire(id)).expect("request serializes");
        line.push('\n');
        let mut guard = self.stdin.lock().unwrap();
        let write = match guard.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(std::io::Error::other("stdin closed")),
        };
        if let Err(e) = write {
            self.pending.lock().unwrap().slots.remove(&id);
            return Err(ProtocolError::Write(e.to_string()));
        }
        Ok(Ticket {
            id,
            h: req.h,
            w: req.w,
            rx,
        })
    }

    /// Waits for the reply to `ticket` and decodes it.
    pub fn wait(&self, ticket: Ticket) -> Result<Proposal, ProtocolError> {
        let reply = match ticket.rx.recv_timeout(self.opts.timeout) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().slots.remove(&ticket.id);
                return Err(ProtocolError::ResponseTimeout {
                    id: ticket.id,
                    timeout: self.opts.timeout,
                });
            }
            Err(RecvTimeoutError::Disconnected) => return Err(ProtocolError::ChildExited),
        };
        match reply {
            Reply::Error(e) => Err(ProtocolError::Remote {
                id: e.id,
                message: e.error,
            }),
            Reply::Response(r) => {
                if !(0.0..=1.0).contains(&r.conf) {
                    return Err(ProtocolError::BadConfidence { id: r.id, conf: r.conf });
                }
                let mask = rle::decode(&r.rle, ticket.h, ticket.w)
                    .map_err(|source| ProtocolError::Rle { id: r.id, source })?;
                Ok(Proposal {
                    id: r.id,
                    mask,
                    confidence: r.conf,
                })
            }
        }
    }

    pub fn propose(&self, req: &ProposalRequest) -> Result<Proposal, ProtocolError> {
        let ticket = self.submit(req)?;
        self.wait(ticket)
    }

    /// Pipelines `reqs` with at most `window` outstanding; results come back
    /// in input order, one per request.
    pub fn propose_many(&self, reqs: &[ProposalRequest]) -> Vec<Result<Proposal, ProtocolError>> {
        let window = self.opts.window.max(1);
        let mut results = Vec::with_capacity(reqs.len());
        let mut inflight: VecDeque<Result<Ticket, ProtocolError>> = VecDeque::new();
        let mut next = reqs.iter();
        loop {
            while inflight.len() < window {
                match next.next() {
                    Some(r) => inflight.push_back(self.submit(r)),
                    None => break,
                }
            }
            match inflight.pop_front() {
                Some(Ok(t)) => results.push(self.wait(t)),
                Some(Err(e)) => results.push(Err(e)),
                None => break,
            }
        }
        results
    }

    fn send_bye(&self) {
        let mut guard = self.stdin.lock().unwrap();
        if let Some(mut stdin) = guard.take() {
            let mut line = serde_json::to_string(&WireCommand::bye()).unwrap();
            line.push('\n');
            let _ = stdin.write_all(line.as_bytes());
            let _ = stdin.flush();
        }
    }

    fn kill(&mut self) {
        self.stdin.lock().unwrap().take();
        let _ = self.child.kill();
        let _ = self.child.wait();
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }

    /// Sends `bye` and waits briefly for the child to exit, killing it otherwise.
    pub fn shutdown(mut self) -> Option<ExitStatus> {
        self.close()
    }

    fn close(&mut self) -> Option<ExitStatus> {
        self.send_bye();
        let deadline = Instant::now() + Duration::from_secs(5);
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = self.child.kill();
                    break self.child.wait().ok();
                }
            }
        };
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
        status
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.reader.is_some() {
            self.close();
        }
    }
}
