use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{AdapterRequest, AdapterResponse, Transport, TransportEvent};

type Pending = Arc<Mutex<PendingState>>;

#[derive(Default)]
struct PendingState {
    waiters: HashMap<String, Sender<TransportEvent>>,
    closed: Option<String>,
}

/// Newline-delimited JSON over any byte stream pair. A reader thread routes
/// replies to waiting batches by id.
pub struct LineTransport {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
}

impl LineTransport {
    pub fn new(reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>) -> Self {
        let pending: Pending = Arc::default();
        let routed = Arc::clone(&pending);
        std::thread::Builder::new()
            .name("adapter-reader".into())
            .spawn(move || read_loop(reader, routed))
            .expect("spawn adapter reader");
        Self {
            writer: Mutex::new(writer),
            pending,
        }
    }

    fn fail_all(pending: &Pending, make: impl Fn() -> TransportEvent) {
        let mut state = pending.lock().expect("pending lock poisoned");
        for (_, tx) in state.waiters.drain() {
            let _ = tx.send(make());
        }
    }
}

fn read_loop(reader: Box<dyn Read + Send>, pending: Pending) {
    let reader = BufReader::new(reader);
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                close(&pending, format!("read failed: {e}"));
                return;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match AdapterResponse::parse_line(&line) {
            Ok(reply) => {
                let mut state = pending.lock().expect("pending lock poisoned");
                match state.waiters.remove(&reply.id) {
                    Some(tx) => {
                        let _ = tx.send(TransportEvent::Reply(reply));
                    }
                    None => {
                        let why = format!("reply for unknown id {:?}", reply.id);
                        for (_, tx) in state.waiters.drain() {
                            let _ = tx.send(TransportEvent::Malformed(why.clone()));
                        }
                    }
                }
            }
            Err(e) => {
                let why = format!("malformed reply: {e}");
                LineTransport::fail_all(&pending, || TransportEvent::Malformed(why.clone()));
            }
        }
    }
    close(&pending, "adapter closed its output".into());
}

fn close(pending: &Pending, why: String) {
    let mut state = pending.lock().expect("pending lock poisoned");
    state.closed = Some(why.clone());
    for (_, tx) in state.waiters.drain() {
        let _ = tx.send(TransportEvent::Closed(why.clone()));
    }
}

impl Transport for LineTransport {
    fn dispatch(&self, batch: Vec<AdapterRequest>, events: Sender<TransportEvent>) {
        {
            let mut state = self.pending.lock().expect("pending lock poisoned");
            if let Some(why) = &state.closed {
                let _ = events.send(TransportEvent::Closed(why.clone()));
                return;
            }
            for r in &batch {
                state.waiters.insert(r.id.clone(), events.clone());
            }
        }
        let mut text = String::new();
        for r in &batch {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        let mut w = self.writer.lock().expect("writer lock poisoned");
        if let Err(e) = w.write_all(text.as_bytes()).and_then(|_| w.flush()) {
            drop(w);
            let mut state = self.pending.lock().expect("pending lock poisoned");
            for r in &batch {
                state.waiters.remove(&r.id);
            }
            let _ = events.send(TransportEvent::Closed(format!("write failed: {e}")));
        }
    }
}

/// A child process speaking the protocol on stdin/stdout.
pub struct StdioTransport {
    lines: LineTransport,
    child: Mutex<Child>,
}

impl StdioTransport {
    pub fn spawn(command: &[String]) -> std::io::Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            lines: LineTransport::new(Box::new(stdout), Box::new(stdin)),
            child: Mutex::new(child),
        })
    }
}

impl Transport for StdioTransport {
    fn dispatch(&self, batch: Vec<AdapterRequest>, events: Sender<TransportEvent>) {
        self.lines.dispatch(batch, events)
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A long-lived TCP connection to an adapter server.
pub struct TcpTransport {
    lines: LineTransport,
}

impl TcpTransport {
    pub fn connect(address: &str, timeout: Duration) -> std::io::Result<Self> {
        let addr = address
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "address did not resolve"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Self {
            lines: LineTransport::new(Box::new(reader), Box::new(stream)),
        })
    }
}

impl Transport for TcpTransport {
    fn dispatch(&self, batch: Vec<AdapterRequest>, events: Sender<TransportEvent>) {
        self.lines.dispatch(batch, events)
    }
}
