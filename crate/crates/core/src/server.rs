//! Live coordinator host.
//!
//! One thread owns the [`Coordinator`]; every link gets a reader thread that
//! forwards bytes into the hub's event queue. Nodes attach over TCP or
//! in-process channels, consoles over TCP speaking the JSON-lines bridge.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;
use tracing::{debug, info, warn};

use crate::bridge::{self, UiCommand, UiMessage};
use crate::clock::{Clock, WallClock};
use crate::coordinator::{ConnId, Coordinator, Output, Streams};
use crate::grasp::GraspReport;
use crate::node::StopFlag;
use crate::protocol;
use crate::record::{Direction, RecordError, SessionHeader, SessionWriter};
use crate::touch::TouchEvent;
use crate::transport::ChannelTransport;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("hub thread panicked")]
    Panicked,
    #[error("hub is not running")]
    Closed,
}

type Writer = Box<dyn FnMut(&[u8]) -> std::io::Result<()> + Send>;

enum HubEvent {
    NodeOpened(u64, Writer),
    NodeBytes(u64, Vec<u8>),
    NodeClosed(u64),
    UiOpened(u64, Writer),
    UiLine(u64, String),
    UiClosed(u64),
    Stop,
}

pub struct HubOptions {
    /// Default snapshot rate for new consoles, Hz.
    pub snapshot_rate: f64,
    /// Touch events included in each snapshot.
    pub recent_touches: usize,
    /// Session record destination.
    pub record: Option<Box<dyn Write + Send>>,
    /// Stored in the session header.
    pub config_snapshot: String,
}

impl Default for HubOptions {
    fn default() -> Self {
        Self {
            snapshot_rate: 30.0,
            recent_touches: 8,
            record: None,
            config_snapshot: String::new(),
        }
    }
}

/// What the hub saw, returned on shutdown.
#[derive(Debug, Clone, Default)]
pub struct HubSummary {
    pub duration_us: u64,
    pub chunks_in: u64,
    pub frames_out: u64,
    pub reports: Vec<GraspReport>,
    pub touches: Vec<TouchEvent>,
    /// Stream bookkeeping per finger, including detached ones.
    pub streams: Vec<(u8, Streams)>,
}

pub struct Hub {
    tx: Sender<HubEvent>,
    next_link: std::sync::Arc<AtomicU64>,
    stop: StopFlag,
    thread: Option<JoinHandle<Result<HubSummary, ServerError>>>,
    acceptors: Vec<JoinHandle<()>>,
}

impl Hub {
    pub fn spawn(coordinator: Coordinator, opts: HubOptions) -> Result<Self, ServerError> {
        let (tx, rx) = mpsc::channel();
        let thread = thread::Builder::new()
            .name("hub".into())
            .spawn(move || HubLoop::new(coordinator, opts)?.run(rx))?;
        Ok(Self {
            tx,
            next_link: Default::default(),
            stop: StopFlag::new(),
            thread: Some(thread),
            acceptors: Vec::new(),
        })
    }

    fn link_id(&self) -> u64 {
        self.next_link.fetch_add(1, Ordering::SeqCst)
    }

    /// New in-process node link. The returned endpoint is handed to
    /// [`crate::node::run`].
    pub fn attach_channel(&self) -> Result<ChannelTransport, ServerError> {
        let (to_node, node_rx) = mpsc::channel::<Vec<u8>>();
        let (node_tx, from_node) = mpsc::channel::<Vec<u8>>();
        let id = self.link_id();
        let writer: Writer = Box::new(move |b: &[u8]| {
            to_node
                .send(b.to_vec())
                .map_err(|_| std::io::ErrorKind::BrokenPipe.into())
        });
        self.tx
            .send(HubEvent::NodeOpened(id, writer))
            .map_err(|_| ServerError::Closed)?;
        let tx = self.tx.clone();
        let stop = self.stop.clone();
        thread::Builder::new()
            .name(format!("link-{id}"))
            .spawn(move || loop {
                match from_node.recv_timeout(Duration::from_millis(50)) {
                    Ok(b) => {
                        if tx.send(HubEvent::NodeBytes(id, b)).is_err() {
                            break;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) if !stop.is_stopped() => {}
                    Err(_) => {
                        let _ = tx.send(HubEvent::NodeClosed(id));
                        break;
                    }
                }
            })?;
        Ok(ChannelTransport::from_parts(node_tx, node_rx))
    }

    /// Accept finger nodes on `addr`. Returns the bound address.
    pub fn listen_nodes(&mut self, addr: impl ToSocketAddrs) -> Result<SocketAddr, ServerError> {
        self.listen(addr, false)
    }

    /// Accept JSON-lines consoles on `addr`.
    pub fn listen_ui(&mut self, addr: impl ToSocketAddrs) -> Result<SocketAddr, ServerError> {
        self.listen(addr, true)
    }

    fn listen(&mut self, addr: impl ToSocketAddrs, ui: bool) -> Result<SocketAddr, ServerError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let tx = self.tx.clone();
        let stop = self.stop.clone();
        let ids = self.next_link.clone();
        let kind = if ui { "ui" } else { "node" };
        info!(addr = %local, kind, "listening");
        let h = thread::Builder::new()
            .name(format!("accept-{kind}"))
            .spawn(move || {
                while !stop.is_stopped() {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            let id = ids.fetch_add(1, Ordering::SeqCst);
                            debug!(%peer, link = id, kind, "accepted");
                            if let Err(e) = spawn_tcp_link(id, stream, ui, tx.clone(), stop.clone()) {
                                warn!(%peer, error = %e, "link setup failed");
                            }
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            thread::sleep(Duration::from_millis(20));
                        }
                        Err(e) => {
                            warn!(error = %e, "accept failed");
                            thread::sleep(Duration::from_millis(100));
                        }
                    }
                }
            })?;
        self.acceptors.push(h);
        Ok(local)
    }

    /// Stop the hub and wait for its summary.
    pub fn stop(mut self) -> Result<HubSummary, ServerError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<HubSummary, ServerError> {
        self.stop.stop();
        let _ = self.tx.send(HubEvent::Stop);
        for a in self.acceptors.drain(..) {
            let _ = a.join();
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| ServerError::Panicked)?,
            None => Err(ServerError::Closed),
        }
    }
}

impl Drop for Hub {
    fn drop(&mut self) {
        if self.thread.is_some() {
            let _ = self.shutdown();
        }
    }
}

fn spawn_tcp_link(
    id: u64,
    stream: TcpStream,
    ui: bool,
    tx: Sender<HubEvent>,
    stop: StopFlag,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut out = stream.try_clone()?;
    let writer: Writer = Box::new(move |b: &[u8]| out.write_all(b));
    let opened = if ui {
        HubEvent::UiOpened(id, writer)
    } else {
        HubEvent::NodeOpened(id, writer)
    };
    if tx.send(opened).is_err() {
        return Ok(());
    }
    thread::Builder::new()
        .name(format!("link-{id}"))
        .spawn(move || {
            if ui {
                read_lines(id, stream, &tx, &stop);
                let _ = tx.send(HubEvent::UiClosed(id));
            } else {
                read_bytes(id, stream, &tx, &stop);
                let _ = tx.send(HubEvent::NodeClosed(id));
            }
        })?;
    Ok(())
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}

fn read_bytes(id: u64, mut stream: TcpStream, tx: &Sender<HubEvent>, stop: &StopFlag) {
    use std::io::Read;
    let mut buf = vec![0u8; 4096];
    while !stop.is_stopped() {
        match stream.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => {
                if tx.send(HubEvent::NodeBytes(id, buf[..n].to_vec())).is_err() {
                    return;
                }
            }
            Err(e) if is_timeout(&e) => {}
            Err(_) => return,
        }
    }
}

fn read_lines(id: u64, stream: TcpStream, tx: &Sender<HubEvent>, stop: &StopFlag) {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    while !stop.is_stopped() {
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) => {
                if line.ends_with('\n') {
                    let l = std::mem::take(&mut line);
                    if !l.trim().is_empty() && tx.send(HubEvent::UiLine(id, l)).is_err() {
                        return;
                    }
                }
            }
            // A timeout may leave a partial line in `line`; keep it.
            Err(e) if is_timeout(&e) => {}
            Err(_) => return,
        }
    }
}

struct UiClient {
    writer: Writer,
    interval_us: u64,
    next_snapshot: u64,
}

struct HubLoop {
    coordinator: Coordinator,
    clock: WallClock,
    recorder: Option<SessionWriter<Box<dyn Write + Send>>>,
    nodes: BTreeMap<u64, (ConnId, Writer)>,
    conns: BTreeMap<ConnId, u64>,
    uis: BTreeMap<u64, UiClient>,
    default_interval: u64,
    recent_touches: usize,
    chunks_in: u64,
    frames_out: u64,
}

fn interval_for(rate_hz: f64) -> u64 {
    (1e6 / rate_hz).round().max(1.0) as u64
}

impl HubLoop {
    fn new(coordinator: Coordinator, opts: HubOptions) -> Result<Self, ServerError> {
        let recorder = match opts.record {
            Some(w) => Some(SessionWriter::new(
                w,
                &SessionHeader {
                    protocol_version: protocol::VERSION,
                    start_us: 0,
                    config: opts.config_snapshot,
                },
            )?),
            None => None,
        };
        Ok(Self {
            coordinator,
            clock: WallClock::new(),
            recorder,
            nodes: BTreeMap::new(),
            conns: BTreeMap::new(),
            uis: BTreeMap::new(),
            default_interval: interval_for(opts.snapshot_rate.clamp(0.1, 1000.0)),
            recent_touches: opts.recent_touches,
            chunks_in: 0,
            frames_out: 0,
        })
    }

    fn run(mut self, rx: Receiver<HubEvent>) -> Result<HubSummary, ServerError> {
        loop {
            let now = self.clock.now_us();
            let deadline = self
                .coordinator
                .next_deadline()
                .into_iter()
                .chain(self.uis.values().map(|u| u.next_snapshot))
                .min()
                .unwrap_or(now + 10_000)
                .min(now + 10_000);
            let ev = match rx.recv_timeout(self.clock.until(deadline)) {
                Ok(ev) => Some(ev),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => break,
            };
            let now = self.clock.now_us();
            match ev {
                Some(HubEvent::Stop) => break,
                Some(ev) => self.handle(ev, now)?,
                None => {}
            }
            let out = self.coordinator.tick(now);
            self.route(out, now)?;
            self.broadcast_events();
            self.send_snapshots(now);
            if let Some(r) = &mut self.recorder {
                r.flush()?;
            }
        }
        self.finish()
    }

    fn handle(&mut self, ev: HubEvent, now: u64) -> Result<(), ServerError> {
        match ev {
            HubEvent::NodeOpened(link, writer) => {
                let conn = self.coordinator.connect();
                self.conns.insert(conn, link);
                self.nodes.insert(link, (conn, writer));
            }
            HubEvent::NodeBytes(link, bytes) => {
                if let Some(&(conn, _)) = self.nodes.get(&link) {
                    if let Some(r) = &mut self.recorder {
                        r.append(now, Direction::Inbound, &bytes)?;
                    }
                    self.chunks_in += 1;
                    let out = self.coordinator.handle_bytes(conn, &bytes, now);
                    self.route(out, now)?;
                }
            }
            HubEvent::NodeClosed(link) => self.close_node(link, now),
            HubEvent::UiOpened(id, mut writer) => {
                let hello = bridge::to_line(&bridge::welcome(&self.coordinator)) + "\n";
                if writer(hello.as_bytes()).is_ok() {
                    self.uis.insert(
                        id,
                        UiClient {
                            writer,
                            interval_us: self.default_interval,
                            next_snapshot: now,
                        },
                    );
                }
            }
            HubEvent::UiLine(id, line) => self.handle_ui_line(id, &line, now)?,
            HubEvent::UiClosed(id) => {
                self.uis.remove(&id);
            }
            HubEvent::Stop => {}
        }
        Ok(())
    }

    fn close_node(&mut self, link: u64, now: u64) {
        if let Some((conn, _)) = self.nodes.remove(&link) {
            self.conns.remove(&conn);
            self.coordinator.disconnect(conn, now);
        }
    }

    fn handle_ui_line(&mut self, id: u64, line: &str, now: u64) -> Result<(), ServerError> {
        let reply = match bridge::parse_command(line) {
            Err(e) => UiMessage::Error {
                message: e.to_string(),
            },
            Ok(cmd) => match bridge::apply(&mut self.coordinator, &cmd, now) {
                Ok(out) => {
                    if let (UiCommand::Subscribe { rate_hz }, Some(c)) = (&cmd, self.uis.get_mut(&id)) {
                        c.interval_us = interval_for(*rate_hz);
                        c.next_snapshot = now;
                    }
                    self.route(out, now)?;
                    UiMessage::Ack {
                        command: cmd.kind().to_string(),
                    }
                }
                Err(e) => UiMessage::Error {
                    message: e.to_string(),
                },
            },
        };
        self.send_ui(id, &reply);
        Ok(())
    }

    fn send_ui(&mut self, id: u64, msg: &UiMessage) {
        let line = bridge::to_line(msg) + "\n";
        if let Some(c) = self.uis.get_mut(&id) {
            if (c.writer)(line.as_bytes()).is_err() {
                self.uis.remove(&id);
            }
        }
    }

    fn broadcast_events(&mut self) {
        let events = self.coordinator.drain_events();
        if events.is_empty() || self.uis.is_empty() {
            return;
        }
        let ids: Vec<u64> = self.uis.keys().copied().collect();
        for e in events {
            let msg = UiMessage::from(e);
            for &id in &ids {
                self.send_ui(id, &msg);
            }
        }
    }

    fn send_snapshots(&mut self, now: u64) {
        let due: Vec<u64> = self
            .uis
            .iter()
            .filter(|(_, c)| c.next_snapshot <= now)
            .map(|(&id, _)| id)
            .collect();
        if due.is_empty() {
            return;
        }
        let snap = bridge::snapshot(&self.coordinator, now, self.recent_touches);
        for id in due {
            if let Some(c) = self.uis.get_mut(&id) {
                c.next_snapshot = (c.next_snapshot + c.interval_us).max(now + 1);
            }
            self.send_ui(id, &snap);
        }
    }

    fn route(&mut self, out: Vec<Output>, now: u64) -> Result<(), ServerError> {
        for o in out {
            match o {
                Output::Local { bytes } => {
                    if let Some(r) = &mut self.recorder {
                        r.append(now, Direction::Local, &bytes)?;
                    }
                }
                Output::Send { conn, bytes } => {
                    if let Some(r) = &mut self.recorder {
                        r.append(now, Direction::Outbound, &bytes)?;
                    }
                    self.frames_out += 1;
                    let Some(&link) = self.conns.get(&conn) else {
                        continue;
                    };
                    let ok = self
                        .nodes
                        .get_mut(&link)
                        .map(|(_, w)| w(&bytes).is_ok())
                        .unwrap_or(false);
                    if !ok {
                        self.close_node(link, now);
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<HubSummary, ServerError> {
        let now = self.clock.now_us();
        let links: Vec<u64> = self.nodes.keys().copied().collect();
        for l in links {
            self.close_node(l, now);
        }
        self.broadcast_events();
        if let Some(r) = self.recorder.take() {
            r.finish()?;
        }
        let mut streams: Vec<(u8, Streams)> = self
            .coordinator
            .retired_streams()
            .iter()
            .map(|(id, s)| (*id, *s))
            .collect();
        streams.sort_by_key(|(id, _)| *id);
        Ok(HubSummary {
            duration_us: now,
            chunks_in: self.chunks_in,
            frames_out: self.frames_out,
            reports: self.coordinator.reports().to_vec(),
            touches: self.coordinator.touches().to_vec(),
            streams,
        })
    }
}
