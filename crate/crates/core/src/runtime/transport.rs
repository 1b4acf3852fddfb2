//! Ordered, reliable frame delivery between parties.
//!
//! Every transport moves encoded frames, so byte accounting is identical
//! whether peers share a process or talk over TCP. Receives are matched on
//! `(sender, session, phase, node, slot)`; frames that arrive early wait in a
//! pending buffer.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::frame::{Frame, Phase};
use super::stats::ChannelStats;
use super::PartyId;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[serde(rename = "inmemory")]
    InMemory,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inmemory" | "in-memory" | "memory" => Ok(TransportKind::InMemory),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(Error::Config(format!("unknown transport {other:?}"))),
        }
    }
}

enum Event {
    Frame(Vec<u8>),
    Closed(PartyId),
}

enum Outbox {
    Memory(Sender<Event>),
    Tcp { addr: SocketAddr, stream: Option<TcpStream> },
}

type RecvKey = (PartyId, u64, Phase, u32, u8);

/// One party's view of the network.
pub struct Endpoint {
    me: PartyId,
    inbox: Receiver<Event>,
    // kept for TCP so reader threads can come and go without disconnecting
    _inbox_tx: Option<Sender<Event>>,
    outboxes: HashMap<PartyId, Outbox>,
    pending: HashMap<RecvKey, VecDeque<Frame>>,
    closed: HashSet<PartyId>,
    sent: ChannelStats,
    received: ChannelStats,
    timeout: Duration,
    stop_listener: Option<Arc<AtomicBool>>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint").field("me", &self.me).finish_non_exhaustive()
    }
}

/// Fully connected in-process endpoints, one per party, in input order.
pub fn in_memory(parties: &[PartyId], timeout: Duration) -> Vec<Endpoint> {
    let channels: Vec<(Sender<Event>, Receiver<Event>)> = parties.iter().map(|_| unbounded()).collect();
    parties
        .iter()
        .enumerate()
        .map(|(i, me)| {
            let outboxes = parties
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, p)| (p.clone(), Outbox::Memory(channels[j].0.clone())))
                .collect();
            Endpoint::with_inbox(me.clone(), channels[i].1.clone(), None, outboxes, timeout)
        })
        .collect()
}

/// A TCP endpoint. `listener` is where peers reach this party (providers
/// that only send need none); `peers` are the addresses of everyone else.
pub fn tcp(
    me: PartyId,
    listener: Option<TcpListener>,
    peers: HashMap<PartyId, SocketAddr>,
    timeout: Duration,
) -> Result<Endpoint> {
    let (tx, rx) = unbounded();
    let stop = Arc::new(AtomicBool::new(false));
    if let Some(listener) = listener {
        listener.set_nonblocking(true)?;
        let tx = tx.clone();
        let stop = stop.clone();
        thread::Builder::new()
            .name(format!("accept-{me}"))
            .spawn(move || accept_loop(listener, tx, stop))?;
    }
    let outboxes = peers
        .into_iter()
        .filter(|(p, _)| p != &me)
        .map(|(p, addr)| (p, Outbox::Tcp { addr, stream: None }))
        .collect();
    let mut ep = Endpoint::with_inbox(me, rx, Some(tx), outboxes, timeout);
    ep.stop_listener = Some(stop);
    Ok(ep)
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                let _ = stream.set_nonblocking(false);
                let _ = thread::Builder::new().name("frame-reader".into()).spawn(move || read_loop(stream, tx));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                debug!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn read_loop(mut stream: TcpStream, tx: Sender<Event>) {
    let mut peer: Option<PartyId> = None;
    loop {
        let mut len = [0u8; 4];
        if stream.read_exact(&mut len).is_err() {
            break;
        }
        let n = u32::from_le_bytes(len) as usize;
        let mut bytes = Vec::with_capacity(4 + n);
        bytes.extend_from_slice(&len);
        bytes.resize(4 + n, 0);
        if stream.read_exact(&mut bytes[4..]).is_err() {
            break;
        }
        if peer.is_none() {
            peer = Frame::decode(&bytes).ok().map(|f| f.header.sender);
        }
        if tx.send(Event::Frame(bytes)).is_err() {
            return;
        }
    }
    if let Some(p) = peer {
        let _ = tx.send(Event::Closed(p));
    }
}

impl Endpoint {
    fn with_inbox(
        me: PartyId,
        inbox: Receiver<Event>,
        inbox_tx: Option<Sender<Event>>,
        outboxes: HashMap<PartyId, Outbox>,
        timeout: Duration,
    ) -> Self {
        Endpoint {
            me,
            inbox,
            _inbox_tx: inbox_tx,
            outboxes,
            pending: HashMap::new(),
            closed: HashSet::new(),
            sent: ChannelStats::default(),
            received: ChannelStats::default(),
            timeout,
            stop_listener: None,
        }
    }

    pub fn party(&self) -> &PartyId {
        &self.me
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Frames this endpoint has sent.
    pub fn sent_stats(&self) -> &ChannelStats {
        &self.sent
    }

    /// Frames that have arrived here, consumed or not.
    pub fn received_stats(&self) -> &ChannelStats {
        &self.received
    }

    pub fn send(&mut self, frame: Frame) -> Result<()> {
        if frame.header.sender != self.me {
            return Err(Error::ProtocolDesync(format!(
                "{} cannot send a frame from {}",
                self.me, frame.header.sender
            )));
        }
        let to = frame.header.receiver.clone();
        let bytes = frame.encode();
        let timeout = self.timeout;
        let outbox = self
            .outboxes
            .get_mut(&to)
            .ok_or_else(|| Error::ChannelClosed(format!("no route from {} to {to}", self.me)))?;
        match outbox {
            Outbox::Memory(tx) => tx
                .send(Event::Frame(bytes.clone()))
                .map_err(|_| Error::ChannelClosed(to.to_string()))?,
            Outbox::Tcp { addr, stream } => {
                if stream.is_none() {
                    *stream = Some(connect_with_retry(*addr, timeout)?);
                }
                let s = stream.as_mut().expect("connected above");
                s.write_all(&bytes).map_err(|e| Error::ChannelClosed(format!("{to}: {e}")))?;
            }
        }
        self.sent.record(&frame, bytes.len());
        Ok(())
    }

    /// Blocks until the frame tagged `(from, session, phase, node, slot)` arrives.
    pub fn recv(&mut self, from: &PartyId, session: u64, phase: Phase, node: u32, slot: u8) -> Result<Frame> {
        let key = (from.clone(), session, phase, node, slot);
        let deadline = Instant::now() + self.timeout;
        loop {
            if let Some(frame) = self.pending.get_mut(&key).and_then(VecDeque::pop_front) {
                return Ok(frame);
            }
            if self.closed.contains(from) {
                return Err(Error::ChannelClosed(from.to_string()));
            }
            let left = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(left) {
                Ok(Event::Frame(bytes)) => {
                    let frame = Frame::decode(&bytes)?;
                    if frame.header.receiver != self.me {
                        return Err(Error::ProtocolDesync(format!(
                            "{} received a frame addressed to {}",
                            self.me, frame.header.receiver
                        )));
                    }
                    self.received.record(&frame, bytes.len());
                    let h = &frame.header;
                    let k = (h.sender.clone(), h.session, h.phase, h.node, h.slot);
                    self.pending.entry(k).or_default().push_back(frame);
                }
                Ok(Event::Closed(p)) => {
                    self.closed.insert(p);
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Timeout(format!("{from} node {node} slot {slot} ({phase:?})")));
                }
                Err(RecvTimeoutError::Disconnected) => return Err(Error::ChannelClosed(from.to_string())),
            }
        }
    }
}

fn connect_with_retry(addr: SocketAddr, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(stream) => {
                stream.set_nodelay(true)?;
                return Ok(stream);
            }
            Err(e) if Instant::now() >= deadline => {
                return Err(Error::ConnectFailed {
                    addr: addr.to_string(),
                    reason: e.to_string(),
                })
            }
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        for outbox in self.outboxes.values_mut() {
            match outbox {
                Outbox::Memory(tx) => {
                    let _ = tx.send(Event::Closed(self.me.clone()));
                }
                Outbox::Tcp { stream, .. } => {
                    if let Some(s) = stream.take() {
                        let _ = s.shutdown(Shutdown::Both);
                    }
                }
            }
        }
        if let Some(stop) = &self.stop_listener {
            stop.store(true, Ordering::Relaxed);
        }
    }
}
