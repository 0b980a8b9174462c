//! In-process duplex links between parties.
//!
//! Links are FIFO and lossless. Latency is charged at the receiver: a message
//! sent at time `s` is not handed over before `s + latency`, so a sender is
//! never blocked and back-to-back messages overlap in flight.

use std::sync::mpsc::{self, Receiver, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::message::{Message, Tag};
use super::transcript::{Direction, LoggedMessage};
use super::{Party, ProtocolError};

struct Envelope {
    sent_at: Instant,
    bytes: Vec<u8>,
}

pub struct Endpoint {
    local: Party,
    peer: Party,
    tx: Sender<Envelope>,
    rx: Receiver<Envelope>,
    latency: Duration,
    log: Vec<LoggedMessage>,
}

/// Connected endpoints for `a` and `b`.
pub fn duplex(a: Party, b: Party, latency: Duration) -> (Endpoint, Endpoint) {
    let (tx_ab, rx_ab) = mpsc::channel();
    let (tx_ba, rx_ba) = mpsc::channel();
    (
        Endpoint { local: a, peer: b, tx: tx_ab, rx: rx_ba, latency, log: Vec::new() },
        Endpoint { local: b, peer: a, tx: tx_ba, rx: rx_ab, latency, log: Vec::new() },
    )
}

impl Endpoint {
    pub fn local(&self) -> Party {
        self.local
    }

    pub fn peer(&self) -> Party {
        self.peer
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let bytes = msg.to_wire();
        self.log.push(LoggedMessage {
            direction: Direction::Sent,
            peer: self.peer,
            tag: msg.tag,
            items: msg.items.clone(),
            bytes: bytes.len(),
        });
        self.tx
            .send(Envelope { sent_at: Instant::now(), bytes })
            .map_err(|_| ProtocolError::Disconnected { peer: self.peer })
    }

    /// Builds and sends a message from this endpoint to its peer.
    pub fn send_items(&mut self, tag: Tag, items: Vec<String>) -> Result<(), ProtocolError> {
        let msg = Message::new(tag, self.local, self.peer, items);
        self.send(&msg)
    }

    pub fn abort(&mut self, reason: &str) {
        let msg = Message::abort(self.local, self.peer, reason);
        // the peer may already be gone, which is fine for an abort
        let _ = self.send(&msg);
    }

    /// Next message, which must carry `expected`.
    pub fn recv(&mut self, expected: Tag) -> Result<Message, ProtocolError> {
        let msg = self.recv_any()?;
        if msg.tag == Tag::Abort {
            return Err(ProtocolError::Aborted { by: self.peer, reason: msg.text() });
        }
        if msg.tag != expected {
            return Err(ProtocolError::UnexpectedMessage { expected, found: msg.tag });
        }
        Ok(msg)
    }

    pub fn recv_any(&mut self) -> Result<Message, ProtocolError> {
        let envelope = self.rx.recv().map_err(|_| ProtocolError::Disconnected { peer: self.peer })?;
        let due = envelope.sent_at + self.latency;
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
        let msg = Message::from_wire(&envelope.bytes, self.peer, self.local)?;
        self.log.push(LoggedMessage {
            direction: Direction::Received,
            peer: self.peer,
            tag: msg.tag,
            items: msg.items.clone(),
            bytes: envelope.bytes.len(),
        });
        Ok(msg)
    }

    pub fn take_log(&mut self) -> Vec<LoggedMessage> {
        std::mem::take(&mut self.log)
    }
}
