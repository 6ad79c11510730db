//! Reliable, ordered, duplex message channels for the sifting exchange.
//!
//! Messages travel as wire-encoded bytes, so any transport that moves byte
//! records in order can stand in for these.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;
use std::sync::mpsc;

use thiserror::Error;

use super::wire::{self, WireError};
use super::SiftMessage;
use crate::hardware::Party;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("peer endpoint has been dropped")]
    Disconnected,
    #[error("no message available and the peer has not closed its side")]
    WouldBlock,
    #[error("send after close")]
    Closed,
    #[error(transparent)]
    Wire(#[from] WireError),
}

pub trait Transport {
    fn send(&mut self, msg: &SiftMessage) -> Result<(), TransportError>;

    /// Next message from the peer, or `None` once the peer has closed its
    /// sending side and everything has been delivered.
    fn recv(&mut self) -> Result<Option<SiftMessage>, TransportError>;

    /// Signals that no more messages will be sent.
    fn close(&mut self);
}

#[derive(Default)]
struct Lane {
    queue: VecDeque<Vec<u8>>,
    closed: bool,
}

/// Single-threaded in-process endpoint.
pub struct MemoryEndpoint {
    outgoing: Rc<RefCell<Lane>>,
    incoming: Rc<RefCell<Lane>>,
    peer: Party,
}

/// Connected endpoints for Alice and Bob, in that order.
pub fn memory_pair() -> (MemoryEndpoint, MemoryEndpoint) {
    let a_to_b = Rc::new(RefCell::new(Lane::default()));
    let b_to_a = Rc::new(RefCell::new(Lane::default()));
    (
        MemoryEndpoint {
            outgoing: a_to_b.clone(),
            incoming: b_to_a.clone(),
            peer: Party::Bob,
        },
        MemoryEndpoint {
            outgoing: b_to_a,
            incoming: a_to_b,
            peer: Party::Alice,
        },
    )
}

impl Transport for MemoryEndpoint {
    fn send(&mut self, msg: &SiftMessage) -> Result<(), TransportError> {
        let mut lane = self.outgoing.borrow_mut();
        if lane.closed {
            return Err(TransportError::Closed);
        }
        lane.queue.push_back(wire::encode(msg));
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<SiftMessage>, TransportError> {
        let mut lane = self.incoming.borrow_mut();
        match lane.queue.pop_front() {
            Some(bytes) => Ok(Some(wire::decode(&bytes, self.peer)?.0)),
            None if lane.closed => Ok(None),
            None => Err(TransportError::WouldBlock),
        }
    }

    fn close(&mut self) {
        self.outgoing.borrow_mut().closed = true;
    }
}

/// Blocking endpoint over std channels; the two ends may live on different
/// threads.
pub struct ChannelEndpoint {
    tx: Option<mpsc::Sender<Vec<u8>>>,
    rx: mpsc::Receiver<Vec<u8>>,
    peer: Party,
}

pub fn channel_pair() -> (ChannelEndpoint, ChannelEndpoint) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelEndpoint {
            tx: Some(a_tx),
            rx: a_rx,
            peer: Party::Bob,
        },
        ChannelEndpoint {
            tx: Some(b_tx),
            rx: b_rx,
            peer: Party::Alice,
        },
    )
}

impl Transport for ChannelEndpoint {
    fn send(&mut self, msg: &SiftMessage) -> Result<(), TransportError> {
        let tx = self.tx.as_ref().ok_or(TransportError::Closed)?;
        tx.send(wire::encode(msg)).map_err(|_| TransportError::Disconnected)
    }

    fn recv(&mut self) -> Result<Option<SiftMessage>, TransportError> {
        match self.rx.recv() {
            Ok(bytes) => Ok(Some(wire::decode(&bytes, self.peer)?.0)),
            // the peer dropped its sender: closed
            Err(mpsc::RecvError) => Ok(None),
        }
    }

    fn close(&mut self) {
        self.tx = None;
    }
}
