//! Sifting between Alice and Bob.
//!
//! Alice announces, for every coincidence she holds, only whether it fell in
//! a satellite peak or in the central peak. Bob answers keep when his own
//! class matches and drop otherwise. Kept satellite events become time-basis
//! bits (early = 0, late = 1), kept central events energy-basis bits
//! (`-` = 0, `+` = 1). Neither slot side nor port ever crosses the channel,
//! so the transcript depends on the class sequences alone.
//!
//! Mixed-class events are announced and then dropped rather than suppressed,
//! so every coincidence is accounted for in the transcript.

pub mod transport;
pub mod wire;

use std::collections::VecDeque;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{Party, TripleCoincidence};
use crate::quantum::{PortLabel, TimeSlot};
use transport::{memory_pair, Transport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PeakClass {
    Satellite,
    Central,
}

impl fmt::Display for PeakClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeakClass::Satellite => "satellite",
            PeakClass::Central => "central",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Time,
    Energy,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Time, Basis::Energy];

    pub fn name(self) -> &'static str {
        match self {
            Basis::Time => "time",
            Basis::Energy => "energy",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Announce { event_id: u64, class: PeakClass },
    Keep { event_id: u64 },
    Drop { event_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SiftMessage {
    pub sender: Party,
    pub kind: MessageKind,
}

impl SiftMessage {
    pub fn event_id(&self) -> u64 {
        match self.kind {
            MessageKind::Announce { event_id, .. }
            | MessageKind::Keep { event_id }
            | MessageKind::Drop { event_id } => event_id,
        }
    }
}

impl fmt::Display for SiftMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MessageKind::Announce { event_id, class } => {
                write!(f, "{} announce {} {}", self.sender, event_id, class)
            }
            MessageKind::Keep { event_id } => write!(f, "{} keep {}", self.sender, event_id),
            MessageKind::Drop { event_id } => write!(f, "{} drop {}", self.sender, event_id),
        }
    }
}

/// One party's view of a coincidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalEvent {
    pub event_id: u64,
    pub slot: TimeSlot,
    pub port: PortLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyBit {
    pub event_id: u64,
    pub basis: Basis,
    pub value: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiscardReason {
    ClassMismatch,
    /// Announced by Alice but Bob holds no event with that id.
    MissingAtBob,
    /// Held by Bob but never announced.
    NotAnnounced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Discard {
    pub party: Party,
    pub event_id: u64,
    pub reason: DiscardReason,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("{party} received a reply for unknown event {event_id}")]
    UnknownEvent { party: Party, event_id: u64 },
    #[error("{party} expected a reply for event {expected}, got {got}")]
    OutOfOrder { party: Party, expected: u64, got: u64 },
    #[error("{party} received an unexpected message: {message}")]
    UnexpectedMessage { party: Party, message: String },
    #[error("{party} event ids must be strictly increasing ({previous} then {next})")]
    NonIncreasing { party: Party, previous: u64, next: u64 },
    #[error("channel closed with {0} announcements unanswered")]
    MissingReplies(usize),
    #[error("keys are not aligned at position {position}")]
    KeyMisaligned { position: usize },
    #[error("sample fraction must lie in (0, 1], got {0}")]
    BadSampleFraction(f64),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub fn classify_local(slot: TimeSlot, _port: PortLabel) -> PeakClass {
    if slot.is_satellite() {
        PeakClass::Satellite
    } else {
        PeakClass::Central
    }
}

/// Bit derived from local data for a kept event.
pub fn local_bit(event: &LocalEvent) -> KeyBit {
    let (basis, value) = match classify_local(event.slot, event.port) {
        PeakClass::Satellite => (Basis::Time, event.slot == TimeSlot::LATE),
        PeakClass::Central => (Basis::Energy, event.port == PortLabel::Plus),
    };
    KeyBit {
        event_id: event.event_id,
        basis,
        value,
    }
}

fn check_increasing(party: Party, events: &[LocalEvent]) -> Result<(), ProtocolError> {
    for w in events.windows(2) {
        if w[1].event_id <= w[0].event_id {
            return Err(ProtocolError::NonIncreasing {
                party,
                previous: w[0].event_id,
                next: w[1].event_id,
            });
        }
    }
    Ok(())
}

/// What one party ends up with.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartyOutput {
    pub key: Vec<KeyBit>,
    pub discarded: Vec<Discard>,
    pub sent: Vec<SiftMessage>,
}

/// Alice's side: announce everything, then consume Bob's verdicts in order.
pub struct AliceMachine {
    pending: VecDeque<LocalEvent>,
    announced: Vec<LocalEvent>,
    out: PartyOutput,
}

impl AliceMachine {
    pub fn new(events: Vec<LocalEvent>) -> Result<Self, ProtocolError> {
        check_increasing(Party::Alice, &events)?;
        Ok(Self {
            pending: VecDeque::new(),
            announced: events,
            out: PartyOutput::default(),
        })
    }

    pub fn announce<T: Transport>(&mut self, transport: &mut T) -> Result<(), ProtocolError> {
        for ev in &self.announced {
            let msg = SiftMessage {
                sender: Party::Alice,
                kind: MessageKind::Announce {
                    event_id: ev.event_id,
                    class: classify_local(ev.slot, ev.port),
                },
            };
            transport.send(&msg)?;
            self.out.sent.push(msg);
            self.pending.push_back(*ev);
        }
        transport.close();
        Ok(())
    }

    pub fn collect<T: Transport>(&mut self, transport: &mut T) -> Result<(), ProtocolError> {
        while let Some(msg) = transport.recv()? {
            let (id, keep) = match msg.kind {
                MessageKind::Keep { event_id } => (event_id, true),
                MessageKind::Drop { event_id } => (event_id, false),
                MessageKind::Announce { .. } => {
                    return Err(ProtocolError::UnexpectedMessage {
                        party: Party::Alice,
                        message: msg.to_string(),
                    })
                }
            };
            let Some(front) = self.pending.front() else {
                return Err(ProtocolError::UnknownEvent {
                    party: Party::Alice,
                    event_id: id,
                });
            };
            if front.event_id != id {
                let known = self.pending.iter().any(|e| e.event_id == id);
                return Err(if known {
                    ProtocolError::OutOfOrder {
                        party: Party::Alice,
                        expected: front.event_id,
                        got: id,
                    }
                } else {
                    ProtocolError::UnknownEvent {
                        party: Party::Alice,
                        event_id: id,
                    }
                });
            }
            let ev = self.pending.pop_front().expect("front checked");
            if keep {
                self.out.key.push(local_bit(&ev));
            } else {
                self.out.discarded.push(Discard {
                    party: Party::Alice,
                    event_id: id,
                    reason: DiscardReason::ClassMismatch,
                });
            }
        }
        if !self.pending.is_empty() {
            return Err(ProtocolError::MissingReplies(self.pending.len()));
        }
        Ok(())
    }

    pub fn finish(self) -> PartyOutput {
        self.out
    }
}

/// Bob's side: answer each announcement from his own data.
pub struct BobMachine {
    events: Vec<LocalEvent>,
    cursor: usize,
    last_id: Option<u64>,
    out: PartyOutput,
}

impl BobMachine {
    pub fn new(events: Vec<LocalEvent>) -> Result<Self, ProtocolError> {
        check_increasing(Party::Bob, &events)?;
        Ok(Self {
            events,
            cursor: 0,
            last_id: None,
            out: PartyOutput::default(),
        })
    }

    fn skip_unannounced(&mut self, before: u64) {
        while let Some(ev) = self.events.get(self.cursor) {
            if ev.event_id >= before {
                break;
            }
            self.out.discarded.push(Discard {
                party: Party::Bob,
                event_id: ev.event_id,
                reason: DiscardReason::NotAnnounced,
            });
            self.cursor += 1;
        }
    }

    pub fn run<T: Transport>(&mut self, transport: &mut T) -> Result<(), ProtocolError> {
        while let Some(msg) = transport.recv()? {
            let MessageKind::Announce { event_id, class } = msg.kind else {
                return Err(ProtocolError::UnexpectedMessage {
                    party: Party::Bob,
                    message: msg.to_string(),
                });
            };
            if let Some(prev) = self.last_id {
                if event_id <= prev {
                    return Err(ProtocolError::OutOfOrder {
                        party: Party::Bob,
                        expected: prev + 1,
                        got: event_id,
                    });
                }
            }
            self.last_id = Some(event_id);
            self.skip_unannounced(event_id);

            let mine = self
                .events
                .get(self.cursor)
                .filter(|e| e.event_id == event_id)
                .copied();
            let keep = match mine {
                Some(ev) => {
                    self.cursor += 1;
                    if classify_local(ev.slot, ev.port) == class {
                        self.out.key.push(local_bit(&ev));
                        true
                    } else {
                        self.out.discarded.push(Discard {
                            party: Party::Bob,
                            event_id,
                            reason: DiscardReason::ClassMismatch,
                        });
                        false
                    }
                }
                None => {
                    self.out.discarded.push(Discard {
                        party: Party::Bob,
                        event_id,
                        reason: DiscardReason::MissingAtBob,
                    });
                    false
                }
            };
            let reply = SiftMessage {
                sender: Party::Bob,
                kind: if keep {
                    MessageKind::Keep { event_id }
                } else {
                    MessageKind::Drop { event_id }
                },
            };
            transport.send(&reply)?;
            self.out.sent.push(reply);
        }
        self.skip_unannounced(u64::MAX);
        if let Some(ev) = self.events.get(self.cursor) {
            // an event with id u64::MAX that was never announced
            self.out.discarded.push(Discard {
                party: Party::Bob,
                event_id: ev.event_id,
                reason: DiscardReason::NotAnnounced,
            });
            self.cursor += 1;
        }
        transport.close();
        Ok(())
    }

    pub fn finish(self) -> PartyOutput {
        self.out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftOutcome {
    pub alice_key: Vec<KeyBit>,
    pub bob_key: Vec<KeyBit>,
    pub discarded: Vec<Discard>,
    /// Alice's messages followed by Bob's, each in sending order.
    pub transcript: Vec<SiftMessage>,
}

impl SiftOutcome {
    /// Transcript as bytes: per message, the sender symbol followed by the
    /// wire record.
    pub fn transcript_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in &self.transcript {
            out.push(m.sender.symbol() as u8);
            wire::encode_into(m, &mut out);
        }
        out
    }
}

/// Runs both state machines over an in-process transport.
pub fn sift(alice: Vec<LocalEvent>, bob: Vec<LocalEvent>) -> Result<SiftOutcome, ProtocolError> {
    let (mut ta, mut tb) = memory_pair();
    sift_over(alice, bob, &mut ta, &mut tb)
}

/// Runs both state machines on the current thread over the given endpoints.
/// The transport must buffer all of Alice's announcements.
pub fn sift_over<A: Transport, B: Transport>(
    alice: Vec<LocalEvent>,
    bob: Vec<LocalEvent>,
    alice_end: &mut A,
    bob_end: &mut B,
) -> Result<SiftOutcome, ProtocolError> {
    let mut a = AliceMachine::new(alice)?;
    let mut b = BobMachine::new(bob)?;
    a.announce(alice_end)?;
    b.run(bob_end)?;
    a.collect(alice_end)?;
    Ok(assemble(a.finish(), b.finish()))
}

pub fn assemble(a: PartyOutput, b: PartyOutput) -> SiftOutcome {
    let mut discarded = a.discarded;
    discarded.extend(b.discarded);
    let mut transcript = a.sent;
    transcript.extend(b.sent);
    SiftOutcome {
        alice_key: a.key,
        bob_key: b.key,
        discarded,
        transcript,
    }
}

/// Splits coincidences into the two parties' local records, keyed by pump
/// pulse index.
pub fn split_coincidences(coincidences: &[TripleCoincidence]) -> (Vec<LocalEvent>, Vec<LocalEvent>) {
    coincidences
        .iter()
        .map(|c| {
            (
                LocalEvent {
                    event_id: c.pulse_index,
                    slot: c.alice.0,
                    port: c.alice.1,
                },
                LocalEvent {
                    event_id: c.pulse_index,
                    slot: c.bob.0,
                    port: c.bob.1,
                },
            )
        })
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberReport {
    pub basis: Basis,
    pub n_sifted: u64,
    pub n_errors: u64,
    /// `None` when no bits of this basis were compared.
    pub qber: Option<f64>,
    pub std_err: Option<f64>,
}

impl QberReport {
    pub fn from_counts(basis: Basis, n_sifted: u64, n_errors: u64) -> Self {
        let (qber, std_err) = if n_sifted == 0 {
            (None, None)
        } else {
            let n = n_sifted as f64;
            let q = n_errors as f64 / n;
            (Some(q), Some((q * (1.0 - q) / n).sqrt()))
        };
        Self {
            basis,
            n_sifted,
            n_errors,
            qber,
            std_err,
        }
    }

    /// Count-weighted combination of two reports of the same basis.
    pub fn combine(&self, other: &QberReport) -> QberReport {
        QberReport::from_counts(
            self.basis,
            self.n_sifted + other.n_sifted,
            self.n_errors + other.n_errors,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    pub time: QberReport,
    pub energy: QberReport,
    /// Unsampled bits, still usable as key.
    pub alice_remaining: Vec<KeyBit>,
    pub bob_remaining: Vec<KeyBit>,
}

impl QberEstimate {
    pub fn report(&self, basis: Basis) -> &QberReport {
        match basis {
            Basis::Time => &self.time,
            Basis::Energy => &self.energy,
        }
    }

    /// Both bases pooled.
    pub fn total(&self) -> QberReport {
        let mut t = self.time.combine(&self.energy);
        t.basis = Basis::Time;
        t
    }
}

/// Compares a seeded random sample of `round(sample_fraction * n)` aligned
/// key positions; the sampled bits are consumed.
pub fn estimate_qber(
    alice_key: &[KeyBit],
    bob_key: &[KeyBit],
    sample_fraction: f64,
    seed: u64,
) -> Result<QberEstimate, ProtocolError> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(ProtocolError::BadSampleFraction(sample_fraction));
    }
    if alice_key.len() != bob_key.len() {
        return Err(ProtocolError::KeyMisaligned {
            position: alice_key.len().min(bob_key.len()),
        });
    }
    for (k, (a, b)) in alice_key.iter().zip(bob_key).enumerate() {
        if a.event_id != b.event_id || a.basis != b.basis {
            return Err(ProtocolError::KeyMisaligned { position: k });
        }
    }
    let n = alice_key.len();
    let amount = ((sample_fraction * n as f64).round() as usize).min(n);
    let mut sampled = vec![false; n];
    if amount == n {
        sampled.iter_mut().for_each(|s| *s = true);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in index::sample(&mut rng, n, amount) {
            sampled[k] = true;
        }
    }
    let mut counts = [(0u64, 0u64); 2];
    let mut alice_remaining = Vec::with_capacity(n - amount);
    let mut bob_remaining = Vec::with_capacity(n - amount);
    for k in 0..n {
        let (a, b) = (alice_key[k], bob_key[k]);
        if sampled[k] {
            let c = &mut counts[a.basis as usize];
            c.0 += 1;
            c.1 += u64::from(a.value != b.value);
        } else {
            alice_remaining.push(a);
            bob_remaining.push(b);
        }
    }
    Ok(QberEstimate {
        time: QberReport::from_counts(Basis::Time, counts[0].0, counts[0].1),
        energy: QberReport::from_counts(Basis::Energy, counts[1].0, counts[1].1),
        alice_remaining,
        bob_remaining,
    })
}
