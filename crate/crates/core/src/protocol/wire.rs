//! Binary encoding of sift messages.
//!
//! Each record is a 4-byte big-endian length prefix followed by the body:
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 1    | version (currently 1)                        |
//! | 1      | 1    | kind: 1 = announce, 2 = keep, 3 = drop       |
//! | 2      | 8    | event id, unsigned big-endian                |
//! | 10     | 1    | peak class, announce only: 0 = satellite, 1 = central |
//!
//! Announce bodies are 11 bytes, keep/drop bodies 10 bytes. The sender is
//! implied by the channel direction and is not encoded.

use thiserror::Error;

use super::{MessageKind, PeakClass, SiftMessage};
use crate::hardware::Party;

pub const WIRE_VERSION: u8 = 1;
pub const LENGTH_PREFIX: usize = 4;

const KIND_ANNOUNCE: u8 = 1;
const KIND_KEEP: u8 = 2;
const KIND_DROP: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated record: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("unknown message kind {0}")]
    Kind(u8),
    #[error("unknown peak class {0}")]
    Class(u8),
    #[error("body length {length} does not match message kind {kind}")]
    Length { kind: u8, length: usize },
}

pub fn encode(msg: &SiftMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(LENGTH_PREFIX + 11);
    encode_into(msg, &mut out);
    out
}

pub fn encode_into(msg: &SiftMessage, out: &mut Vec<u8>) {
    let (kind, id, class) = match msg.kind {
        MessageKind::Announce { event_id, class } => (KIND_ANNOUNCE, event_id, Some(class)),
        MessageKind::Keep { event_id } => (KIND_KEEP, event_id, None),
        MessageKind::Drop { event_id } => (KIND_DROP, event_id, None),
    };
    let len: u32 = if class.is_some() { 11 } else { 10 };
    out.extend_from_slice(&len.to_be_bytes());
    out.push(WIRE_VERSION);
    out.push(kind);
    out.extend_from_slice(&id.to_be_bytes());
    if let Some(c) = class {
        out.push(match c {
            PeakClass::Satellite => 0,
            PeakClass::Central => 1,
        });
    }
}

/// Decodes one record from the front of `buf`, returning the message and the
/// number of bytes consumed.
pub fn decode(buf: &[u8], sender: Party) -> Result<(SiftMessage, usize), WireError> {
    if buf.len() < LENGTH_PREFIX {
        return Err(WireError::Truncated {
            needed: LENGTH_PREFIX,
            available: buf.len(),
        });
    }
    let len = u32::from_be_bytes(buf[..LENGTH_PREFIX].try_into().unwrap()) as usize;
    let total = LENGTH_PREFIX + len;
    if buf.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            available: buf.len(),
        });
    }
    let body = &buf[LENGTH_PREFIX..total];
    if body.len() < 10 {
        return Err(WireError::Truncated {
            needed: LENGTH_PREFIX + 10,
            available: total,
        });
    }
    if body[0] != WIRE_VERSION {
        return Err(WireError::Version(body[0]));
    }
    let kind = body[1];
    let event_id = u64::from_be_bytes(body[2..10].try_into().unwrap());
    let expected = match kind {
        KIND_ANNOUNCE => 11,
        KIND_KEEP | KIND_DROP => 10,
        k => return Err(WireError::Kind(k)),
    };
    if body.len() != expected {
        return Err(WireError::Length { kind, length: len });
    }
    let kind = match kind {
        KIND_ANNOUNCE => MessageKind::Announce {
            event_id,
            class: match body[10] {
                0 => PeakClass::Satellite,
                1 => PeakClass::Central,
                c => return Err(WireError::Class(c)),
            },
        },
        KIND_KEEP => MessageKind::Keep { event_id },
        _ => MessageKind::Drop { event_id },
    };
    Ok((SiftMessage { sender, kind }, total))
}

/// Decodes a buffer holding a sequence of records.
pub fn decode_all(mut buf: &[u8], sender: Party) -> Result<Vec<SiftMessage>, WireError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let (msg, used) = decode(buf, sender)?;
        out.push(msg);
        buf = &buf[used..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn announce_vector() {
        let msg = SiftMessage {
            sender: Party::Alice,
            kind: MessageKind::Announce {
                event_id: 0x0102_0304_0506_0708,
                class: PeakClass::Central,
            },
        };
        assert_eq!(
            encode(&msg),
            [0, 0, 0, 11, 1, 1, 1, 2, 3, 4, 5, 6, 7, 8, 1]
        );
        let sat = SiftMessage {
            sender: Party::Alice,
            kind: MessageKind::Announce {
                event_id: 42,
                class: PeakClass::Satellite,
            },
        };
        assert_eq!(encode(&sat), [0, 0, 0, 11, 1, 1, 0, 0, 0, 0, 0, 0, 0, 42, 0]);
    }

    #[test]
    fn keep_and_drop_vectors() {
        let keep = SiftMessage {
            sender: Party::Bob,
            kind: MessageKind::Keep { event_id: 258 },
        };
        assert_eq!(encode(&keep), [0, 0, 0, 10, 1, 2, 0, 0, 0, 0, 0, 0, 1, 2]);
        let drop = SiftMessage {
            sender: Party::Bob,
            kind: MessageKind::Drop { event_id: u64::MAX },
        };
        assert_eq!(
            encode(&drop),
            [0, 0, 0, 10, 1, 3, 255, 255, 255, 255, 255, 255, 255, 255]
        );
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(&[0, 0], Party::Bob), Err(WireError::Truncated { .. })));
        assert!(matches!(
            decode(&[0, 0, 0, 10, 1, 2, 0, 0], Party::Bob),
            Err(WireError::Truncated { .. })
        ));
        assert_eq!(
            decode(&[0, 0, 0, 10, 2, 2, 0, 0, 0, 0, 0, 0, 0, 1], Party::Bob),
            Err(WireError::Version(2))
        );
        assert_eq!(
            decode(&[0, 0, 0, 10, 1, 9, 0, 0, 0, 0, 0, 0, 0, 1], Party::Bob),
            Err(WireError::Kind(9))
        );
        assert_eq!(
            decode(&[0, 0, 0, 11, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1, 7], Party::Alice),
            Err(WireError::Class(7))
        );
        assert_eq!(
            decode(&[0, 0, 0, 11, 1, 2, 0, 0, 0, 0, 0, 0, 0, 1, 0], Party::Bob),
            Err(WireError::Length { kind: 2, length: 11 })
        );
    }

    fn arb_message() -> impl Strategy<Value = SiftMessage> {
        let kind = prop_oneof![
            (any::<u64>(), any::<bool>()).prop_map(|(event_id, c)| MessageKind::Announce {
                event_id,
                class: if c { PeakClass::Central } else { PeakClass::Satellite },
            }),
            any::<u64>().prop_map(|event_id| MessageKind::Keep { event_id }),
            any::<u64>().prop_map(|event_id| MessageKind::Drop { event_id }),
        ];
        (kind, any::<bool>()).prop_map(|(kind, a)| SiftMessage {
            sender: if a { Party::Alice } else { Party::Bob },
            kind,
        })
    }

    proptest! {
        #[test]
        fn stream_roundtrip(msgs in proptest::collection::vec(arb_message(), 0..32), sender_alice in any::<bool>()) {
            let sender = if sender_alice { Party::Alice } else { Party::Bob };
            let msgs: Vec<_> = msgs.into_iter().map(|m| SiftMessage { sender, ..m }).collect();
            let mut buf = Vec::new();
            for m in &msgs {
                encode_into(m, &mut buf);
            }
            prop_assert_eq!(decode_all(&buf, sender).unwrap(), msgs);
        }
    }
}
