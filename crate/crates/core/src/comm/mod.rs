//! Topics, the versioned wire envelope and transports.
//!
//! Frame layout, little-endian:
//!
//! ```text
//! len u32 | version u8 | topic u8 | sender u8 | kind|target u8 | seq u32 | pause_epoch u32 | payload | crc32 u32
//! ```
//!
//! `len` counts the bytes after itself. The checksum covers `version..payload`.
//! A heartbeat carries a 4-byte payload, so its frame is 24 bytes.

pub mod socket;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::ids::Role;
use crate::state::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::state::{GlobalUpdateStart, KeyFrameUpdate, MapBatch, NewKeyFramePayload};

pub const WIRE_VERSION: u8 = 1;

/// Bytes of a frame that are not payload.
pub const FRAME_OVERHEAD: usize = 4 + 12 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Topic {
    /// TR -> LM.
    KfNew,
    /// LM -> TR, LM -> LC.
    MapLocal,
    /// LM -> LC.
    KfForward,
    /// LC -> LM, relayed LM -> TR.
    MapGlobal,
    Discovery,
}

impl Topic {
    pub const ALL: [Topic; 5] = [Topic::KfNew, Topic::MapLocal, Topic::KfForward, Topic::MapGlobal, Topic::Discovery];

    pub fn code(self) -> u8 {
        match self {
            Topic::KfNew => 1,
            Topic::MapLocal => 2,
            Topic::KfForward => 3,
            Topic::MapGlobal => 4,
            Topic::Discovery => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Topic> {
        Topic::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Topic::KfNew => "kf/new",
            Topic::MapLocal => "map/local",
            Topic::KfForward => "kf/forward",
            Topic::MapGlobal => "map/global",
            Topic::Discovery => "discovery",
        }
    }

    /// Whether `role` may publish on this topic at all.
    ///
    /// TR publishes map/local and kf/forward only in degraded mode, when it runs
    /// local mapping itself and hands keyframes to a remote LC. TR never
    /// publishes global maps.
    pub fn may_publish(self, role: Role) -> bool {
        match self {
            Topic::KfNew => role == Role::Tr,
            Topic::MapLocal | Topic::KfForward => matches!(role, Role::Tr | Role::Lm),
            Topic::MapGlobal => matches!(role, Role::Lm | Role::Lc),
            Topic::Discovery => true,
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{role} may not publish on {topic}")]
pub struct TopicViolation {
    pub role: Role,
    pub topic: Topic,
}

pub fn check_publish(role: Role, topic: Topic) -> Result<(), TopicViolation> {
    if topic.may_publish(role) {
        Ok(())
    } else {
        Err(TopicViolation { role, topic })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    NewKeyFrame,
    KeyFrameUpdate,
    MapBatch,
    GlobalUpdateStart,
    Discovery,
    Heartbeat,
}

impl PayloadKind {
    const ALL: [PayloadKind; 6] = [
        PayloadKind::NewKeyFrame,
        PayloadKind::KeyFrameUpdate,
        PayloadKind::MapBatch,
        PayloadKind::GlobalUpdateStart,
        PayloadKind::Discovery,
        PayloadKind::Heartbeat,
    ];

    pub fn code(self) -> u8 {
        match self {
            PayloadKind::NewKeyFrame => 0,
            PayloadKind::KeyFrameUpdate => 1,
            PayloadKind::MapBatch => 2,
            PayloadKind::GlobalUpdateStart => 3,
            PayloadKind::Discovery => 4,
            PayloadKind::Heartbeat => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

/// Offloading signal: which remote module should process the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    None,
    Lm,
    Lc,
}

impl Target {
    pub fn code(self) -> u8 {
        match self {
            Target::None => 0,
            Target::Lm => 1,
            Target::Lc => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Target::None),
            1 => Some(Target::Lm),
            2 => Some(Target::Lc),
            _ => None,
        }
    }
}

/// Startup announcement. A fresh session id marks a restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Discovery {
    pub task: Role,
    pub session: u64,
}

impl Encode for Discovery {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.task).u64(self.session);
    }
}

impl Decode for Discovery {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self { task: r.get()?, session: r.u64()? })
    }
}

/// Typed view of an envelope payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    NewKeyFrame(NewKeyFramePayload),
    KeyFrameUpdate(KeyFrameUpdate),
    MapBatch(MapBatch),
    GlobalUpdateStart(GlobalUpdateStart),
    Discovery(Discovery),
    /// Sender's clock in milliseconds when the heartbeat left.
    Heartbeat {
        sent_at_ms: u32,
    },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::NewKeyFrame(_) => PayloadKind::NewKeyFrame,
            Payload::KeyFrameUpdate(_) => PayloadKind::KeyFrameUpdate,
            Payload::MapBatch(_) => PayloadKind::MapBatch,
            Payload::GlobalUpdateStart(_) => PayloadKind::GlobalUpdateStart,
            Payload::Discovery(_) => PayloadKind::Discovery,
            Payload::Heartbeat { .. } => PayloadKind::Heartbeat,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Payload::NewKeyFrame(p) => p.to_bytes(),
            Payload::KeyFrameUpdate(p) => p.to_bytes(),
            Payload::MapBatch(p) => p.to_bytes(),
            Payload::GlobalUpdateStart(p) => p.to_bytes(),
            Payload::Discovery(p) => p.to_bytes(),
            Payload::Heartbeat { sent_at_ms } => sent_at_ms.to_le_bytes().to_vec(),
        }
    }

    pub fn from_bytes(kind: PayloadKind, b: &[u8]) -> Result<Self, CodecError> {
        Ok(match kind {
            PayloadKind::NewKeyFrame => Payload::NewKeyFrame(Decode::from_bytes(b)?),
            PayloadKind::KeyFrameUpdate => Payload::KeyFrameUpdate(Decode::from_bytes(b)?),
            PayloadKind::MapBatch => Payload::MapBatch(Decode::from_bytes(b)?),
            PayloadKind::GlobalUpdateStart => Payload::GlobalUpdateStart(Decode::from_bytes(b)?),
            PayloadKind::Discovery => Payload::Discovery(Decode::from_bytes(b)?),
            PayloadKind::Heartbeat => {
                let mut r = Reader::new(b);
                let sent_at_ms = r.u32()?;
                r.finish()?;
                Payload::Heartbeat { sent_at_ms }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub topic: Topic,
    pub sender: Role,
    pub seq: u32,
    pub pause_epoch: u32,
    pub kind: PayloadKind,
    pub target: Target,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(topic: Topic, sender: Role, seq: u32, pause_epoch: u32, target: Target, payload: &Payload) -> Self {
        Self {
            version: WIRE_VERSION,
            topic,
            sender,
            seq,
            pause_epoch,
            kind: payload.kind(),
            target,
            payload: payload.to_bytes(),
        }
    }

    pub fn heartbeat(sender: Role, seq: u32, pause_epoch: u32, sent_at_ms: u32) -> Self {
        Self::new(Topic::Discovery, sender, seq, pause_epoch, Target::None, &Payload::Heartbeat { sent_at_ms })
    }

    pub fn decode_payload(&self) -> Result<Payload, CodecError> {
        Payload::from_bytes(self.kind, &self.payload)
    }

    /// Size of the encoded frame in bytes.
    pub fn wire_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("unsupported wire version {0}")]
pub struct UnsupportedVersion(pub u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown topic code {0}")]
    UnknownTopic(u8),
    #[error("unknown wire version {0}")]
    UnknownVersion(u8),
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("invalid {what} code {code}")]
    InvalidCode { what: &'static str, code: u8 },
    #[error("{0} bytes after the frame")]
    Trailing(usize),
}

pub fn encode(env: &Envelope) -> Result<Vec<u8>, UnsupportedVersion> {
    if env.version != WIRE_VERSION {
        return Err(UnsupportedVersion(env.version));
    }
    let body_len = 12 + env.payload.len() + 4;
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.push(env.version);
    out.push(env.topic.code());
    out.push(env.sender.code());
    out.push(env.kind.code() | (env.target.code() << 4));
    out.extend_from_slice(&env.seq.to_le_bytes());
    out.extend_from_slice(&env.pause_epoch.to_le_bytes());
    out.extend_from_slice(&env.payload);
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decodes the frame at the start of `b`, returning it with its length.
pub fn decode_prefix(b: &[u8]) -> Result<(Envelope, usize), DecodeError> {
    if b.len() < 4 {
        return Err(DecodeError::Truncated);
    }
    let body_len = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    if body_len < 16 || b.len() - 4 < body_len {
        return Err(DecodeError::Truncated);
    }
    let frame = &b[..4 + body_len];
    let version = frame[4];
    if version != WIRE_VERSION {
        return Err(DecodeError::UnknownVersion(version));
    }
    let (covered, crc) = frame[4..].split_at(body_len - 4);
    if crc32fast::hash(covered) != u32::from_le_bytes([crc[0], crc[1], crc[2], crc[3]]) {
        return Err(DecodeError::ChecksumMismatch);
    }
    let topic = Topic::from_code(frame[5]).ok_or(DecodeError::UnknownTopic(frame[5]))?;
    let sender = Role::from_code(frame[6]).ok_or(DecodeError::InvalidCode { what: "sender", code: frame[6] })?;
    let kind = PayloadKind::from_code(frame[7] & 0x0f)
        .ok_or(DecodeError::InvalidCode { what: "payload kind", code: frame[7] })?;
    let target = Target::from_code(frame[7] >> 4).ok_or(DecodeError::InvalidCode { what: "target", code: frame[7] })?;
    let seq = u32::from_le_bytes(frame[8..12].try_into().unwrap());
    let pause_epoch = u32::from_le_bytes(frame[12..16].try_into().unwrap());
    let payload = covered[12..].to_vec();
    Ok((Envelope { version, topic, sender, seq, pause_epoch, kind, target, payload }, frame.len()))
}

/// Decodes exactly one frame.
pub fn decode(b: &[u8]) -> Result<Envelope, DecodeError> {
    let (env, used) = decode_prefix(b)?;
    if used != b.len() {
        return Err(DecodeError::Trailing(b.len() - used));
    }
    Ok(env)
}

/// Outcome of checking an inbound sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqCheck {
    InOrder,
    /// Already seen; drop.
    Duplicate,
    /// Frames `expected..got` are missing.
    Gap {
        expected: u32,
        got: u32,
    },
}

/// Per-(sender, topic) sequence tracking on the receive side.
#[derive(Debug, Clone, Default)]
pub struct SeqFilter {
    next: HashMap<(Role, Topic), u32>,
    sessions: HashMap<Role, u64>,
}

impl SeqFilter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a discovery announcement. A new session resets the sender's
    /// counters; returns true in that case.
    pub fn on_session(&mut self, sender: Role, session: u64) -> bool {
        match self.sessions.insert(sender, session) {
            Some(old) if old == session => false,
            _ => {
                self.next.retain(|(r, _), _| *r != sender);
                true
            }
        }
    }

    pub fn check(&mut self, sender: Role, topic: Topic, seq: u32) -> SeqCheck {
        let next = self.next.entry((sender, topic)).or_insert(0);
        if seq < *next {
            return SeqCheck::Duplicate;
        }
        let expected = *next;
        *next = seq + 1;
        if seq == expected {
            SeqCheck::InOrder
        } else {
            SeqCheck::Gap { expected, got: seq }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for t in Topic::ALL {
            assert_eq!(Topic::from_code(t.code()), Some(t));
        }
        for k in PayloadKind::ALL {
            assert_eq!(PayloadKind::from_code(k.code()), Some(k));
        }
        assert_eq!(Topic::from_code(0), None);
        assert_eq!(Target::from_code(3), None);
    }

    #[test]
    fn seq_filter_detects_gaps_and_duplicates() {
        let mut f = SeqFilter::new();
        assert_eq!(f.check(Role::Tr, Topic::KfNew, 0), SeqCheck::InOrder);
        assert_eq!(f.check(Role::Tr, Topic::KfNew, 0), SeqCheck::Duplicate);
        assert_eq!(f.check(Role::Tr, Topic::KfNew, 3), SeqCheck::Gap { expected: 1, got: 3 });
        assert_eq!(f.check(Role::Tr, Topic::MapLocal, 0), SeqCheck::InOrder);
        assert!(f.on_session(Role::Tr, 9));
        assert!(!f.on_session(Role::Tr, 9));
        assert_eq!(f.check(Role::Tr, Topic::KfNew, 0), SeqCheck::InOrder);
    }
}
