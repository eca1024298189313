//! Little-endian canonical byte codec shared by payloads and the wire.

use thiserror::Error;

use crate::geometry::{Point2, Pose2};
use crate::ids::{KeyFrameId, MapId, MapPointId, Role};
use crate::kernel::{Observation, Version};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("input ended {needed} bytes early")]
    Truncated { needed: usize },
    #[error("invalid {what} code {code}")]
    InvalidCode { what: &'static str, code: u8 },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn put<T: Encode + ?Sized>(&mut self, v: &T) -> &mut Self {
        v.encode(self);
        self
    }

    /// Length-prefixed sequence.
    pub fn seq<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        self.u32(items.len() as u32);
        for it in items {
            it.encode(self);
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated { needed: n - self.remaining() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            code => Err(CodecError::InvalidCode { what: "bool", code }),
        }
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        self.take(n)
    }

    pub fn get<T: Decode>(&mut self) -> Result<T, CodecError> {
        T::decode(self)
    }

    pub fn seq<T: Decode>(&mut self) -> Result<Vec<T>, CodecError> {
        let n = self.u32()? as usize;
        // Every element takes at least one byte; refuse counts the input cannot hold.
        if n > self.remaining() {
            return Err(CodecError::Truncated { needed: n - self.remaining() });
        }
        (0..n).map(|_| T::decode(self)).collect()
    }
}

pub trait Encode {
    fn encode(&self, w: &mut Writer);

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }
}

pub trait Decode: Sized {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    /// Decodes a complete buffer, rejecting trailing bytes.
    fn from_bytes(b: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(b);
        let v = Self::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

impl Encode for Role {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.code());
    }
}

impl Decode for Role {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let code = r.u8()?;
        Role::from_code(code).ok_or(CodecError::InvalidCode { what: "role", code })
    }
}

impl Encode for KeyFrameId {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.origin).u64(self.seq);
    }
}

impl Decode for KeyFrameId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(KeyFrameId::new(r.get()?, r.u64()?))
    }
}

impl Encode for MapId {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.origin).u64(self.counter);
    }
}

impl Decode for MapId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(MapId::new(r.get()?, r.u64()?))
    }
}

impl Encode for MapPointId {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.raw());
    }
}

impl Decode for MapPointId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(MapPointId::from_raw(r.u64()?))
    }
}

impl Encode for Pose2 {
    fn encode(&self, w: &mut Writer) {
        w.f64(self.x).f64(self.y).f64(self.theta);
    }
}

impl Decode for Pose2 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Pose2 { x: r.f64()?, y: r.f64()?, theta: r.f64()? })
    }
}

impl Encode for Point2 {
    fn encode(&self, w: &mut Writer) {
        w.f64(self.x).f64(self.y);
    }
}

impl Decode for Point2 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Point2::new(r.f64()?, r.f64()?))
    }
}

impl Encode for Version {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.epoch).u64(self.lamport).u8(self.writer);
    }
}

impl Decode for Version {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Version { epoch: r.u64()?, lamport: r.u64()?, writer: r.u8()? })
    }
}

impl Encode for Observation {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.landmark_id).f64(self.range).f64(self.bearing);
    }
}

impl Decode for Observation {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Observation { landmark_id: r.u32()?, range: r.f64()?, bearing: r.f64()? })
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode(&self, w: &mut Writer) {
        self.0.encode(w);
        self.1.encode(w);
    }
}

impl<A: Decode, B: Decode> Decode for (A, B) {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode(r)?, B::decode(r)?))
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode(&self, w: &mut Writer) {
        match self {
            None => {
                w.u8(0);
            }
            Some(v) => {
                w.u8(1);
                v.encode(w);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(r)?)),
            code => Err(CodecError::InvalidCode { what: "option", code }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_little_endian() {
        let mut w = Writer::new();
        w.u32(0x0102_0304).u64(1);
        assert_eq!(w.into_bytes(), vec![4, 3, 2, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn truncated_reads_fail() {
        let mut r = Reader::new(&[1, 2, 3]);
        assert_eq!(r.u32(), Err(CodecError::Truncated { needed: 1 }));
    }

    #[test]
    fn oversized_sequence_count_is_rejected() {
        let mut w = Writer::new();
        w.u32(u32::MAX);
        let b = w.into_bytes();
        assert!(matches!(Reader::new(&b).seq::<MapPointId>(), Err(CodecError::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        assert_eq!(Pose2::from_bytes(&[0u8; 25]), Err(CodecError::Trailing(1)));
    }

    #[test]
    fn domain_values_round_trip() {
        let p = Pose2::new(1.5, -2.25, 0.125);
        assert_eq!(Pose2::from_bytes(&p.to_bytes()).unwrap(), p);
        let k = KeyFrameId::new(Role::Lc, 77);
        assert_eq!(KeyFrameId::from_bytes(&k.to_bytes()).unwrap(), k);
        let v = Version { epoch: 3, lamport: 9, writer: 2 };
        assert_eq!(Version::from_bytes(&v.to_bytes()).unwrap(), v);
        let o: Option<MapPointId> = Some(MapPointId::mint(Role::Tr, 5));
        assert_eq!(Option::<MapPointId>::from_bytes(&o.to_bytes()).unwrap(), o);
    }

    #[test]
    fn bad_role_code_is_typed() {
        assert_eq!(Role::from_bytes(&[9]), Err(CodecError::InvalidCode { what: "role", code: 9 }));
    }
}
