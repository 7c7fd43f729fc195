//! Binary layout of middleware messages.
//!
//! All integers are big-endian:
//!
//! ```text
//! [service_id:2][id:2][call_id:4][kind:1][flags:1][payload_len:4][payload][trailer]
//! ```
//!
//! Bit 0 of `flags` marks a 12-byte tag trailer (`time_ns:8`, `microstep:4`)
//! after the payload. Receivers that do not know about tags can read the
//! message with [`WireMessage::decode_ignoring_trailer`]; the header and
//! payload are unaffected by the trailer.

use alloc::vec::Vec;

use crate::time::Tag;

pub const HEADER_LEN: usize = 14;
pub const TRAILER_LEN: usize = 12;
const FLAG_TRAILER: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Request = 0,
    Response = 1,
    Notification = 2,
}

impl TryFrom<u8> for MessageKind {
    type Error = CodecError;

    fn try_from(value: u8) -> Result<Self, CodecError> {
        match value {
            0 => Ok(MessageKind::Request),
            1 => Ok(MessageKind::Response),
            2 => Ok(MessageKind::Notification),
            other => Err(CodecError::UnknownKind(other)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed message: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("malformed message: {0} bytes after the end of the message")]
    TrailingBytes(usize),
    #[error("malformed message: unknown kind {0}")]
    UnknownKind(u8),
    #[error("malformed message: reserved flag bits {0:#04x} set")]
    ReservedFlags(u8),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WireMessage {
    pub service_id: u16,
    /// Method id for requests and responses, event id for notifications.
    pub id: u16,
    pub call_id: u32,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
    pub tag: Option<Tag>,
}

impl WireMessage {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + if self.tag.is_some() { TRAILER_LEN } else { 0 }
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = u32::try_from(self.payload.len()).expect("payload shorter than 4 GiB");
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.service_id.to_be_bytes());
        out.extend_from_slice(&self.id.to_be_bytes());
        out.extend_from_slice(&self.call_id.to_be_bytes());
        out.push(self.kind as u8);
        out.push(if self.tag.is_some() { FLAG_TRAILER } else { 0 });
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&self.payload);
        if let Some(tag) = self.tag {
            out.extend_from_slice(&tag.time.to_be_bytes());
            out.extend_from_slice(&tag.microstep.to_be_bytes());
        }
        out
    }

    /// Decodes exactly one message occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let (mut msg, flags, end) = Self::decode_head(bytes)?;
        if flags & !FLAG_TRAILER != 0 {
            return Err(CodecError::ReservedFlags(flags & !FLAG_TRAILER));
        }
        let mut total = end;
        if flags & FLAG_TRAILER != 0 {
            total += TRAILER_LEN;
            let trailer = bytes.get(end..total).ok_or(CodecError::Truncated {
                expected: total,
                actual: bytes.len(),
            })?;
            msg.tag = Some(Tag::new(be_u64(&trailer[..8]), be_u32(&trailer[8..])));
        }
        if bytes.len() > total {
            return Err(CodecError::TrailingBytes(bytes.len() - total));
        }
        Ok(msg)
    }

    /// Decodes header and payload the way a tag-unaware receiver would:
    /// flags and anything after the payload are ignored.
    pub fn decode_ignoring_trailer(bytes: &[u8]) -> Result<Self, CodecError> {
        Self::decode_head(bytes).map(|(msg, _, _)| msg)
    }

    fn decode_head(bytes: &[u8]) -> Result<(Self, u8, usize), CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let kind = MessageKind::try_from(bytes[8])?;
        let flags = bytes[9];
        let len = be_u32(&bytes[10..14]) as usize;
        let end = HEADER_LEN + len;
        let payload = bytes.get(HEADER_LEN..end).ok_or(CodecError::Truncated {
            expected: end,
            actual: bytes.len(),
        })?;
        let msg = WireMessage {
            service_id: u16::from_be_bytes([bytes[0], bytes[1]]),
            id: u16::from_be_bytes([bytes[2], bytes[3]]),
            call_id: be_u32(&bytes[4..8]),
            kind,
            payload: payload.to_vec(),
            tag: None,
        };
        Ok((msg, flags, end))
    }
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b.try_into().expect("four bytes"))
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b.try_into().expect("eight bytes"))
}
