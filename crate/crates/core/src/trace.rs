//! Execution traces and their digests.
//!
//! Every executed reaction leaves one [`TraceRecord`]: the tag, the reaction,
//! whether the deadline handler ran instead of the body, and a digest of each
//! value it wrote. Two runs are considered identical when their
//! [`trace_digest`]s agree.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use sha2::{Digest, Sha256};

use crate::graph::{PortId, ReactionId};
use crate::time::Tag;

/// First eight bytes of the SHA-256 of `bytes`, big-endian.
pub fn payload_digest(bytes: &[u8]) -> u64 {
    let hash = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&hash[..8]);
    u64::from_be_bytes(head)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub tag: Tag,
    pub reaction: ReactionId,
    pub deadline_handler: bool,
    /// Ports written, in the order of first write, with payload digests.
    pub writes: Vec<(PortId, u64)>,
}

/// One line per record:
/// `time_ns,microstep,reaction[d],port:digest;port:digest`.
impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{}{},",
            self.tag.time,
            self.tag.microstep,
            self.reaction.0,
            if self.deadline_handler { "d" } else { "" }
        )?;
        for (i, (port, digest)) in self.writes.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{}:{:016x}", port.0, digest)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed trace line `{0}`")]
pub struct ParseTraceError(pub String);

impl FromStr for TraceRecord {
    type Err = ParseTraceError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let err = || ParseTraceError(line.into());
        let mut fields = line.trim_end().splitn(4, ',');
        let mut next = || fields.next().ok_or_else(err);
        let time = next()?.parse().map_err(|_| err())?;
        let microstep = next()?.parse().map_err(|_| err())?;
        let reaction = next()?;
        let (reaction, deadline_handler) = match reaction.strip_suffix('d') {
            Some(r) => (r, true),
            None => (reaction, false),
        };
        let reaction = ReactionId(reaction.parse().map_err(|_| err())?);
        let writes_field = next()?;
        let mut writes = Vec::new();
        if !writes_field.is_empty() {
            for item in writes_field.split(';') {
                let (port, digest) = item.split_once(':').ok_or_else(err)?;
                if digest.len() != 16 {
                    return Err(err());
                }
                writes.push((
                    PortId(port.parse().map_err(|_| err())?),
                    u64::from_str_radix(digest, 16).map_err(|_| err())?,
                ));
            }
        }
        Ok(TraceRecord {
            tag: Tag::new(time, microstep),
            reaction,
            deadline_handler,
            writes,
        })
    }
}

/// SHA-256 over a trace.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceDigest(pub [u8; 32]);

impl fmt::Display for TraceDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for TraceDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TraceDigest({self})")
    }
}

/// Hashes records in order. Each record is encoded big-endian as time,
/// microstep, reaction id, handler flag, write count, then `(port, digest)`
/// pairs.
pub fn trace_digest<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> TraceDigest {
    let mut hasher = Sha256::new();
    for r in records {
        hasher.update(r.tag.time.to_be_bytes());
        hasher.update(r.tag.microstep.to_be_bytes());
        hasher.update(r.reaction.0.to_be_bytes());
        hasher.update([r.deadline_handler as u8]);
        hasher.update((r.writes.len() as u32).to_be_bytes());
        for (port, digest) in &r.writes {
            hasher.update(port.0.to_be_bytes());
            hasher.update(digest.to_be_bytes());
        }
    }
    TraceDigest(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn record() -> TraceRecord {
        TraceRecord {
            tag: Tag::new(5_000_000, 2),
            reaction: ReactionId(7),
            deadline_handler: true,
            writes: vec![(PortId(3), 0xdead_beef), (PortId(4), u64::MAX)],
        }
    }

    #[test]
    fn empty_trace_hashes_empty_input() {
        assert_eq!(
            trace_digest(&[]).to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn payload_digest_is_sha256_prefix() {
        // SHA-256("abc") = ba7816bf8f01cfea...
        assert_eq!(payload_digest(b"abc"), 0xba78_16bf_8f01_cfea);
    }

    #[test]
    fn digest_matches_hand_encoding() {
        let r = record();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&5_000_000u64.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&7u32.to_be_bytes());
        bytes.push(1);
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&0xdead_beefu64.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&u64::MAX.to_be_bytes());
        let expected: [u8; 32] = Sha256::digest(&bytes).into();
        assert_eq!(trace_digest([&r]).0, expected);
    }

    #[test]
    fn line_format_round_trips() {
        let r = record();
        let line = r.to_string();
        assert_eq!(line, "5000000,2,7d,3:00000000deadbeef;4:ffffffffffffffff");
        assert_eq!(line.parse::<TraceRecord>().unwrap(), r);

        let bare = TraceRecord {
            tag: Tag::ZERO,
            reaction: ReactionId(0),
            deadline_handler: false,
            writes: vec![],
        };
        assert_eq!(bare.to_string(), "0,0,0,");
        assert_eq!("0,0,0,".parse::<TraceRecord>().unwrap(), bare);
        assert!("0,0".parse::<TraceRecord>().is_err());
        assert!("0,0,0,1:zz".parse::<TraceRecord>().is_err());
    }
}
