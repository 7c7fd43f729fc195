//! Safe-to-process arithmetic for messages crossing platforms.
//!
//! A message sent at tag `t` under a deadline `D` may arrive at most `L`
//! late and observed by a clock that is off by at most `E`. Scheduling it
//! at `t + D + L + E` on the receiver therefore guarantees that no message
//! with a smaller tag can still be in flight.

use alloc::vec::Vec;
use core::fmt;

use crate::time::{Duration, Tag};

/// `t + D + L + E`.
pub fn safe_tag(t: Tag, deadline: Duration, max_latency: Duration, max_skew: Duration) -> Tag {
    t.delayed(deadline + max_latency + max_skew)
}

/// What a receiver does with a message that carries no tag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum UntaggedPolicy {
    /// Reject with [`TransactorError::UntaggedMessage`].
    #[default]
    Fail,
    /// Tag with the physical time of reception.
    PhysicalTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransactorConfig {
    pub deadline: Duration,
    pub max_latency: Duration,
    pub max_skew: Duration,
    pub untagged_policy: UntaggedPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("transactor deadline must be positive")]
pub struct ZeroDeadline;

impl TransactorConfig {
    pub fn new(
        deadline: Duration,
        max_latency: Duration,
        max_skew: Duration,
    ) -> Result<Self, ZeroDeadline> {
        if deadline.is_zero() {
            return Err(ZeroDeadline);
        }
        Ok(TransactorConfig {
            deadline,
            max_latency,
            max_skew,
            untagged_policy: UntaggedPolicy::Fail,
        })
    }

    pub fn with_untagged_policy(mut self, policy: UntaggedPolicy) -> Self {
        self.untagged_policy = policy;
        self
    }

    /// Tag written into the trailer of a message sent at `t`.
    pub fn send_tag(&self, t: Tag) -> Tag {
        t.delayed(self.deadline)
    }

    /// `L + E`, the margin a receiver adds to a trailer.
    pub fn receive_margin(&self) -> Duration {
        self.max_latency + self.max_skew
    }

    /// Tag at which a received message may be processed.
    ///
    /// `trailer` already includes the sender's deadline. Untagged messages
    /// are either refused or stamped with `received_at` without any margin.
    pub fn admit(
        &self,
        trailer: Option<Tag>,
        received_at: u64,
    ) -> Result<Admission, TransactorError> {
        match (trailer, self.untagged_policy) {
            (Some(g), _) => Ok(Admission::Tagged(g.delayed(self.receive_margin()))),
            (None, UntaggedPolicy::PhysicalTime) => Ok(Admission::Physical(Tag::at(received_at))),
            (None, UntaggedPolicy::Fail) => Err(TransactorError::UntaggedMessage { received_at }),
        }
    }
}

/// A response must not carry a tag earlier than the request it answers.
///
/// `request` is the tag the request was delivered at, or `None` when no
/// request is outstanding; such a response is reported against
/// [`Tag::MAX`], since any request it could answer lies in the future.
pub fn check_causality(request: Option<Tag>, response: Tag) -> Result<(), TransactorError> {
    match request {
        Some(request) if response >= request => Ok(()),
        _ => Err(TransactorError::CausalityBreach {
            request: request.unwrap_or(Tag::MAX),
            response,
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    /// Must be processed at exactly this tag.
    Tagged(Tag),
    /// Stamped with physical time; may be lifted past the current tag.
    Physical(Tag),
}

impl Admission {
    pub fn tag(self) -> Tag {
        match self {
            Admission::Tagged(t) | Admission::Physical(t) => t,
        }
    }
}

/// Errors a transactor reports on its error port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TransactorError {
    #[error("deadline {deadline} violated for tag {tag}")]
    DeadlineViolation { tag: Tag, deadline: Duration },
    #[error("untagged message received at {received_at} ns")]
    UntaggedMessage { received_at: u64 },
    #[error("message for tag {tag} arrived after tag {current} was processed")]
    StaleTag { tag: Tag, current: Tag },
    #[error("response at {response} precedes the request delivered at {request}")]
    CausalityBreach { request: Tag, response: Tag },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed transactor error encoding")]
pub struct MalformedError;

impl TransactorError {
    /// Fixed 25-byte encoding: a code byte followed by two tag-sized fields.
    pub fn encode(&self) -> Vec<u8> {
        let (code, a, b) = match *self {
            TransactorError::DeadlineViolation { tag, deadline } => {
                (0u8, tag, Tag::at(deadline.as_nanos()))
            }
            TransactorError::UntaggedMessage { received_at } => {
                (1, Tag::at(received_at), Tag::ZERO)
            }
            TransactorError::StaleTag { tag, current } => (2, tag, current),
            TransactorError::CausalityBreach { request, response } => (3, request, response),
        };
        let mut out = Vec::with_capacity(25);
        out.push(code);
        for t in [a, b] {
            out.extend_from_slice(&t.time.to_be_bytes());
            out.extend_from_slice(&t.microstep.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MalformedError> {
        if bytes.len() != 25 {
            return Err(MalformedError);
        }
        let tag = |at: usize| {
            Tag::new(
                u64::from_be_bytes(bytes[at..at + 8].try_into().unwrap()),
                u32::from_be_bytes(bytes[at + 8..at + 12].try_into().unwrap()),
            )
        };
        let (a, b) = (tag(1), tag(13));
        Ok(match bytes[0] {
            0 => TransactorError::DeadlineViolation {
                tag: a,
                deadline: Duration::from_nanos(b.time),
            },
            1 => TransactorError::UntaggedMessage {
                received_at: a.time,
            },
            2 => TransactorError::StaleTag { tag: a, current: b },
            3 => TransactorError::CausalityBreach {
                request: a,
                response: b,
            },
            _ => return Err(MalformedError),
        })
    }
}

impl fmt::Display for TransactorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "D={} L={} E={}",
            self.deadline, self.max_latency, self.max_skew
        )
    }
}
