use std::collections::HashMap;
use std::sync::Mutex;
use std::thread::{self, ThreadId};

use tagsoa_core::Tag;

use super::{EndpointId, MiddlewareError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BypassKey {
    pub endpoint: EndpointId,
    pub call_id: u32,
    pub thread: ThreadId,
}

/// Carries tags past a middleware API that has no room for them.
///
/// Each key holds at most one tag. A transactor puts the tag right before
/// handing a message to the middleware and the binding takes it when it
/// builds the wire message, or the other way round on reception.
///
/// Slots are private to the calling thread. A put and its matching take
/// always happen on one thread, and reactions running in parallel on a
/// shared endpoint never see each other's tags even if their call ids
/// coincide.
#[derive(Default)]
pub struct TimestampBypass {
    slots: Mutex<HashMap<BypassKey, Tag>>,
}

impl TimestampBypass {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, endpoint: EndpointId, call_id: u32, tag: Tag) -> Result<(), MiddlewareError> {
        let mut slots = self.slots.lock().expect("bypass lock");
        let key = BypassKey {
            endpoint,
            call_id,
            thread: thread::current().id(),
        };
        if slots.contains_key(&key) {
            return Err(MiddlewareError::BypassOccupied { endpoint, call_id });
        }
        slots.insert(key, tag);
        Ok(())
    }

    pub fn take(&self, endpoint: EndpointId, call_id: u32) -> Result<Tag, MiddlewareError> {
        self.slots
            .lock()
            .expect("bypass lock")
            .remove(&BypassKey {
                endpoint,
                call_id,
                thread: thread::current().id(),
            })
            .ok_or(MiddlewareError::BypassEmpty { endpoint, call_id })
    }

    pub fn is_empty(&self) -> bool {
        self.slots.lock().expect("bypass lock").is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: u64 = 1_000_000;

    #[test]
    fn put_then_take() {
        let b = TimestampBypass::new();
        let ep = EndpointId(0);
        b.put(ep, 1, Tag::at(30 * MS)).unwrap();
        assert_eq!(b.take(ep, 1), Ok(Tag::at(30 * MS)));
        assert_eq!(
            b.take(ep, 1),
            Err(MiddlewareError::BypassEmpty {
                endpoint: ep,
                call_id: 1
            })
        );
    }

    #[test]
    fn keys_are_independent() {
        let b = TimestampBypass::new();
        let ep = EndpointId(0);
        b.put(ep, 1, Tag::at(1)).unwrap();
        b.put(ep, 2, Tag::at(2)).unwrap();
        b.put(EndpointId(1), 2, Tag::at(3)).unwrap();
        assert_eq!(b.take(ep, 2), Ok(Tag::at(2)));
        assert_eq!(b.take(ep, 1), Ok(Tag::at(1)));
        assert!(b.put(EndpointId(1), 2, Tag::at(4)).is_err());
    }

    #[test]
    fn slots_are_per_thread() {
        let b = TimestampBypass::new();
        let ep = EndpointId(0);
        b.put(ep, 7, Tag::at(1)).unwrap();
        std::thread::scope(|s| {
            s.spawn(|| {
                assert!(b.take(ep, 7).is_err());
                b.put(ep, 7, Tag::at(2)).unwrap();
                assert_eq!(b.take(ep, 7), Ok(Tag::at(2)));
            });
        });
        assert_eq!(b.take(ep, 7), Ok(Tag::at(1)));
    }
}
