//! The counter service of the client/server example.
//!
//! A client issues `set_value(1)`, `add(2)` and `get_value()` in that order
//! without waiting for replies. The value it prints depends entirely on the
//! order in which the server handles the three calls.

use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CounterCall {
    Set(i64),
    Add(i64),
    Get,
}

/// The calls in the order the client issues them.
pub const CLIENT_CALLS: [CounterCall; 3] =
    [CounterCall::Set(1), CounterCall::Add(2), CounterCall::Get];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counter {
    pub value: i64,
}

impl Counter {
    /// Applies one call; returns the value for `Get`.
    pub fn handle(&mut self, call: CounterCall) -> Option<i64> {
        match call {
            CounterCall::Set(v) => {
                self.value = v;
                None
            }
            CounterCall::Add(v) => {
                self.value += v;
                None
            }
            CounterCall::Get => Some(self.value),
        }
    }
}

/// Value returned by `Get` when a fresh counter handles `calls` in order.
pub fn counter_outcome(calls: &[CounterCall]) -> Option<i64> {
    let mut counter = Counter::default();
    calls.iter().filter_map(|&c| counter.handle(c)).last()
}

/// Every handling order of [`CLIENT_CALLS`] with its outcome.
pub fn all_interleavings() -> Vec<([CounterCall; 3], i64)> {
    const PERMUTATIONS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    PERMUTATIONS
        .iter()
        .map(|p| {
            let order = p.map(|i| CLIENT_CALLS[i]);
            let value = counter_outcome(&order).expect("every order contains a get");
            (order, value)
        })
        .collect()
}
