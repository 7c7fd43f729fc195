use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagsoa_core::Duration;

use super::EndpointId;

/// Distribution of one-way message latency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatencyDistribution {
    Fixed(Duration),
    /// Uniform over `[min, max]` nanoseconds.
    Uniform {
        min: Duration,
        max: Duration,
    },
    /// `high` with probability `p_high`, `low` otherwise.
    TwoPoint {
        low: Duration,
        high: Duration,
        p_high: f64,
    },
}

impl LatencyDistribution {
    pub fn zero() -> Self {
        LatencyDistribution::Fixed(Duration::ZERO)
    }

    pub fn upper_bound(&self) -> Duration {
        match *self {
            LatencyDistribution::Fixed(d) => d,
            LatencyDistribution::Uniform { max, .. } => max,
            LatencyDistribution::TwoPoint { low, high, p_high } => {
                if p_high > 0.0 {
                    low.max(high)
                } else {
                    low
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Duration {
        match *self {
            LatencyDistribution::Fixed(d) => d,
            LatencyDistribution::Uniform { min, max } => {
                Duration::from_nanos(rng.gen_range(min.as_nanos()..=max.as_nanos()))
            }
            LatencyDistribution::TwoPoint { low, high, p_high } => {
                if rng.gen_bool(p_high) {
                    high
                } else {
                    low
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error(
    "invalid latency model `{0}`: expected zero, fixed:D, uniform:MIN,MAX or twopoint:LOW,HIGH,P"
)]
pub struct ParseLatencyError(pub String);

/// Parses `zero`, `fixed:5ms`, `uniform:0ms,5ms` or `twopoint:1ms,7ms,0.01`.
impl FromStr for LatencyDistribution {
    type Err = ParseLatencyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseLatencyError(s.into());
        let dur = |v: &str| v.trim().parse::<Duration>().map_err(|_| err());
        let (kind, args) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let args: Vec<&str> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',').collect()
        };
        match (kind, args.as_slice()) {
            ("zero", []) => Ok(LatencyDistribution::zero()),
            ("fixed", [d]) => Ok(LatencyDistribution::Fixed(dur(d)?)),
            ("uniform", [lo, hi]) => {
                let (min, max) = (dur(lo)?, dur(hi)?);
                if min > max {
                    return Err(err());
                }
                Ok(LatencyDistribution::Uniform { min, max })
            }
            ("twopoint", [lo, hi, p]) => {
                let p_high: f64 = p.trim().parse().map_err(|_| err())?;
                if !(0.0..=1.0).contains(&p_high) {
                    return Err(err());
                }
                Ok(LatencyDistribution::TwoPoint {
                    low: dur(lo)?,
                    high: dur(hi)?,
                    p_high,
                })
            }
            _ => Err(err()),
        }
    }
}

impl fmt::Display for LatencyDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyDistribution::Fixed(d) if d.is_zero() => f.write_str("zero"),
            LatencyDistribution::Fixed(d) => write!(f, "fixed:{d}"),
            LatencyDistribution::Uniform { min, max } => write!(f, "uniform:{min},{max}"),
            LatencyDistribution::TwoPoint { low, high, p_high } => {
                write!(f, "twopoint:{low},{high},{p_high}")
            }
        }
    }
}

/// Timing behaviour of a directed link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub latency: LatencyDistribution,
    /// The latency bound receivers assume.
    pub declared_bound: Duration,
    /// Whether messages on this link keep their send order.
    pub in_order: bool,
}

impl LinkModel {
    pub fn new(latency: LatencyDistribution) -> Self {
        LinkModel {
            latency,
            declared_bound: latency.upper_bound(),
            in_order: false,
        }
    }

    pub fn in_order(mut self, in_order: bool) -> Self {
        self.in_order = in_order;
        self
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::new(LatencyDistribution::Uniform {
            min: Duration::ZERO,
            max: Duration::from_millis(5),
        })
    }
}

/// One directed link with its own random stream.
#[derive(Clone, Debug)]
pub struct Link {
    model: LinkModel,
    rng: ChaCha8Rng,
    sent: u64,
    last_arrival: u64,
    overrides: BTreeMap<u64, Duration>,
}

impl Link {
    pub fn new(model: LinkModel, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Link {
            model,
            rng,
            sent: 0,
            last_arrival: 0,
            overrides: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Forces the latency of the `nth` message (counting from zero).
    pub fn inject(&mut self, nth: u64, latency: Duration) {
        self.overrides.insert(nth, latency);
    }

    /// Arrival time of the next message sent at `send_time`.
    pub fn transmit(&mut self, send_time: u64) -> u64 {
        let sampled = self.model.latency.sample(&mut self.rng);
        let latency = self.overrides.remove(&self.sent).unwrap_or(sampled);
        self.sent += 1;
        let mut arrival = send_time + latency.as_nanos();
        if self.model.in_order {
            arrival = arrival.max(self.last_arrival);
        }
        self.last_arrival = self.last_arrival.max(arrival);
        arrival
    }

    pub fn messages_sent(&self) -> u64 {
        self.sent
    }
}

/// A message on its way.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub from: EndpointId,
    pub to: EndpointId,
    pub sent_at: u64,
    pub arrival: u64,
    pub bytes: Vec<u8>,
}

struct InFlight {
    key: (u64, u64),
    delivery: Delivery,
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for InFlight {}

impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InFlight {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// All links between endpoints plus the messages in flight.
///
/// Messages are delivered by arrival time; equal arrival times keep
/// transmission order.
pub struct Network {
    default_model: LinkModel,
    seed: u64,
    models: BTreeMap<(EndpointId, EndpointId), LinkModel>,
    links: BTreeMap<(EndpointId, EndpointId), Link>,
    in_flight: BinaryHeap<Reverse<InFlight>>,
    seq: u64,
}

impl Network {
    pub fn new(default_model: LinkModel, seed: u64) -> Self {
        Network {
            default_model,
            seed,
            models: BTreeMap::new(),
            links: BTreeMap::new(),
            in_flight: BinaryHeap::new(),
            seq: 0,
        }
    }

    /// Overrides the model of the link `from → to`. Must be called before
    /// the first message on that link.
    pub fn set_link(&mut self, from: EndpointId, to: EndpointId, model: LinkModel) {
        self.models.insert((from, to), model);
    }

    fn link(&mut self, from: EndpointId, to: EndpointId) -> &mut Link {
        let model = self
            .models
            .get(&(from, to))
            .copied()
            .unwrap_or(self.default_model);
        let seed = self.seed;
        self.links
            .entry((from, to))
            .or_insert_with(|| Link::new(model, seed, (u64::from(from.0) << 32) | u64::from(to.0)))
    }

    /// Forces the latency of the `nth` message on `from → to`.
    pub fn inject(&mut self, from: EndpointId, to: EndpointId, nth: u64, latency: Duration) {
        self.link(from, to).inject(nth, latency);
    }

    pub fn transmit(
        &mut self,
        from: EndpointId,
        to: EndpointId,
        bytes: Vec<u8>,
        send_time: u64,
    ) -> u64 {
        let arrival = self.link(from, to).transmit(send_time);
        self.in_flight.push(Reverse(InFlight {
            key: (arrival, self.seq),
            delivery: Delivery {
                from,
                to,
                sent_at: send_time,
                arrival,
                bytes,
            },
        }));
        self.seq += 1;
        arrival
    }

    pub fn next_arrival(&self) -> Option<u64> {
        self.in_flight.peek().map(|Reverse(m)| m.key.0)
    }

    pub fn pop_next(&mut self) -> Option<Delivery> {
        self.in_flight.pop().map(|Reverse(m)| m.delivery)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}
