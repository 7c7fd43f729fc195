//! Co-simulation of several platforms connected by a simulated network.
//!
//! Each platform runs its own [`Runtime`] against a clock that reads the
//! shared simulated time plus a fixed offset. The federation advances
//! global time to the earliest pending occurrence: an external injection, a
//! message arrival, or a platform becoming ready to process its next tag.
//! At equal times injections come first, then arrivals, then steps in
//! platform order. A step takes as long as the compute time its reactions
//! declare, during which the platform cannot start another one.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagsoa_core::{
    trace_digest, Duration, Executor, Inline, ReactorGraph, RuntimeError, TraceDigest, TraceRecord,
};

use crate::middleware::{
    BindingMode, Endpoint, EndpointId, LinkModel, MiddlewareError, Network, Registry,
};
use crate::runtime::{Clock, Runtime, RuntimeHandle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlatformId(pub usize);

/// How simulated time relates to wall-clock time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pacing {
    /// As fast as possible.
    #[default]
    Simulated,
    /// Waits until wall-clock time catches up with simulated time.
    RealTime,
}

type Injection = Box<dyn FnOnce(&RuntimeHandle) + Send>;

struct Platform {
    name: String,
    offset: u64,
    handle: RuntimeHandle,
    runtime: Option<Runtime>,
    busy_until: u64,
    trace: Vec<TraceRecord>,
}

/// A message that could not be delivered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryFailure {
    pub to: EndpointId,
    pub at: u64,
    pub error: MiddlewareError,
}

pub struct Federation {
    base: Clock,
    registry: Arc<Registry>,
    network: Network,
    platforms: Vec<Platform>,
    endpoints: Vec<(PlatformId, Arc<Endpoint>)>,
    injections: BinaryHeap<Reverse<(u64, u64)>>,
    injection_fns: Vec<Option<(PlatformId, Injection)>>,
    executor: Arc<dyn Executor + Send>,
    pacing: Pacing,
    now: u64,
    failures: Vec<DeliveryFailure>,
}

/// Clock offsets in `[0, max_skew]`, so any two platforms differ by at most
/// `max_skew`.
pub fn skew_offsets(platforms: usize, max_skew: Duration, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c10c);
    (0..platforms)
        .map(|_| rng.gen_range(0..=max_skew.as_nanos()))
        .collect()
}

impl Federation {
    pub fn new(link: LinkModel, seed: u64) -> Self {
        Federation {
            base: Clock::simulated(),
            registry: Arc::new(Registry::new()),
            network: Network::new(link, seed),
            platforms: Vec::new(),
            endpoints: Vec::new(),
            injections: BinaryHeap::new(),
            injection_fns: Vec::new(),
            executor: Arc::new(Inline),
            pacing: Pacing::Simulated,
            now: 0,
            failures: Vec::new(),
        }
    }

    pub fn with_executor(mut self, executor: Arc<dyn Executor + Send>) -> Self {
        self.executor = executor;
        self
    }

    pub fn with_pacing(mut self, pacing: Pacing) -> Self {
        self.pacing = pacing;
        self
    }

    /// Adds a platform whose clock runs `offset` ahead of global time.
    pub fn add_platform(&mut self, name: &str, offset: u64) -> PlatformId {
        let clock = self.base.clone().with_offset(offset as i64);
        self.platforms.push(Platform {
            name: name.into(),
            offset,
            handle: RuntimeHandle::new(clock),
            runtime: None,
            busy_until: 0,
            trace: Vec::new(),
        });
        PlatformId(self.platforms.len() - 1)
    }

    pub fn endpoint(&mut self, platform: PlatformId, mode: BindingMode) -> Arc<Endpoint> {
        let id = EndpointId(self.endpoints.len() as u32);
        let clock = self.platforms[platform.0].handle.clock().clone();
        let ep = Endpoint::new(id, mode, self.registry.clone(), clock);
        self.endpoints.push((platform, ep.clone()));
        ep
    }

    pub fn handle(&self, platform: PlatformId) -> RuntimeHandle {
        self.platforms[platform.0].handle.clone()
    }

    /// Attaches the reactor program of a platform.
    pub fn install(&mut self, platform: PlatformId, graph: ReactorGraph) {
        let p = &mut self.platforms[platform.0];
        p.runtime = Some(Runtime::with_handle(graph, p.handle.clone()));
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    /// Runs `f` against the platform's handle at global time `time`.
    pub fn inject_at(
        &mut self,
        time: u64,
        platform: PlatformId,
        f: impl FnOnce(&RuntimeHandle) + Send + 'static,
    ) {
        let seq = self.injection_fns.len() as u64;
        self.injection_fns.push(Some((platform, Box::new(f))));
        self.injections.push(Reverse((time, seq)));
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn platform_name(&self, platform: PlatformId) -> &str {
        &self.platforms[platform.0].name
    }

    pub fn runtime(&self, platform: PlatformId) -> &Runtime {
        self.platforms[platform.0]
            .runtime
            .as_ref()
            .expect("platform has a program installed")
    }

    pub fn trace(&self, platform: PlatformId) -> &[TraceRecord] {
        &self.platforms[platform.0].trace
    }

    /// Digest over all platform traces in platform order.
    pub fn digest(&self) -> TraceDigest {
        trace_digest(self.platforms.iter().flat_map(|p| p.trace.iter()))
    }

    pub fn delivery_failures(&self) -> &[DeliveryFailure] {
        &self.failures
    }

    fn flush_outboxes(&mut self) {
        for (platform, ep) in &self.endpoints {
            let offset = self.platforms[platform.0].offset;
            let mut out = ep.drain_outbox();
            // Reactions of one level may send concurrently; fix an order.
            out.sort();
            for msg in out {
                // Send times are local clock readings; the network runs on
                // global time.
                let sent = msg.send_time.saturating_sub(offset);
                self.network.transmit(ep.id(), msg.to, msg.bytes, sent);
            }
        }
    }

    fn next_step(&mut self) -> Option<(u64, usize)> {
        let mut best: Option<(u64, usize)> = None;
        for (i, p) in self.platforms.iter_mut().enumerate() {
            let Some(rt) = p.runtime.as_mut() else {
                continue;
            };
            if let Some(tag) = rt.next_tag() {
                let ready = tag.time.saturating_sub(p.offset).max(p.busy_until);
                if best.is_none_or(|(t, _)| ready < t) {
                    best = Some((ready, i));
                }
            }
        }
        best
    }

    fn advance_to(&mut self, time: u64, wall_start: std::time::Instant) {
        self.now = self.now.max(time);
        self.base.set(self.now);
        if self.pacing == Pacing::RealTime {
            let due = wall_start + std::time::Duration::from_nanos(self.now);
            if let Some(wait) = due.checked_duration_since(std::time::Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    }

    /// Runs until nothing is pending or the next occurrence lies after
    /// `until` (global nanoseconds).
    pub fn run(&mut self, until: Option<u64>) -> Result<(), RuntimeError> {
        let wall_start = std::time::Instant::now() - std::time::Duration::from_nanos(self.now);
        loop {
            self.flush_outboxes();
            let injection = self.injections.peek().map(|Reverse((t, _))| *t);
            let arrival = self.network.next_arrival();
            let step = self.next_step();
            let next = [injection, arrival, step.map(|(t, _)| t)]
                .into_iter()
                .flatten()
                .min();
            let Some(next) = next else {
                return Ok(());
            };
            if until.is_some_and(|u| next > u) {
                return Ok(());
            }
            self.advance_to(next, wall_start);

            if injection == Some(next) {
                let Reverse((_, seq)) = self.injections.pop().expect("peeked");
                let (platform, f) = self.injection_fns[seq as usize]
                    .take()
                    .expect("injection runs once");
                f(&self.platforms[platform.0].handle);
            } else if arrival == Some(next) {
                let msg = self.network.pop_next().expect("peeked");
                let (_, ep) = &self.endpoints[msg.to.0 as usize];
                if let Err(error) = ep.deliver(msg.from, &msg.bytes) {
                    self.failures.push(DeliveryFailure {
                        to: msg.to,
                        at: next,
                        error,
                    });
                }
            } else {
                let (_, index) = step.expect("a step is due");
                let p = &mut self.platforms[index];
                let rt = p.runtime.as_mut().expect("installed");
                if let Some(report) = rt.step_at(next + p.offset, self.executor.as_ref())? {
                    p.busy_until = report.physical_end - p.offset;
                    p.trace.extend(report.records);
                }
            }
        }
    }
}
