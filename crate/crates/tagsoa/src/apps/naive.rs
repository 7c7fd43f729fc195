//! The brake assistant on plain middleware.
//!
//! Every stage stores what it receives in one-slot buffers and runs its
//! logic from a periodic timer. Nothing relates the timers of different
//! stages, so whether a value is read before the next one overwrites it
//! depends on phase offsets, timer jitter, compute time and transport
//! delay. All of these are drawn from a seeded generator.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagsoa_core::pipeline::{
    computer_vision, eba, preprocess, ErrorStats, Frame, LaneInfo, OneSlotBuffer, VehicleList,
    DEFAULT_BRAKE_THRESHOLD_M,
};
use tagsoa_core::Duration;

use crate::middleware::{
    BindingMode, Endpoint, EndpointId, LatencyDistribution, LinkModel, Network, Proxy, Registry,
    ServiceDescriptor, Skeleton,
};
use crate::runtime::Clock;

/// Parameters of one naive run.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveConfig {
    pub frames: u64,
    pub period: Duration,
    pub latency: LatencyDistribution,
    /// Timer phases of Video Provider, Preprocessing, Computer Vision and
    /// EBA. Drawn uniformly from one period when absent.
    pub phases: Option<[Duration; 4]>,
    /// Each timer fires up to this much late.
    pub tick_jitter: Duration,
    /// Nominal compute time of Preprocessing, Computer Vision and EBA.
    pub compute: [Duration; 3],
    /// Each computation takes up to this much longer than nominal.
    pub compute_jitter: Duration,
    /// Probability that a computation stalls for up to `stall` extra.
    pub stall_probability: f64,
    pub stall: Duration,
    pub seed: u64,
}

impl NaiveConfig {
    pub fn new(frames: u64, seed: u64) -> Self {
        NaiveConfig {
            frames,
            period: Duration::from_millis(50),
            latency: LatencyDistribution::Uniform {
                min: Duration::ZERO,
                max: Duration::from_millis(5),
            },
            phases: None,
            tick_jitter: Duration::from_millis(2),
            compute: [
                Duration::from_millis(10),
                Duration::from_millis(20),
                Duration::from_millis(2),
            ],
            compute_jitter: Duration::from_millis(3),
            stall_probability: 0.001,
            stall: Duration::from_millis(60),
            seed,
        }
    }

    /// Equal phases and no source of timing variation: every buffer is
    /// written once and read once per period.
    pub fn static_schedule(frames: u64) -> Self {
        NaiveConfig {
            latency: LatencyDistribution::zero(),
            phases: Some([Duration::ZERO; 4]),
            tick_jitter: Duration::ZERO,
            compute_jitter: Duration::ZERO,
            stall_probability: 0.0,
            ..NaiveConfig::new(frames, 0)
        }
    }
}

const SERVICE_VA: u16 = 0x20;
const SERVICE_PRE: u16 = 0x21;
const SERVICE_CV: u16 = 0x22;
const EVENT_FRAME: u16 = 1;
const EVENT_LANE: u16 = 2;
const EVENT_VEHICLES: u16 = 1;

#[derive(Default)]
struct Buffers {
    pre: OneSlotBuffer<Frame>,
    cv_frame: OneSlotBuffer<Frame>,
    cv_lane: OneSlotBuffer<LaneInfo>,
    eba: OneSlotBuffer<VehicleList>,
    misaligned: u64,
    decisions: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Provider,
    Pre,
    Cv,
    Eba,
}

/// Outcome of a naive run.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveOutcome {
    pub stats: ErrorStats,
    /// Brake decisions produced.
    pub decisions: u64,
}

struct Timing {
    rng: ChaCha8Rng,
    cfg: NaiveConfig,
}

impl Timing {
    fn jitter(&mut self, max: Duration) -> u64 {
        match max.as_nanos() {
            0 => 0,
            m => self.rng.gen_range(0..=m),
        }
    }

    fn compute(&mut self, stage: usize) -> u64 {
        let mut t = self.cfg.compute[stage].as_nanos() + self.jitter(self.cfg.compute_jitter);
        if self.cfg.stall_probability > 0.0 && self.rng.gen_bool(self.cfg.stall_probability) {
            t += self.jitter(self.cfg.stall);
        }
        t
    }
}

/// Runs the five-stage pipeline for `cfg.frames` frames.
pub fn run_naive_pipeline(cfg: &NaiveConfig) -> NaiveOutcome {
    assert!(cfg.frames >= 1, "at least one frame");
    let period = cfg.period.as_nanos();
    let mut timing = Timing {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e_6169_7665),
        cfg: cfg.clone(),
    };
    let phases = cfg
        .phases
        .map(|p| p.map(Duration::as_nanos))
        .unwrap_or_else(|| [0; 4].map(|_| timing.rng.gen_range(0..period.max(1))));

    let registry = Arc::new(Registry::new());
    let clock = Clock::simulated();
    let endpoint = |id| {
        Endpoint::new(
            EndpointId(id),
            BindingMode::Legacy,
            registry.clone(),
            clock.clone(),
        )
    };
    let provider_ep = endpoint(0);
    let va_ep = endpoint(1);
    let pre_ep = endpoint(2);
    let cv_ep = endpoint(3);
    let eba_ep = endpoint(4);
    let endpoints = [&provider_ep, &va_ep, &pre_ep, &cv_ep, &eba_ep];
    let mut network = Network::new(LinkModel::new(cfg.latency), cfg.seed);

    let offer = |ep: &Arc<Endpoint>, service, events: &[(u16, &str)]| {
        let d = events
            .iter()
            .fold(ServiceDescriptor::new(service), |d, &(id, name)| {
                d.event(id, name)
            });
        Skeleton::offer(ep, d).expect("valid descriptor")
    };
    // The camera's own protocol is modelled as one more event stream.
    let provider = offer(&provider_ep, 0x1f, &[(EVENT_FRAME, "frame")]);
    let va = Arc::new(offer(&va_ep, SERVICE_VA, &[(EVENT_FRAME, "frame")]));
    let pre = offer(
        &pre_ep,
        SERVICE_PRE,
        &[(EVENT_FRAME, "frame"), (EVENT_LANE, "lane")],
    );
    let cv = offer(&cv_ep, SERVICE_CV, &[(EVENT_VEHICLES, "vehicles")]);

    let buffers = Arc::new(Mutex::new(Buffers::default()));
    {
        let va = va.clone();
        Proxy::new(&va_ep, 0x1f)
            .expect("offered")
            .subscribe(EVENT_FRAME, move |n| {
                va.notify(EVENT_FRAME, n.payload, n.received_at);
            });
    }
    let pre_in = Proxy::new(&pre_ep, SERVICE_VA).expect("offered");
    let b = buffers.clone();
    pre_in.subscribe(EVENT_FRAME, move |n| {
        let frame = Frame::decode(&n.payload).expect("frame");
        b.lock().expect("buffers").pre.write(frame);
    });
    let cv_in = Proxy::new(&cv_ep, SERVICE_PRE).expect("offered");
    let b = buffers.clone();
    cv_in.subscribe(EVENT_FRAME, move |n| {
        let frame = Frame::decode(&n.payload).expect("frame");
        b.lock().expect("buffers").cv_frame.write(frame);
    });
    let b = buffers.clone();
    cv_in.subscribe(EVENT_LANE, move |n| {
        let lane = LaneInfo::decode(&n.payload).expect("lane");
        b.lock().expect("buffers").cv_lane.write(lane);
    });
    let eba_in = Proxy::new(&eba_ep, SERVICE_CV).expect("offered");
    let b = buffers.clone();
    eba_in.subscribe(EVENT_VEHICLES, move |n| {
        let vehicles = VehicleList::decode(&n.payload).expect("vehicles");
        b.lock().expect("buffers").eba.write(vehicles);
    });

    // Timers fire in (time, stage) order, and before any message arriving
    // at the same instant.
    let mut timers: BinaryHeap<Reverse<(u64, Stage, u64)>> = BinaryHeap::new();
    let stages = [Stage::Provider, Stage::Pre, Stage::Cv, Stage::Eba];
    for (stage, phase) in stages.iter().zip(phases) {
        let first = phase + timing.jitter(cfg.tick_jitter);
        timers.push(Reverse((first, *stage, 0)));
    }
    let mut busy_until = [0u64; 3];
    // Stages keep firing for a few periods after the last frame leaves the
    // camera so that it can drain.
    let last_tick = cfg.frames + 4;

    loop {
        for ep in endpoints {
            for out in ep.drain_outbox() {
                network.transmit(ep.id(), out.to, out.bytes, out.send_time);
            }
        }
        let timer = timers.peek().map(|Reverse((t, _, _))| *t);
        let arrival = network.next_arrival();
        let fire = match (timer, arrival) {
            (None, None) => break,
            (Some(t), Some(a)) => t <= a,
            (t, _) => t.is_some(),
        };
        if !fire {
            let d = network.pop_next().expect("peeked");
            clock.set(d.arrival);
            endpoints[d.to.0 as usize]
                .deliver(d.from, &d.bytes)
                .expect("well-formed message");
            continue;
        }
        let Reverse((now, stage, k)) = timers.pop().expect("peeked");
        clock.set(now);
        let limit = if stage == Stage::Provider {
            cfg.frames
        } else {
            last_tick
        };
        if k + 1 < limit {
            let idx = stages.iter().position(|s| *s == stage).expect("stage");
            let next = phases[idx] + (k + 1) * period + timing.jitter(cfg.tick_jitter);
            timers.push(Reverse((next.max(now), stage, k + 1)));
        }
        let slot = match stage {
            Stage::Provider => {
                provider.notify(EVENT_FRAME, Frame::new(k).encode(), now);
                continue;
            }
            Stage::Pre => 0,
            Stage::Cv => 1,
            Stage::Eba => 2,
        };
        // A timer firing while the previous computation still runs is lost.
        if now < busy_until[slot] {
            continue;
        }
        let mut b = buffers.lock().expect("buffers");
        match stage {
            Stage::Pre => {
                let Some(frame) = b.pre.take() else { continue };
                drop(b);
                let done = now + timing.compute(0);
                busy_until[0] = done;
                let lane = preprocess(&frame);
                pre.notify(EVENT_FRAME, frame.encode(), done);
                pre.notify(EVENT_LANE, lane.encode(), done);
            }
            Stage::Cv => {
                if !(b.cv_frame.is_full() && b.cv_lane.is_full()) {
                    continue;
                }
                let frame = b.cv_frame.take().expect("full");
                let lane = b.cv_lane.take().expect("full");
                match computer_vision(&frame, &lane) {
                    Ok(vehicles) => {
                        drop(b);
                        let done = now + timing.compute(1);
                        busy_until[1] = done;
                        cv.notify(EVENT_VEHICLES, vehicles.encode(), done);
                    }
                    Err(_) => b.misaligned += 1,
                }
            }
            Stage::Eba => {
                let Some(vehicles) = b.eba.take() else {
                    continue;
                };
                let _decision = eba(&vehicles, DEFAULT_BRAKE_THRESHOLD_M);
                b.decisions += 1;
                drop(b);
                busy_until[2] = now + timing.compute(2);
            }
            Stage::Provider => unreachable!(),
        }
    }

    let b = buffers.lock().expect("buffers");
    NaiveOutcome {
        stats: ErrorStats {
            frames: cfg.frames,
            dropped_pre: b.pre.overwrite_count(),
            dropped_frames_cv: b.cv_frame.overwrite_count(),
            dropped_lanes_cv: b.cv_lane.overwrite_count(),
            misaligned_cv: b.misaligned,
            dropped_eba: b.eba.overwrite_count(),
        },
        decisions: b.decisions,
    }
}
