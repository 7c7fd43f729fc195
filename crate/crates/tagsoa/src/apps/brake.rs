//! The brake assistant as reactors joined by transactors.
//!
//! Each stage runs on its own platform. Video Adapter tags every frame with
//! the physical time it arrives from the camera; from there on the tag of
//! each result is fixed by the deadlines and the assumed latency and skew
//! bounds, whatever the actual timing.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tagsoa_core::pipeline::{
    computer_vision, eba, preprocess, BrakeDecision, ErrorStats, Frame, LaneInfo, StageDeadlines,
    VehicleList, DEFAULT_BRAKE_THRESHOLD_M,
};
use tagsoa_core::trace::payload_digest;
use tagsoa_core::{
    Duration, GraphBuilder, PortId, ReactorKey, RuntimeError, Tag, TraceDigest, TraceRecord,
    TransactorConfig,
};

use crate::federation::{skew_offsets, Federation, Pacing, PlatformId};
use crate::middleware::{
    BindingMode, EndpointId, LatencyDistribution, LinkModel, Proxy, ServiceDescriptor, Skeleton,
};
use crate::runtime::executor;
use crate::transactors::{event_publisher, event_subscriber};

/// A network hop between two stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hop {
    AdapterToPreprocessing,
    PreprocessingToVision,
    VisionToEba,
}

/// Overrides the latency of the `nth` message (from zero) sent over a hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencyInjection {
    pub hop: Hop,
    pub nth: u64,
    pub latency: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReactorConfig {
    pub frames: u64,
    pub period: Duration,
    pub deadlines: StageDeadlines,
    /// Latency bound `L` assumed by every receiving transactor.
    pub max_latency: Duration,
    /// Skew bound `E`; platform clocks are offset by up to this much.
    pub max_skew: Duration,
    /// Actual latency of every link, including the camera link.
    pub latency: LatencyDistribution,
    pub in_order: bool,
    /// Compute time of each stage; equals its deadline when absent.
    pub compute: Option<[Duration; 4]>,
    pub seed: u64,
    pub workers: usize,
    pub injections: Vec<LatencyInjection>,
    /// Keep per-platform traces in the outcome.
    pub keep_traces: bool,
    pub pacing: Pacing,
}

impl ReactorConfig {
    pub fn new(frames: u64, seed: u64) -> Self {
        let max_latency = Duration::from_millis(5);
        ReactorConfig {
            frames,
            period: Duration::from_millis(50),
            deadlines: StageDeadlines::default(),
            max_latency,
            max_skew: Duration::ZERO,
            latency: LatencyDistribution::Uniform {
                min: Duration::ZERO,
                max: max_latency,
            },
            in_order: true,
            compute: None,
            seed,
            workers: 1,
            injections: Vec::new(),
            keep_traces: false,
            pacing: Pacing::Simulated,
        }
    }
}

/// Frame-to-brake logical latency.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LatencyReport {
    /// `(frame seq, latency)` for every frame that produced a decision.
    pub per_frame: Vec<(u64, Duration)>,
    /// Frames inserted without a matching decision.
    pub missing: u64,
}

impl LatencyReport {
    pub fn worst(&self) -> Option<Duration> {
        self.per_frame.iter().map(|&(_, d)| d).max()
    }
}

#[derive(Clone, Debug)]
pub struct ReactorOutcome {
    pub stats: ErrorStats,
    pub digest: TraceDigest,
    pub latency: LatencyReport,
    /// Brake decisions in output order with their tags.
    pub decisions: Vec<(Tag, BrakeDecision)>,
    /// Messages the middleware could not hand to any receiver.
    pub undeliverable: usize,
    /// Platform names and traces, when requested.
    pub traces: Vec<(String, Vec<TraceRecord>)>,
}

impl ReactorOutcome {
    pub fn is_clean(&self) -> bool {
        self.stats.is_clean() && self.undeliverable == 0
    }
}

/// What a brake decision for `seq` must look like.
pub fn expected_decision(seq: u64, threshold_m: f64) -> BrakeDecision {
    let frame = Frame::new(seq);
    let vehicles = computer_vision(&frame, &preprocess(&frame)).expect("aligned by construction");
    eba(&vehicles, threshold_m)
}

/// Matches frames written on `frame_port` in the adapter trace with the
/// decisions written on `brake_port` in the EBA trace, by payload.
pub fn end_to_end_latency(
    adapter: &[TraceRecord],
    frame_port: PortId,
    eba_trace: &[TraceRecord],
    brake_port: PortId,
    frames: u64,
    threshold_m: f64,
) -> LatencyReport {
    let mut by_frame = HashMap::new();
    let mut by_decision = HashMap::new();
    for seq in 0..frames {
        by_frame.insert(payload_digest(&Frame::new(seq).encode()), seq);
        by_decision.insert(
            payload_digest(&expected_decision(seq, threshold_m).encode()),
            seq,
        );
    }
    let writes = |trace: &[TraceRecord], port: PortId, table: &HashMap<u64, u64>| {
        let mut found = HashMap::new();
        for record in trace {
            for &(p, digest) in &record.writes {
                if p == port {
                    if let Some(&seq) = table.get(&digest) {
                        found.entry(seq).or_insert(record.tag);
                    }
                }
            }
        }
        found
    };
    let inserted = writes(adapter, frame_port, &by_frame);
    let braked = writes(eba_trace, brake_port, &by_decision);
    let mut report = LatencyReport::default();
    let mut seqs: Vec<_> = inserted.keys().copied().collect();
    seqs.sort_unstable();
    for seq in seqs {
        match braked.get(&seq) {
            Some(&out) => report.per_frame.push((seq, out.since(inserted[&seq]))),
            None => report.missing += 1,
        }
    }
    report
}

const SERVICE_VA: u16 = 0x20;
const SERVICE_PRE: u16 = 0x21;
const SERVICE_CV: u16 = 0x22;
const EVENT_FRAME: u16 = 1;
const EVENT_LANE: u16 = 2;
const EVENT_VEHICLES: u16 = 1;

/// Which counter an error port feeds.
#[derive(Clone, Copy, Debug)]
enum Counter {
    Pre,
    CvFrames,
    CvLanes,
    Eba,
}

fn bump(stats: &mut ErrorStats, counter: Counter) {
    match counter {
        Counter::Pre => stats.dropped_pre += 1,
        Counter::CvFrames => stats.dropped_frames_cv += 1,
        Counter::CvLanes => stats.dropped_lanes_cv += 1,
        Counter::Eba => stats.dropped_eba += 1,
    }
}

/// A reactor counting every error reported on `sources`.
fn error_counter(g: &mut GraphBuilder, sources: &[(PortId, Counter)]) -> ReactorKey<ErrorStats> {
    let r = g.add_reactor("errors", ErrorStats::default());
    for (i, &(port, counter)) in sources.iter().enumerate() {
        let input = g.input(r, &format!("e{i}"));
        g.connect(port, input).expect("fresh input");
        g.reaction(r, &format!("count{i}"))
            .triggered_by(input)
            .body(move |s: &mut ErrorStats, _| bump(s, counter));
    }
    r
}

fn add_stats(total: &mut ErrorStats, part: &ErrorStats) {
    total.dropped_pre += part.dropped_pre;
    total.dropped_frames_cv += part.dropped_frames_cv;
    total.dropped_lanes_cv += part.dropped_lanes_cv;
    total.misaligned_cv += part.misaligned_cv;
    total.dropped_eba += part.dropped_eba;
}

#[derive(Default)]
struct EbaState {
    stats: ErrorStats,
    decisions: Vec<(Tag, BrakeDecision)>,
}

struct Built {
    platforms: [PlatformId; 4],
    endpoints: [EndpointId; 4],
    frame_action: tagsoa_core::ActionId,
    frame_port: PortId,
    brake_port: PortId,
    counters: Vec<(PlatformId, ReactorKey<ErrorStats>)>,
    cv: ReactorKey<ErrorStats>,
    eba: ReactorKey<EbaState>,
}

fn build(fed: &mut Federation, cfg: &ReactorConfig) -> Built {
    let d = cfg.deadlines;
    let compute = cfg.compute.unwrap_or(d.as_array());
    let (l, e) = (cfg.max_latency, cfg.max_skew);
    let conf = |deadline| TransactorConfig::new(deadline, l, e).expect("deadlines are positive");
    let offsets = skew_offsets(4, e, cfg.seed);
    let names = ["video_adapter", "preprocessing", "computer_vision", "eba"];
    let platforms = [0, 1, 2, 3].map(|i| fed.add_platform(names[i], offsets[i]));
    let eps = platforms.map(|p| fed.endpoint(p, BindingMode::Tagged));
    let offer = |ep, service, events: &[(u16, &str)]| {
        let desc = events
            .iter()
            .fold(ServiceDescriptor::new(service), |d, &(id, name)| {
                d.event(id, name)
            });
        Arc::new(Skeleton::offer(ep, desc).expect("valid descriptor"))
    };
    let va_service = offer(&eps[0], SERVICE_VA, &[(EVENT_FRAME, "frame")]);
    let pre_service = offer(
        &eps[1],
        SERVICE_PRE,
        &[(EVENT_FRAME, "frame"), (EVENT_LANE, "lane")],
    );
    let cv_service = offer(&eps[2], SERVICE_CV, &[(EVENT_VEHICLES, "vehicles")]);
    let mut counters = Vec::new();

    // Video Adapter: frames enter as physical actions.
    let mut g = GraphBuilder::new();
    let va = g.add_reactor("video_adapter", ());
    let frame_action = g.physical_action(va, "camera");
    let frame_port = g.output(va, "frame");
    let work = compute[0];
    g.reaction(va, "adapt")
        .triggered_by(frame_action)
        .writes(frame_port)
        .body(move |_, ctx| {
            ctx.consume(work);
            let frame = ctx
                .action_value(frame_action)
                .cloned()
                .expect("triggering action");
            ctx.set(frame_port, frame).expect("declared effect");
        });
    let publish = event_publisher(
        &mut g,
        "frame_out",
        va_service,
        EVENT_FRAME,
        conf(d.video_adapter),
    );
    g.connect(frame_port, publish.input).expect("fresh input");
    counters.push((
        platforms[0],
        error_counter(&mut g, &[(publish.error, Counter::Pre)]),
    ));
    fed.install(platforms[0], g.build().expect("acyclic"));

    // Preprocessing.
    let mut g = GraphBuilder::new();
    let proxy = Proxy::new(&eps[1], SERVICE_VA).expect("offered");
    let sub = event_subscriber(
        &mut g,
        "frame_in",
        &proxy,
        EVENT_FRAME,
        conf(d.video_adapter),
        fed.handle(platforms[1]),
    );
    let pre = g.add_reactor("preprocessing", ());
    let input = g.input(pre, "frame");
    let frame_out = g.output(pre, "frame_out");
    let lane_out = g.output(pre, "lane");
    g.connect(sub.output, input).expect("fresh input");
    let work = compute[1];
    g.reaction(pre, "lane")
        .triggered_by(input)
        .writes(frame_out)
        .writes(lane_out)
        .body(move |_, ctx| {
            ctx.consume(work);
            let bytes = ctx.get(input).cloned().expect("triggering input");
            let lane = preprocess(&Frame::decode(&bytes).expect("frame"));
            ctx.set(frame_out, bytes).expect("declared effect");
            ctx.set(lane_out, lane.encode()).expect("declared effect");
        });
    let pub_frame = event_publisher(
        &mut g,
        "frame_out",
        pre_service.clone(),
        EVENT_FRAME,
        conf(d.preprocessing),
    );
    let pub_lane = event_publisher(
        &mut g,
        "lane_out",
        pre_service,
        EVENT_LANE,
        conf(d.preprocessing),
    );
    g.connect(frame_out, pub_frame.input).expect("fresh input");
    g.connect(lane_out, pub_lane.input).expect("fresh input");
    counters.push((
        platforms[1],
        error_counter(
            &mut g,
            &[
                (sub.error, Counter::Pre),
                (pub_frame.error, Counter::CvFrames),
                (pub_lane.error, Counter::CvLanes),
            ],
        ),
    ));
    fed.install(platforms[1], g.build().expect("acyclic"));

    // Computer Vision: both inputs must carry the same tag.
    let mut g = GraphBuilder::new();
    let proxy = Proxy::new(&eps[2], SERVICE_PRE).expect("offered");
    let h = fed.handle(platforms[2]);
    let sub_frame = event_subscriber(
        &mut g,
        "frame_in",
        &proxy,
        EVENT_FRAME,
        conf(d.preprocessing),
        h.clone(),
    );
    let sub_lane = event_subscriber(
        &mut g,
        "lane_in",
        &proxy,
        EVENT_LANE,
        conf(d.preprocessing),
        h,
    );
    let cv = g.add_reactor("computer_vision", ErrorStats::default());
    let frame_in = g.input(cv, "frame");
    let lane_in = g.input(cv, "lane");
    let vehicles_out = g.output(cv, "vehicles");
    g.connect(sub_frame.output, frame_in).expect("fresh input");
    g.connect(sub_lane.output, lane_in).expect("fresh input");
    let work = compute[2];
    g.reaction(cv, "detect")
        .triggered_by(frame_in)
        .triggered_by(lane_in)
        .writes(vehicles_out)
        .body(
            move |s: &mut ErrorStats, ctx| match (ctx.get(frame_in), ctx.get(lane_in)) {
                (Some(f), Some(l)) => {
                    let frame = Frame::decode(f).expect("frame");
                    let lane = LaneInfo::decode(l).expect("lane");
                    ctx.consume(work);
                    match computer_vision(&frame, &lane) {
                        Ok(v) => ctx.set(vehicles_out, v.encode()).expect("declared effect"),
                        Err(_) => s.misaligned_cv += 1,
                    }
                }
                (Some(_), None) => s.dropped_frames_cv += 1,
                (None, _) => s.dropped_lanes_cv += 1,
            },
        );
    let pub_vehicles = event_publisher(
        &mut g,
        "vehicles_out",
        cv_service,
        EVENT_VEHICLES,
        conf(d.computer_vision),
    );
    g.connect(vehicles_out, pub_vehicles.input)
        .expect("fresh input");
    counters.push((
        platforms[2],
        error_counter(
            &mut g,
            &[
                (sub_frame.error, Counter::CvFrames),
                (sub_lane.error, Counter::CvLanes),
                (pub_vehicles.error, Counter::Eba),
            ],
        ),
    ));
    fed.install(platforms[2], g.build().expect("acyclic"));

    // EBA: decides within its deadline and actuates that much later.
    let mut g = GraphBuilder::new();
    let proxy = Proxy::new(&eps[3], SERVICE_CV).expect("offered");
    let sub = event_subscriber(
        &mut g,
        "vehicles_in",
        &proxy,
        EVENT_VEHICLES,
        conf(d.computer_vision),
        fed.handle(platforms[3]),
    );
    let eba_r = g.add_reactor("eba", EbaState::default());
    let input = g.input(eba_r, "vehicles");
    let actuate = g.logical_action(eba_r, "actuate");
    let brake_port = g.output(eba_r, "brake");
    g.connect(sub.output, input).expect("fresh input");
    let (work, deadline) = (compute[3], d.eba);
    g.reaction(eba_r, "decide")
        .triggered_by(input)
        .schedules(actuate)
        .deadline(deadline, |s: &mut EbaState, _| s.stats.dropped_eba += 1)
        .body(move |_, ctx| {
            ctx.consume(work);
            let vehicles =
                VehicleList::decode(ctx.get(input).expect("triggering input")).expect("vehicles");
            let decision = eba(&vehicles, DEFAULT_BRAKE_THRESHOLD_M);
            ctx.schedule(actuate, deadline, decision.encode())
                .expect("declared effect");
        });
    g.reaction(eba_r, "brake")
        .triggered_by(actuate)
        .writes(brake_port)
        .body(move |s: &mut EbaState, ctx| {
            let bytes = ctx
                .action_value(actuate)
                .cloned()
                .expect("triggering action");
            s.decisions
                .push((ctx.tag(), BrakeDecision::decode(&bytes).expect("decision")));
            ctx.set(brake_port, bytes).expect("declared effect");
        });
    counters.push((
        platforms[3],
        error_counter(&mut g, &[(sub.error, Counter::Eba)]),
    ));
    fed.install(platforms[3], g.build().expect("acyclic"));

    Built {
        platforms,
        endpoints: eps.map(|ep| ep.id()),
        frame_action,
        frame_port,
        brake_port,
        counters,
        cv,
        eba: eba_r,
    }
}

/// Runs the deterministic pipeline for `cfg.frames` frames.
pub fn run_reactor_pipeline(cfg: &ReactorConfig) -> Result<ReactorOutcome, RuntimeError> {
    assert!(cfg.frames >= 1, "at least one frame");
    let link = LinkModel::new(cfg.latency).in_order(cfg.in_order);
    let mut fed = Federation::new(link, cfg.seed)
        .with_executor(executor(cfg.workers))
        .with_pacing(cfg.pacing);
    let built = build(&mut fed, cfg);

    for inj in &cfg.injections {
        let (from, to) = match inj.hop {
            Hop::AdapterToPreprocessing => (0, 1),
            Hop::PreprocessingToVision => (1, 2),
            Hop::VisionToEba => (2, 3),
        };
        fed.network_mut().inject(
            built.endpoints[from],
            built.endpoints[to],
            inj.nth,
            inj.latency,
        );
    }

    // The camera sends a frame every period over its own link.
    let mut camera = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00ca_3e7a);
    let period = cfg.period.as_nanos();
    for seq in 0..cfg.frames {
        let arrival = seq * period + cfg.latency.sample(&mut camera).as_nanos();
        let action = built.frame_action;
        fed.inject_at(arrival, built.platforms[0], move |h| {
            // Only fails once the runtime has stopped.
            let _ = h.schedule_physical(action, Duration::ZERO, Frame::new(seq).encode());
        });
    }
    fed.run(None)?;

    let mut stats = ErrorStats {
        frames: cfg.frames,
        ..ErrorStats::default()
    };
    for &(platform, key) in &built.counters {
        add_stats(&mut stats, fed.runtime(platform).state(key));
    }
    add_stats(&mut stats, fed.runtime(built.platforms[2]).state(built.cv));
    let eba_state = fed.runtime(built.platforms[3]).state(built.eba);
    add_stats(&mut stats, &eba_state.stats);

    let latency = end_to_end_latency(
        fed.trace(built.platforms[0]),
        built.frame_port,
        fed.trace(built.platforms[3]),
        built.brake_port,
        cfg.frames,
        DEFAULT_BRAKE_THRESHOLD_M,
    );
    let traces = if cfg.keep_traces {
        built
            .platforms
            .iter()
            .map(|&p| (fed.platform_name(p).to_string(), fed.trace(p).to_vec()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(ReactorOutcome {
        stats,
        digest: fed.digest(),
        latency,
        decisions: eba_state.decisions.clone(),
        undeliverable: fed.delivery_failures().len(),
        traces,
    })
}
