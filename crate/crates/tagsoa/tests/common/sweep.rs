//! A publisher and subscriber on two skewed platforms exchanging a stream of
//! tagged notifications over a random-latency link.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagsoa::federation::{skew_offsets, Federation};
use tagsoa::middleware::{
    BindingMode, LatencyDistribution, LinkModel, Proxy, ServiceDescriptor, Skeleton,
};
use tagsoa::transactors::{event_publisher, event_subscriber};
use tagsoa::{Duration, GraphBuilder, Tag, TransactorConfig, TransactorError};

#[derive(Clone, Debug)]
pub struct Sweep {
    pub messages: u64,
    pub period: Duration,
    pub deadline: Duration,
    pub max_latency: Duration,
    pub max_skew: Duration,
    pub in_order: bool,
    /// Extra latency for the nth message, beyond the declared bound.
    pub injection: Option<(u64, Duration)>,
    pub seed: u64,
}

impl Sweep {
    pub fn new(messages: u64, seed: u64) -> Self {
        Sweep {
            messages,
            period: Duration::from_millis(1),
            deadline: Duration::from_millis(5),
            max_latency: Duration::from_millis(5),
            max_skew: Duration::from_millis(1),
            in_order: false,
            injection: None,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    /// (publish tag, sequence number) as emitted.
    pub sent: Vec<(Tag, u64)>,
    /// (event tag, sequence number) as received.
    pub received: Vec<(Tag, u64)>,
    pub publisher_errors: Vec<TransactorError>,
    pub subscriber_errors: Vec<TransactorError>,
}

impl SweepResult {
    pub fn stale_tags(&self) -> usize {
        self.subscriber_errors
            .iter()
            .filter(|e| matches!(e, TransactorError::StaleTag { .. }))
            .count()
    }

    pub fn errors(&self) -> usize {
        self.publisher_errors.len() + self.subscriber_errors.len()
    }
}

#[derive(Default)]
struct Source {
    seq: u64,
    rng: Option<ChaCha8Rng>,
    sent: Vec<(Tag, u64)>,
}

pub fn run_sweep(s: &Sweep) -> SweepResult {
    let config =
        TransactorConfig::new(s.deadline, s.max_latency, s.max_skew).expect("nonzero deadline");
    let link = LinkModel::new(LatencyDistribution::Uniform {
        min: Duration::ZERO,
        max: s.max_latency,
    })
    .in_order(s.in_order);
    let mut fed = Federation::new(link, s.seed);
    let offsets = skew_offsets(2, s.max_skew, s.seed);
    let pp = fed.add_platform("publisher", offsets[0]);
    let sp = fed.add_platform("subscriber", offsets[1]);
    let pep = fed.endpoint(pp, BindingMode::Tagged);
    let sep = fed.endpoint(sp, BindingMode::Tagged);
    if let Some((nth, extra)) = s.injection {
        fed.network_mut()
            .inject(pep.id(), sep.id(), nth, s.max_latency + extra);
    }
    let skeleton =
        Arc::new(Skeleton::offer(&pep, ServiceDescriptor::new(0x30).event(1, "seq")).unwrap());
    let proxy = Proxy::new(&sep, 0x30).unwrap();

    // Publisher: a timer that emits the next sequence number after a random
    // amount of work, short enough that no backlog builds up.
    let mut g = GraphBuilder::new();
    let publisher = event_publisher(&mut g, "pub", skeleton, 1, config);
    let source = g.add_reactor(
        "source",
        Source {
            rng: Some(ChaCha8Rng::seed_from_u64(s.seed ^ 0x50_7ce)),
            ..Source::default()
        },
    );
    let out = g.output(source, "out");
    let tick = g.logical_action(source, "tick");
    g.connect(out, publisher.input).unwrap();
    let (period, messages) = (s.period, s.messages);
    let max_work = s.deadline.as_nanos().min(s.period.as_nanos()) - 1;
    g.reaction(source, "start")
        .on_startup()
        .schedules(tick)
        .body(move |_, ctx| {
            ctx.schedule(tick, period, []).unwrap();
        });
    g.reaction(source, "emit")
        .triggered_by(tick)
        .writes(out)
        .schedules(tick)
        .body(move |src: &mut Source, ctx| {
            let work = src.rng.as_mut().unwrap().gen_range(0..=max_work);
            ctx.consume(Duration::from_nanos(work));
            ctx.set(out, src.seq.to_be_bytes().to_vec()).unwrap();
            src.sent.push((ctx.tag(), src.seq));
            src.seq += 1;
            if src.seq < messages {
                ctx.schedule(tick, period, []).unwrap();
            }
        });
    let perrors = g.add_reactor("errors", Vec::<TransactorError>::new());
    let pin = g.input(perrors, "in");
    g.connect(publisher.error, pin).unwrap();
    g.reaction(perrors, "log").triggered_by(pin).body(
        move |log: &mut Vec<TransactorError>, ctx| {
            log.push(TransactorError::decode(ctx.get(pin).unwrap().as_bytes()).unwrap())
        },
    );
    fed.install(pp, g.build().unwrap());

    let mut g = GraphBuilder::new();
    let sub = event_subscriber(&mut g, "sub", &proxy, 1, config, fed.handle(sp));
    let sink = g.add_reactor(
        "sink",
        (Vec::<(Tag, u64)>::new(), Vec::<TransactorError>::new()),
    );
    let data = g.input(sink, "data");
    let err = g.input(sink, "error");
    g.connect(sub.output, data).unwrap();
    g.connect(sub.error, err).unwrap();
    g.reaction(sink, "data").triggered_by(data).body(
        move |(log, _): &mut (Vec<(Tag, u64)>, Vec<TransactorError>), ctx| {
            let bytes: [u8; 8] = ctx.get(data).unwrap().as_bytes().try_into().unwrap();
            log.push((ctx.tag(), u64::from_be_bytes(bytes)));
        },
    );
    g.reaction(sink, "error").triggered_by(err).body(
        move |(_, log): &mut (Vec<(Tag, u64)>, Vec<TransactorError>), ctx| {
            log.push(TransactorError::decode(ctx.get(err).unwrap().as_bytes()).unwrap());
        },
    );
    fed.install(sp, g.build().unwrap());
    fed.run(None).expect("federation run");

    let (received, subscriber_errors) = fed.runtime(sp).state(sink).clone();
    SweepResult {
        sent: fed.runtime(pp).state(source).sent.clone(),
        received,
        publisher_errors: fed.runtime(pp).state(perrors).clone(),
        subscriber_errors,
    }
}
