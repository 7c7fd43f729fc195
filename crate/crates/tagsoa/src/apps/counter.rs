//! A client sets a counter to 1, adds 2 and reads it back, without waiting
//! for replies in between.

use std::sync::{Arc, Mutex};

use futures::executor::block_on;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagsoa_core::counter::{Counter, CounterCall, CLIENT_CALLS};
use tagsoa_core::{Duration, GraphBuilder, Tag, TransactorConfig};

use super::Mode;
use crate::federation::{skew_offsets, Federation};
use crate::middleware::{
    BindingMode, Endpoint, EndpointId, LatencyDistribution, LinkModel, Network, Proxy, Registry,
    Responder, ServiceDescriptor, Skeleton,
};
use crate::runtime::Clock;
use crate::transactors::{client_method, server_method};

const SERVICE: u16 = 0x10;
const METHODS: [(u16, &str); 3] = [(1, "set_value"), (2, "add"), (3, "get_value")];

fn descriptor() -> ServiceDescriptor {
    METHODS
        .iter()
        .fold(ServiceDescriptor::new(SERVICE), |d, &(id, name)| {
            d.method(id, name)
        })
}

fn encode_call(call: CounterCall) -> Vec<u8> {
    match call {
        CounterCall::Set(v) | CounterCall::Add(v) => v.to_be_bytes().to_vec(),
        CounterCall::Get => Vec::new(),
    }
}

fn decode_value(bytes: &[u8]) -> i64 {
    i64::from_be_bytes(bytes.try_into().expect("8-byte counter value"))
}

fn call_for(method_id: u16, args: &[u8]) -> CounterCall {
    match method_id {
        1 => CounterCall::Set(decode_value(args)),
        2 => CounterCall::Add(decode_value(args)),
        _ => CounterCall::Get,
    }
}

/// Runs the demo once and returns the value the client prints.
pub fn counter_demo(mode: Mode, seed: u64) -> i64 {
    match mode {
        Mode::Naive => counter_naive(seed),
        Mode::Reactor => counter_reactor(seed),
    }
}

struct Job {
    start: u64,
    seq: usize,
    call: CounterCall,
    responder: Responder,
}

/// Plain middleware. Requests travel with random latency, and the server
/// handles each on its own thread, which starts after a random delay.
pub fn counter_naive(seed: u64) -> i64 {
    let registry = Arc::new(Registry::new());
    let clock = Clock::simulated();
    let client = Endpoint::new(
        EndpointId(0),
        BindingMode::Legacy,
        registry.clone(),
        clock.clone(),
    );
    let server = Endpoint::new(EndpointId(1), BindingMode::Legacy, registry, clock.clone());
    let link = LinkModel::new(LatencyDistribution::Uniform {
        min: Duration::ZERO,
        max: Duration::from_millis(5),
    })
    .in_order(false);
    let mut network = Network::new(link, seed);
    let rng = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(
        seed ^ 0x7468_7265_6164,
    )));
    let jobs: Arc<Mutex<Vec<Job>>> = Arc::default();

    let skeleton = Skeleton::offer(&server, descriptor()).expect("valid descriptor");
    for (id, _) in METHODS {
        let jobs = jobs.clone();
        let rng = rng.clone();
        skeleton.bind(id, move |req, responder| {
            let delay = rng.lock().expect("rng").gen_range(0..3_000_000u64);
            let mut jobs = jobs.lock().expect("jobs");
            let seq = jobs.len();
            jobs.push(Job {
                start: req.received_at + delay,
                seq,
                call: call_for(id, &req.payload),
                responder,
            });
        });
    }

    let proxy = Proxy::new(&client, SERVICE).expect("service offered");
    let mut pending: Vec<_> = METHODS
        .iter()
        .zip(CLIENT_CALLS)
        .map(|(&(id, _), call)| proxy.call(id, encode_call(call), 0))
        .collect();

    let pump = |network: &mut Network| {
        for ep in [&client, &server] {
            for out in ep.drain_outbox() {
                network.transmit(ep.id(), out.to, out.bytes, out.send_time);
            }
        }
        while let Some(d) = network.pop_next() {
            clock.set(d.arrival);
            let to = if d.to == client.id() {
                &client
            } else {
                &server
            };
            to.deliver(d.from, &d.bytes).expect("well-formed message");
        }
    };
    pump(&mut network);

    let mut ready = std::mem::take(&mut *jobs.lock().expect("jobs"));
    ready.sort_by_key(|j| (j.start, j.seq));
    let mut counter = Counter::default();
    for job in ready {
        let reply = counter
            .handle(job.call)
            .map_or_else(Vec::new, |v| v.to_be_bytes().to_vec());
        job.responder.respond(reply, job.start);
    }
    pump(&mut network);

    let get = pending.pop().expect("get call");
    decode_value(&block_on(get).expect("get answered").payload)
}

/// Transactors on both sides. All three calls carry the same tag, so the
/// server logic handles them at one tag in its declared reaction order.
pub fn counter_reactor(seed: u64) -> i64 {
    let l = Duration::from_millis(5);
    let e = Duration::from_millis(1);
    let config = TransactorConfig::new(Duration::from_millis(5), l, e).expect("positive deadline");
    let link = LinkModel::new(LatencyDistribution::Uniform {
        min: Duration::ZERO,
        max: l,
    })
    .in_order(false);
    let mut fed = Federation::new(link, seed);
    let offsets = skew_offsets(2, e, seed);
    let cp = fed.add_platform("client", offsets[0]);
    let sp = fed.add_platform("server", offsets[1]);
    let cep = fed.endpoint(cp, BindingMode::Tagged);
    let sep = fed.endpoint(sp, BindingMode::Tagged);
    let skeleton = Skeleton::offer(&sep, descriptor()).expect("valid descriptor");
    let proxy = Arc::new(Proxy::new(&cep, SERVICE).expect("service offered"));

    let mut g = GraphBuilder::new();
    let logic = g.add_reactor("counter", Counter::default());
    for (id, name) in METHODS {
        let t = server_method(&mut g, name, &skeleton, id, config, fed.handle(sp));
        let input = g.input(logic, name);
        let output = g.output(logic, &format!("{name}_done"));
        g.connect(t.request, input).expect("fresh input");
        g.connect(output, t.response).expect("fresh input");
        g.reaction(logic, name)
            .triggered_by(input)
            .writes(output)
            .body(move |c: &mut Counter, ctx| {
                let call = call_for(id, ctx.get(input).expect("triggering input"));
                let reply = c
                    .handle(call)
                    .map_or_else(Vec::new, |v| v.to_be_bytes().to_vec());
                ctx.set(output, reply).expect("declared effect");
            });
    }
    fed.install(sp, g.build().expect("acyclic"));

    let mut g = GraphBuilder::new();
    let app = g.add_reactor("client", None::<(Tag, i64)>);
    let mut requests = Vec::new();
    let mut last = None;
    for (id, name) in METHODS {
        let t = client_method(&mut g, name, proxy.clone(), id, config, fed.handle(cp));
        let out = g.output(app, name);
        g.connect(out, t.request).expect("fresh input");
        requests.push(out);
        last = Some(t.response);
    }
    let got = g.input(app, "value");
    g.connect(last.expect("three methods"), got)
        .expect("fresh input");
    g.reaction(app, "issue")
        .on_startup()
        .writes(requests[0])
        .writes(requests[1])
        .writes(requests[2])
        .body(move |_, ctx| {
            for (port, call) in requests.iter().zip(CLIENT_CALLS) {
                ctx.set(*port, encode_call(call)).expect("declared effect");
            }
        });
    g.reaction(app, "print").triggered_by(got).body(
        move |printed: &mut Option<(Tag, i64)>, ctx| {
            *printed = Some((
                ctx.tag(),
                decode_value(ctx.get(got).expect("triggering input")),
            ));
        },
    );
    fed.install(cp, g.build().expect("acyclic"));

    fed.run(None).expect("counter demo runs");
    fed.runtime(cp).state(app).expect("get answered").1
}
