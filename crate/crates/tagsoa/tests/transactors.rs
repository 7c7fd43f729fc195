//! Tagged notifications across skewed platforms keep their tag order and
//! tags, whatever the network does within its declared bounds.

mod common;

use common::sweep::{run_sweep, Sweep};
use tagsoa::{Duration, GraphBuilder, Inline, Scheduler, StopCondition, Tag};

fn margin(s: &Sweep) -> Duration {
    s.deadline + s.max_latency + s.max_skew
}

fn check_bounded(s: &Sweep) {
    let r = run_sweep(s);
    assert_eq!(r.errors(), 0, "seed {}: {:?}", s.seed, r.subscriber_errors);
    assert_eq!(r.sent.len() as u64, s.messages);
    let expected: Vec<(Tag, u64)> = r
        .sent
        .iter()
        .map(|&(t, seq)| (t.delayed(margin(s)), seq))
        .collect();
    assert_eq!(r.received, expected, "seed {}", s.seed);
}

#[test]
fn reordering_link_keeps_tag_order() {
    for seed in 0..10 {
        check_bounded(&Sweep::new(300, seed));
    }
}

#[test]
fn in_order_link_keeps_tag_order() {
    for seed in 0..10 {
        check_bounded(&Sweep {
            in_order: true,
            ..Sweep::new(300, seed)
        });
    }
}

#[test]
fn larger_skew_is_absorbed_by_the_margin() {
    for seed in 0..5 {
        check_bounded(&Sweep {
            max_skew: Duration::from_millis(3),
            period: Duration::from_micros(300),
            ..Sweep::new(300, seed)
        });
    }
}

#[test]
fn latency_beyond_bound_is_reported() {
    let s = Sweep {
        // A message sent late in its deadline and held 7 ms past the bound
        // cannot be admitted once the receiver has moved on.
        injection: Some((20, Duration::from_millis(7))),
        max_skew: Duration::ZERO,
        ..Sweep::new(60, 3)
    };
    let r = run_sweep(&s);
    assert!(r.stale_tags() >= 1, "{:?}", r.subscriber_errors);
    assert_eq!(r.received.len() as u64 + r.stale_tags() as u64, s.messages);
    assert!(r.received.windows(2).all(|w| w[0].0 < w[1].0));
}

/// The same source feeding a sink over a plain delayed connection.
fn direct(s: &Sweep) -> Vec<(Tag, u64)> {
    let mut g = GraphBuilder::new();
    let src = g.add_reactor("source", 0u64);
    let out = g.output(src, "out");
    let tick = g.logical_action(src, "tick");
    let (period, messages) = (s.period, s.messages);
    g.reaction(src, "start")
        .on_startup()
        .schedules(tick)
        .body(move |_, ctx| {
            ctx.schedule(tick, period, []).unwrap();
        });
    g.reaction(src, "emit")
        .triggered_by(tick)
        .writes(out)
        .schedules(tick)
        .body(move |seq: &mut u64, ctx| {
            ctx.set(out, seq.to_be_bytes().to_vec()).unwrap();
            *seq += 1;
            if *seq < messages {
                ctx.schedule(tick, period, []).unwrap();
            }
        });
    let sink = g.add_reactor("sink", Vec::<(Tag, u64)>::new());
    let input = g.input(sink, "in");
    g.connect_delayed(out, input, margin(s)).unwrap();
    g.reaction(sink, "log")
        .triggered_by(input)
        .body(move |log: &mut Vec<(Tag, u64)>, ctx| {
            let bytes: [u8; 8] = ctx.get(input).unwrap().as_bytes().try_into().unwrap();
            log.push((ctx.tag(), u64::from_be_bytes(bytes)));
        });
    let mut sched = Scheduler::new(g.build().unwrap());
    sched
        .run_simulated(StopCondition::never(), &Inline)
        .unwrap();
    sched.state(sink).clone()
}

#[test]
fn transactor_pair_behaves_like_a_delayed_connection() {
    for (latency, seed) in [(Duration::from_nanos(1), 1), (Duration::from_millis(5), 2)] {
        let s = Sweep {
            max_latency: latency,
            ..Sweep::new(200, seed)
        };
        assert_eq!(run_sweep(&s).received, direct(&s));
    }
}
