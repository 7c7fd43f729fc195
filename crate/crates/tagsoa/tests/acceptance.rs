//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::cell::Cell;
use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration as Wall, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use tagsoa::apps::brake::{
    expected_decision, run_reactor_pipeline, Hop, LatencyInjection, ReactorConfig,
};
use tagsoa::apps::counter::counter_demo;
use tagsoa::apps::naive::{run_naive_pipeline, NaiveConfig};
use tagsoa::apps::Mode;
use tagsoa::counter::all_interleavings;
use tagsoa::pipeline::DEFAULT_BRAKE_THRESHOLD_M;
use tagsoa::runtime::PoolExecutor;
use tagsoa::{
    check_deadline, safe_tag, Duration, GraphBuilder, Inline, MessageKind, Scheduler,
    StopCondition, Tag, WireMessage,
};

use common::sweep::{run_sweep, Sweep};

const MS: u64 = 1_000_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let mut digests = BTreeSet::new();
    let mut errors = 0;
    for workers in [1, 2, 4] {
        for _ in 0..10 {
            let mut cfg = ReactorConfig::new(1000, 0);
            cfg.workers = workers;
            let out = run_reactor_pipeline(&cfg).map_err(|e| e.to_string())?;
            errors += out.stats.total_errors() + out.undeliverable as u64;
            digests.insert(out.digest);
        }
    }
    let elapsed = start.elapsed();
    ensure(
        digests.len() == 1 && errors == 0 && elapsed < Wall::from_secs(10),
        format!(
            "30 runs, {} distinct digests, {errors} errors, {elapsed:.2?}",
            digests.len()
        ),
    )
}

fn counter() -> Outcome {
    let reactor_threes = (0..1000)
        .filter(|&s| counter_demo(Mode::Reactor, s) == 3)
        .count();
    let naive: BTreeSet<i64> = (0..1000).map(|s| counter_demo(Mode::Naive, s)).collect();
    let enumerated: BTreeSet<i64> = all_interleavings().into_iter().map(|(_, v)| v).collect();
    ensure(
        reactor_threes == 1000
            && naive.len() >= 2
            && naive.iter().all(|v| (0..=3).contains(v))
            && enumerated == BTreeSet::from([0, 1, 2, 3]),
        format!("reactor 3 in {reactor_threes}/1000, naive values {naive:?}, interleavings {enumerated:?}"),
    )
}

fn naive_spread() -> Outcome {
    let start = Instant::now();
    let rates: Vec<f64> = (0..20)
        .map(|seed| {
            run_naive_pipeline(&NaiveConfig::new(5000, seed))
                .stats
                .error_rate()
        })
        .collect();
    let elapsed = start.elapsed();
    let nonzero: Vec<f64> = rates.iter().copied().filter(|&r| r > 0.0).collect();
    let max = nonzero.iter().copied().fold(0.0, f64::max);
    let min = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    ensure(
        nonzero.len() >= 15 && ratio > 10.0 && elapsed < Wall::from_secs(60),
        format!(
            "{}/20 trials with errors, rates {:.4}%..{:.4}%, ratio {ratio:.1}, {elapsed:.2?}",
            nonzero.len(),
            min * 100.0,
            max * 100.0
        ),
    )
}

fn safe_to_process() -> Outcome {
    let mut messages = 0u64;
    let mut stale = 0;
    let mut other_errors = 0;
    let mut out_of_order = 0;
    for seed in 0..20u64 {
        let s = Sweep {
            in_order: seed % 2 == 0,
            max_skew: Duration::from_micros(500 * (seed % 4)),
            ..Sweep::new(500, seed)
        };
        let r = run_sweep(&s);
        messages += r.sent.len() as u64;
        stale += r.stale_tags();
        other_errors += r.errors() - r.stale_tags();
        let margin = s.deadline + s.max_latency + s.max_skew;
        let expected: Vec<(Tag, u64)> = r
            .sent
            .iter()
            .map(|&(t, q)| (t.delayed(margin), q))
            .collect();
        out_of_order += (r.received != expected) as usize;
        out_of_order += r.received.windows(2).filter(|w| w[0].0 >= w[1].0).count();
    }

    let mut cfg = ReactorConfig::new(20, 2);
    cfg.injections.push(LatencyInjection {
        hop: Hop::PreprocessingToVision,
        nth: 10,
        latency: Duration::from_millis(7),
    });
    let witness = run_reactor_pipeline(&cfg).map_err(|e| e.to_string())?;
    let wrong_decisions = witness
        .decisions
        .iter()
        .filter(|(_, d)| *d != expected_decision(d.source_seq, DEFAULT_BRAKE_THRESHOLD_M))
        .count();
    ensure(
        messages >= 10_000
            && stale == 0
            && other_errors == 0
            && out_of_order == 0
            && witness.stats.total_errors() >= 1
            && witness.stats.misaligned_cv == 0
            && wrong_decisions == 0,
        format!(
            "{messages} messages, {stale} stale, {other_errors} other errors, {out_of_order} out of order; \
             7 ms witness: {} errors, {} misaligned, {wrong_decisions} wrong decisions",
            witness.stats.total_errors(),
            witness.stats.misaligned_cv
        ),
    )
}

fn safe_tag_and_latency() -> Outcome {
    let ms = Duration::from_millis;
    let tag = safe_tag(Tag::new(100 * MS, 0), ms(25), ms(5), ms(0));
    let mut cfg = ReactorConfig::new(100, 0);
    cfg.keep_traces = true;
    let out = run_reactor_pipeline(&cfg).map_err(|e| e.to_string())?;
    let latencies: BTreeSet<Duration> = out.latency.per_frame.iter().map(|&(_, d)| d).collect();
    ensure(
        tag == Tag::new(130 * MS, 0)
            && out.latency.missing == 0
            && out.latency.per_frame.len() == 100
            && latencies == BTreeSet::from([ms(75)]),
        format!(
            "safe_tag {:?}, {} frames traced, latencies {latencies:?}",
            (tag.time, tag.microstep),
            out.latency.per_frame.len()
        ),
    )
}

fn wire_message() -> impl Strategy<Value = WireMessage> {
    let kind = prop_oneof![
        Just(MessageKind::Request),
        Just(MessageKind::Response),
        Just(MessageKind::Notification)
    ];
    let payload = prop_oneof![
        Just(Vec::new()),
        proptest::collection::vec(any::<u8>(), 0..96)
    ];
    let tag = proptest::option::of((any::<u64>(), any::<u32>()).prop_map(|(t, m)| Tag::new(t, m)));
    (any::<u16>(), any::<u16>(), any::<u32>(), kind, payload, tag).prop_map(
        |(service_id, id, call_id, kind, payload, tag)| WireMessage {
            service_id,
            id,
            call_id,
            kind,
            payload,
            tag,
        },
    )
}

fn codec() -> Outcome {
    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let seen: [Cell<u32>; 4] = Default::default();
    let result = runner.run(&wire_message(), |m| {
        let bump = |c: &Cell<u32>| c.set(c.get() + 1);
        bump(&seen[m.tag.is_some() as usize]);
        bump(&seen[2 + m.payload.is_empty() as usize]);
        let bytes = m.encode();
        let back = WireMessage::decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.encode(), bytes.clone());
        for len in 0..bytes.len() {
            prop_assert!(
                WireMessage::decode(&bytes[..len]).is_err(),
                "prefix {} accepted",
                len
            );
        }
        Ok(())
    });
    let detail = format!(
        "{cases} round trips ({} tagged, {} untagged, {} empty payloads), all truncations rejected",
        seen[1].get(),
        seen[0].get(),
        seen[3].get()
    );
    match result {
        Ok(()) => ensure(seen.iter().all(|n| n.get() > 0), detail),
        Err(e) => Err(format!("{detail}: {e}")),
    }
}

/// Runs a reaction with deadline `d` dispatched `work` after its tag;
/// returns whether the handler ran instead of the body.
fn dispatch_after(work: Duration, d: Duration) -> bool {
    let mut g = GraphBuilder::new();
    let r = g.add_reactor("r", None::<bool>);
    let out = g.output(r, "out");
    let input = g.input(r, "in");
    g.connect(out, input).unwrap();
    g.reaction(r, "busy")
        .on_startup()
        .writes(out)
        .body(move |_, ctx| {
            ctx.consume(work);
            ctx.set(out, vec![1]).unwrap();
        });
    g.reaction(r, "bounded")
        .triggered_by(input)
        .deadline(d, |missed: &mut Option<bool>, _| *missed = Some(true))
        .body(|missed: &mut Option<bool>, _| *missed = Some(false));
    let mut sched = Scheduler::new(g.build().unwrap());
    sched
        .run_simulated(StopCondition::never(), &Inline)
        .unwrap();
    sched.state(r).expect("bounded reaction ran")
}

fn deadline() -> Outcome {
    let t = 100 * MS;
    let d = Duration::from_millis(5);
    let at_bound = check_deadline(Tag::new(t, 0), d, t + d.as_nanos());
    let past_bound = check_deadline(Tag::new(t, 0), d, t + d.as_nanos() + 1);
    let run_at_bound = dispatch_after(d, d);
    let run_past_bound = dispatch_after(d + Duration::from_nanos(1), d);
    ensure(
        !at_bound && past_bound && !run_at_bound && run_past_bound,
        format!(
            "predicate at t+D {at_bound}, at t+D+1ns {past_bound}; runtime handler at t+D {run_at_bound}, \
             at t+D+1ns {run_past_bound}"
        ),
    )
}

fn oracle() -> Outcome {
    let pool = PoolExecutor::new(4);
    let mut mismatches = Vec::new();
    let mut max_tags = 0;
    let mut records = 0;
    for seed in 0..100 {
        let (_, program) = common::random_graph(seed);
        let reference = common::reference_trace(&program);
        let tags: BTreeSet<Tag> = reference.iter().map(|r| r.tag).collect();
        max_tags = max_tags.max(tags.len());
        records += reference.len();
        for pooled in [false, true] {
            let (graph, _) = common::random_graph(seed);
            let mut sched = Scheduler::new(graph);
            let trace = if pooled {
                sched.run_simulated(StopCondition::never(), &pool)
            } else {
                sched.run_simulated(StopCondition::never(), &Inline)
            };
            if trace.as_deref() != Ok(&reference[..]) {
                mismatches.push((seed, pooled));
            }
        }
    }
    ensure(
        mismatches.is_empty() && max_tags <= 20,
        format!("100 graphs, {records} reference records, at most {max_tags} tags per run, mismatches {mismatches:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("determinism", determinism),
        ("counter", counter),
        ("naive-spread", naive_spread),
        ("safe-to-process", safe_to_process),
        ("safe-tag-latency", safe_tag_and_latency),
        ("codec", codec),
        ("deadline", deadline),
        ("oracle", oracle),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
