//! Random reactor programs and an independent reference interpreter.
//!
//! The interpreter knows nothing of the scheduler's internals. It runs a
//! program tag by tag, computing reaction levels itself and firing every
//! reaction with a present trigger in (level, id) order.

#![allow(dead_code)]

pub mod sweep;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagsoa::trace::payload_digest;
use tagsoa::{
    ActionId, Duration, GraphBuilder, PortId, ReactionId, ReactorGraph, Tag, TraceRecord,
};

/// Reactions stop producing output after this many firings, which bounds
/// programs with feedback through delays or actions.
pub const FIRING_LIMIT: u32 = 2;

#[derive(Clone, Debug)]
pub struct ReactionDesc {
    pub id: ReactionId,
    pub reactor: usize,
    pub startup: bool,
    pub port_triggers: Vec<PortId>,
    pub action_triggers: Vec<ActionId>,
    pub reads: Vec<PortId>,
    pub writes: Vec<PortId>,
    pub schedules: Vec<(ActionId, Duration)>,
}

#[derive(Clone, Debug, Default)]
pub struct ReactorDesc {
    pub inputs: Vec<PortId>,
    pub outputs: Vec<PortId>,
    pub actions: Vec<ActionId>,
}

#[derive(Clone, Debug, Default)]
pub struct Program {
    pub reactors: Vec<ReactorDesc>,
    pub connections: Vec<(PortId, PortId, Option<Duration>)>,
    pub reactions: Vec<ReactionDesc>,
}

#[derive(Clone, Debug, Default)]
pub struct State {
    acc: u64,
    fires: HashMap<u32, u32>,
}

/// What one firing produces: a value per written port and per scheduled
/// action, or nothing once the firing limit is reached.
pub fn fire(
    state: &mut State,
    program: &ReactionDesc,
    tag: Tag,
    inputs: &[Option<Vec<u8>>],
) -> Option<u64> {
    let fires = state.fires.entry(program.id.0).or_insert(0);
    *fires += 1;
    let mut h = state.acc ^ 0x9e37_79b9_7f4a_7c15;
    let mut mix = |v: u64| h = (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(17);
    mix(u64::from(program.id.0));
    mix(tag.time);
    mix(u64::from(tag.microstep));
    for input in inputs {
        match input {
            Some(bytes) => mix(payload_digest(bytes)),
            None => mix(0xdead),
        }
    }
    state.acc = h;
    (*fires <= FIRING_LIMIT).then_some(h)
}

pub fn port_value(h: u64, port: PortId) -> Vec<u8> {
    (h ^ u64::from(port.0)).to_be_bytes().to_vec()
}

fn delay(rng: &mut ChaCha8Rng) -> Duration {
    [
        Duration::ZERO,
        Duration::from_millis(1),
        Duration::from_millis(2),
    ][rng.gen_range(0..3)]
}

fn subset<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], p: f64) -> Vec<T> {
    items.iter().copied().filter(|_| rng.gen_bool(p)).collect()
}

/// A random acyclic program with at most five reactors.
pub fn random_graph(seed: u64) -> (ReactorGraph, Program) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = GraphBuilder::new();
    let mut program = Program::default();
    let n = rng.gen_range(1..=5);
    let mut keys = Vec::new();
    for i in 0..n {
        let key = g.add_reactor(&format!("r{i}"), State::default());
        let mut r = ReactorDesc::default();
        for j in 0..rng.gen_range(0..=2) {
            r.inputs.push(g.input(key, &format!("in{j}")));
        }
        for j in 0..rng.gen_range(0..=2) {
            r.outputs.push(g.output(key, &format!("out{j}")));
        }
        for j in 0..rng.gen_range(0..=1) {
            r.actions.push(g.logical_action(key, &format!("a{j}")));
        }
        keys.push(key);
        program.reactors.push(r);
    }

    // Zero-delay connections only run forward, so the program is acyclic.
    for to_reactor in 0..n {
        for &input in &program.reactors[to_reactor].inputs {
            if rng.gen_bool(0.2) {
                continue;
            }
            let from_reactor = rng.gen_range(0..n);
            let Some(&output) = program.reactors[from_reactor].outputs.choose(&mut rng) else {
                continue;
            };
            let delayed = from_reactor >= to_reactor || rng.gen_bool(0.3);
            let d = delayed.then(|| delay(&mut rng));
            match d {
                Some(d) => g.connect_delayed(output, input, d),
                None => g.connect(output, input),
            }
            .expect("valid connection");
            program.connections.push((output, input, d));
        }
    }

    let mut next_id = 0u32;
    for (i, &key) in keys.iter().enumerate() {
        let r = program.reactors[i].clone();
        let count = rng.gen_range(1..=3);
        // Each action has at most one scheduling reaction.
        let owners: Vec<usize> = r
            .actions
            .iter()
            .map(|_| rng.gen_range(0..count + 1))
            .collect();
        for k in 0..count {
            let mut rs = ReactionDesc {
                id: ReactionId(next_id),
                reactor: i,
                startup: (i == 0 && k == 0) || rng.gen_bool(0.15),
                port_triggers: subset(&mut rng, &r.inputs, 0.6),
                action_triggers: subset(&mut rng, &r.actions, 0.6),
                reads: Vec::new(),
                writes: subset(&mut rng, &r.outputs, 0.6),
                schedules: r
                    .actions
                    .iter()
                    .zip(&owners)
                    .filter(|(_, &o)| o == k)
                    .map(|(&a, _)| (a, delay(&mut rng)))
                    .collect(),
            };
            rs.reads = r
                .inputs
                .iter()
                .copied()
                .filter(|p| !rs.port_triggers.contains(p) && rng.gen_bool(0.3))
                .collect();
            if rs.port_triggers.is_empty() && rs.action_triggers.is_empty() {
                rs.startup = true;
            }
            next_id += 1;

            let mut b = g.reaction(key, &format!("r{i}_{k}"));
            if rs.startup {
                b = b.on_startup();
            }
            for &p in &rs.port_triggers {
                b = b.triggered_by(p);
            }
            for &a in &rs.action_triggers {
                b = b.triggered_by(a);
            }
            for &p in &rs.reads {
                b = b.reads(p);
            }
            for &p in &rs.writes {
                b = b.writes(p);
            }
            for &(a, _) in &rs.schedules {
                b = b.schedules(a);
            }
            let desc = rs.clone();
            let id = b.body(move |state: &mut State, ctx| {
                let s = &desc;
                let mut inputs: Vec<Option<Vec<u8>>> = s
                    .port_triggers
                    .iter()
                    .chain(&s.reads)
                    .map(|&p| ctx.get(p).map(|v| v.to_vec()))
                    .collect();
                inputs.extend(
                    s.action_triggers
                        .iter()
                        .map(|&a| ctx.action_value(a).map(|v| v.to_vec())),
                );
                let Some(h) = fire(state, s, ctx.tag(), &inputs) else {
                    return;
                };
                for &p in &s.writes {
                    ctx.set(p, port_value(h, p)).expect("declared");
                }
                for &(a, d) in &s.schedules {
                    ctx.schedule(a, d, h.to_be_bytes()).expect("declared");
                }
            });
            assert_eq!(id, rs.id);
            program.reactions.push(rs);
        }
    }
    (g.build().expect("acyclic by construction"), program)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Target {
    Startup,
    Port(PortId),
    Action(ActionId),
}

/// Longest-path levels over zero-delay and declaration-order edges.
fn levels(program: &Program) -> Vec<u32> {
    let n = program.reactions.len();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for w in program.reactions.windows(2) {
        if w[0].reactor == w[1].reactor {
            edges.push((w[0].id.0 as usize, w[1].id.0 as usize));
        }
    }
    for writer in &program.reactions {
        for &out in &writer.writes {
            for &(from, to, d) in &program.connections {
                if from != out || d.is_some() {
                    continue;
                }
                for reader in &program.reactions {
                    if reader.port_triggers.contains(&to) || reader.reads.contains(&to) {
                        edges.push((writer.id.0 as usize, reader.id.0 as usize));
                    }
                }
            }
        }
    }
    // Relaxation terminates because the graph is acyclic.
    let mut level = vec![0u32; n];
    let mut changed = true;
    while changed {
        changed = false;
        for &(a, b) in &edges {
            if level[b] < level[a] + 1 {
                level[b] = level[a] + 1;
                changed = true;
            }
        }
    }
    level
}

/// Runs `program` until no events remain.
pub fn reference_trace(program: &Program) -> Vec<TraceRecord> {
    let level = levels(program);
    let mut order: Vec<&ReactionDesc> = program.reactions.iter().collect();
    order.sort_by_key(|r| (level[r.id.0 as usize], r.id));
    let mut states = vec![State::default(); program.reactors.len()];
    let mut queue: BTreeMap<Tag, Vec<(Target, Vec<u8>)>> = BTreeMap::new();
    let push = |queue: &mut BTreeMap<Tag, Vec<(Target, Vec<u8>)>>, tag, target, value| {
        let events = queue.entry(tag).or_default();
        events.retain(|(t, _)| *t != target);
        events.push((target, value));
    };
    if program.reactions.iter().any(|r| r.startup) {
        push(&mut queue, Tag::ZERO, Target::Startup, Vec::new());
    }

    let mut trace = Vec::new();
    while let Some((tag, events)) = queue.pop_first() {
        let mut present: HashMap<Target, Vec<u8>> = events.into_iter().collect();
        for r in &order {
            let triggered = (r.startup && present.contains_key(&Target::Startup))
                || r.port_triggers
                    .iter()
                    .any(|&p| present.contains_key(&Target::Port(p)))
                || r.action_triggers
                    .iter()
                    .any(|&a| present.contains_key(&Target::Action(a)));
            if !triggered {
                continue;
            }
            let mut inputs: Vec<Option<Vec<u8>>> = r
                .port_triggers
                .iter()
                .chain(&r.reads)
                .map(|&p| present.get(&Target::Port(p)).cloned())
                .collect();
            inputs.extend(
                r.action_triggers
                    .iter()
                    .map(|&a| present.get(&Target::Action(a)).cloned()),
            );
            let mut writes = Vec::new();
            if let Some(h) = fire(&mut states[r.reactor], r, tag, &inputs) {
                for &p in &r.writes {
                    let value = port_value(h, p);
                    writes.push((p, payload_digest(&value)));
                    for &(from, to, d) in &program.connections {
                        if from != p {
                            continue;
                        }
                        match d {
                            None => {
                                present.insert(Target::Port(to), value.clone());
                            }
                            Some(d) => {
                                push(&mut queue, tag.delayed(d), Target::Port(to), value.clone())
                            }
                        }
                    }
                }
                for &(a, d) in &r.schedules {
                    let mut at = tag.delayed(d);
                    while queue
                        .get(&at)
                        .is_some_and(|ev| ev.iter().any(|(t, _)| *t == Target::Action(a)))
                    {
                        at = at.next_microstep();
                    }
                    push(&mut queue, at, Target::Action(a), h.to_be_bytes().to_vec());
                }
            }
            trace.push(TraceRecord {
                tag,
                reaction: r.id,
                deadline_handler: false,
                writes,
            });
        }
    }
    trace
}
