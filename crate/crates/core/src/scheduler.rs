//! Tag-ordered execution of a reactor graph.
//!
//! The [`Scheduler`] pops all events carrying the smallest pending tag,
//! determines which reactions they trigger, and runs those reactions level
//! by level in [`Apg`] order. Reactions of one level are mutually
//! independent and may be handed to a parallel [`Executor`]; their effects
//! are merged afterwards in reaction-id order, so the resulting trace does
//! not depend on how many workers ran them.
//!
//! Physical time is supplied by the caller for every step. With
//! [`PhysicalTime::Simulated`] each level starts when the slowest reaction of
//! the previous level finished, where a reaction's duration is whatever it
//! declared through [`ReactionCtx::consume`].

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::any::Any;
use core::fmt;

use crate::apg::Apg;
use crate::graph::{
    ActionId, ActionKind, Payload, PortId, ReactionCode, ReactionId, ReactionInfo, ReactorGraph,
    ReactorKey, Topology, Trigger,
};
use crate::time::{check_deadline, Duration, Tag};
use crate::trace::TraceRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventTarget {
    Startup,
    Port(PortId),
    Action(ActionId),
}

/// A tagged value bound for a port or action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub tag: Tag,
    pub target: EventTarget,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("tag {tag} is not later than the last processed tag {current}")]
pub struct StaleTag {
    pub tag: Tag,
    pub current: Tag,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("reaction `{reaction}` did not declare {item} as an effect")]
    UndeclaredEffect { reaction: String, item: String },
    #[error("action {0} is not a physical action")]
    NotPhysical(ActionId),
    #[error("the scheduler has stopped")]
    SchedulerStopped,
    #[error("reaction `{reaction}` failed at tag {tag}: {message}")]
    ExecutionFault {
        tag: Tag,
        reaction: String,
        message: String,
    },
    #[error(transparent)]
    Stale(#[from] StaleTag),
}

/// When a run ends. Both limits are inclusive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StopCondition {
    /// Do not process tags later than this.
    pub until: Option<Tag>,
    /// Stop once this many events have been processed.
    pub max_events: Option<u64>,
}

impl StopCondition {
    pub fn never() -> Self {
        Self::default()
    }

    pub fn until(tag: Tag) -> Self {
        StopCondition {
            until: Some(tag),
            max_events: None,
        }
    }

    pub fn events(budget: u64) -> Self {
        StopCondition {
            until: None,
            max_events: Some(budget),
        }
    }

    pub fn reached(&self, next: Tag, processed: u64) -> bool {
        self.until.is_some_and(|u| next > u) || self.max_events.is_some_and(|m| processed >= m)
    }
}

/// Hands out tags for externally inserted events.
///
/// Two insertions on the same action at the same tag are separated by
/// microsteps in insertion order, and no insertion may land at or before the
/// last processed tag.
#[derive(Clone, Debug, Default)]
pub struct PhysicalTagAllocator {
    floor: Option<Tag>,
    issued: BTreeSet<(ActionId, Tag)>,
}

impl PhysicalTagAllocator {
    /// Tag for an event observed at `candidate`, lifted above the last
    /// processed tag and above earlier insertions on the same action.
    pub fn allocate(&mut self, action: ActionId, candidate: Tag) -> Tag {
        let mut tag = candidate;
        if let Some(floor) = self.floor {
            if tag <= floor {
                tag = floor.next_microstep();
            }
        }
        self.settle(action, tag)
    }

    /// Tag for an event that must be processed at exactly `tag`; fails if
    /// that tag has already been passed.
    pub fn allocate_exact(&mut self, action: ActionId, tag: Tag) -> Result<Tag, StaleTag> {
        if let Some(floor) = self.floor {
            if tag <= floor {
                return Err(StaleTag {
                    tag,
                    current: floor,
                });
            }
        }
        Ok(self.settle(action, tag))
    }

    fn settle(&mut self, action: ActionId, mut tag: Tag) -> Tag {
        while self.issued.contains(&(action, tag)) {
            tag = tag.next_microstep();
        }
        self.issued.insert((action, tag));
        tag
    }

    /// Records that every tag up to `processed` has been executed.
    pub fn advance(&mut self, processed: Tag) {
        self.floor = Some(self.floor.map_or(processed, |f| f.max(processed)));
        self.issued.retain(|&(_, t)| t > processed);
    }

    pub fn floor(&self) -> Option<Tag> {
        self.floor
    }
}

#[derive(Default)]
struct EventQueue {
    buckets: BTreeMap<Tag, Vec<(EventTarget, Payload)>>,
}

impl EventQueue {
    /// A second event for the same target at the same tag replaces the first.
    fn push(&mut self, event: Event) {
        let bucket = self.buckets.entry(event.tag).or_default();
        match bucket.iter_mut().find(|(t, _)| *t == event.target) {
            Some(slot) => slot.1 = event.payload,
            None => bucket.push((event.target, event.payload)),
        }
    }

    fn occupied(&self, tag: Tag, target: EventTarget) -> bool {
        self.buckets
            .get(&tag)
            .is_some_and(|b| b.iter().any(|(t, _)| *t == target))
    }

    fn next_tag(&self) -> Option<Tag> {
        self.buckets.keys().next().copied()
    }

    fn pop_next(&mut self) -> Option<(Tag, Vec<(EventTarget, Payload)>)> {
        self.buckets.pop_first()
    }

    fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }
}

/// Source of physical time for one scheduler step.
#[derive(Clone, Copy)]
pub enum PhysicalTime<'a> {
    /// Simulated time; the step starts at this instant.
    Simulated(u64),
    /// A live clock read at every dispatch.
    Live(&'a (dyn Fn() -> u64 + Sync)),
}

impl fmt::Debug for PhysicalTime<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhysicalTime::Simulated(t) => write!(f, "Simulated({t})"),
            PhysicalTime::Live(_) => f.write_str("Live"),
        }
    }
}

#[derive(Clone, Copy)]
enum DispatchClock<'a> {
    Simulated { dispatch: u64, consumed: u64 },
    Live(&'a (dyn Fn() -> u64 + Sync)),
}

struct TagView<'a> {
    topology: &'a Topology,
    ports: &'a [Option<Payload>],
    actions: &'a [Option<Payload>],
    startup: bool,
    queue: &'a EventQueue,
}

/// What a reaction sees and may do while it executes.
pub struct ReactionCtx<'a> {
    tag: Tag,
    reaction: ReactionId,
    info: &'a ReactionInfo,
    view: &'a TagView<'a>,
    clock: DispatchClock<'a>,
    deadline_missed: bool,
    writes: Vec<(PortId, Payload)>,
    schedules: Vec<(ActionId, Tag, Payload)>,
}

impl<'a> ReactionCtx<'a> {
    /// The tag of the triggering events; all outputs carry this tag.
    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn reaction(&self) -> ReactionId {
        self.reaction
    }

    /// Whether this invocation is a deadline handler.
    pub fn deadline_missed(&self) -> bool {
        self.deadline_missed
    }

    pub fn is_present(&self, trigger: impl Into<Trigger>) -> bool {
        match trigger.into() {
            Trigger::Startup => self.view.startup,
            Trigger::Port(p) => self.get(p).is_some(),
            Trigger::Action(a) => self.action_value(a).is_some(),
        }
    }

    /// Value of a declared input port, or of an output this reaction wrote.
    pub fn get(&self, port: PortId) -> Option<&Payload> {
        if self.info.port_effects.contains(&port) {
            return self
                .writes
                .iter()
                .rev()
                .find(|(p, _)| *p == port)
                .map(|(_, v)| v);
        }
        let declared =
            self.info.sources.contains(&port) || self.info.triggers.contains(&Trigger::Port(port));
        if declared {
            self.view.ports[port.index()].as_ref()
        } else {
            None
        }
    }

    pub fn action_value(&self, action: ActionId) -> Option<&Payload> {
        if self.info.triggers.contains(&Trigger::Action(action)) {
            self.view.actions[action.index()].as_ref()
        } else {
            None
        }
    }

    /// Writes an output port. The last write within one reaction wins.
    pub fn set(&mut self, port: PortId, value: impl Into<Payload>) -> Result<(), RuntimeError> {
        if !self.info.port_effects.contains(&port) {
            return Err(self.undeclared(alloc::format!(
                "port `{}`",
                self.view.topology.port(port).name
            )));
        }
        let value = value.into();
        match self.writes.iter_mut().find(|(p, _)| *p == port) {
            Some(slot) => slot.1 = value,
            None => self.writes.push((port, value)),
        }
        Ok(())
    }

    /// Schedules a logical action `delay` after the current tag. A zero
    /// delay lands one microstep later.
    pub fn schedule(
        &mut self,
        action: ActionId,
        delay: Duration,
        value: impl Into<Payload>,
    ) -> Result<Tag, RuntimeError> {
        if !self.info.action_effects.contains(&action) {
            return Err(self.undeclared(alloc::format!(
                "action `{}`",
                self.view.topology.action(action).name
            )));
        }
        let mut tag = self.tag.delayed(delay);
        while self.view.queue.occupied(tag, EventTarget::Action(action))
            || self
                .schedules
                .iter()
                .any(|(a, t, _)| *a == action && *t == tag)
        {
            tag = tag.next_microstep();
        }
        self.schedules.push((action, tag, value.into()));
        Ok(tag)
    }

    /// Current physical time as observed by this reaction.
    pub fn physical_time(&self) -> u64 {
        match self.clock {
            DispatchClock::Simulated { dispatch, consumed } => dispatch + consumed,
            DispatchClock::Live(now) => now(),
        }
    }

    /// Accounts simulated compute time. Has no effect under a live clock.
    pub fn consume(&mut self, work: Duration) {
        if let DispatchClock::Simulated { consumed, .. } = &mut self.clock {
            *consumed += work.as_nanos();
        }
    }

    fn undeclared(&self, item: String) -> RuntimeError {
        RuntimeError::UndeclaredEffect {
            reaction: self.view.topology.reaction_name(self.reaction),
            item,
        }
    }
}

/// One reaction invocation prepared for an [`Executor`].
pub struct Job<'a> {
    state: Box<dyn Any + Send>,
    code: ReactionCode,
    ctx: ReactionCtx<'a>,
    fault: Option<String>,
}

impl Job<'_> {
    pub fn reaction(&self) -> ReactionId {
        self.ctx.reaction
    }

    /// Runs the body, or the deadline handler if the deadline was missed.
    pub fn run(&mut self) {
        let Job {
            state,
            code,
            ctx,
            fault,
            ..
        } = self;
        let f = if ctx.deadline_missed {
            code.deadline_handler
                .as_mut()
                .expect("missed deadline implies a handler")
        } else {
            &mut code.body
        };
        #[cfg(feature = "std")]
        {
            let outcome =
                std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(state.as_mut(), ctx)));
            if let Err(panic) = outcome {
                *fault = Some(panic_message(panic.as_ref()));
            }
        }
        #[cfg(not(feature = "std"))]
        {
            let _ = fault;
            f(state.as_mut(), ctx);
        }
    }
}

#[cfg(feature = "std")]
fn panic_message(panic: &(dyn Any + Send)) -> String {
    use alloc::string::ToString;
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Runs the independent jobs of one level.
pub trait Executor: Sync {
    fn execute(&self, jobs: &mut [Job<'_>]);
}

/// Runs jobs one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Inline;

impl Executor for Inline {
    fn execute(&self, jobs: &mut [Job<'_>]) {
        jobs.iter_mut().for_each(Job::run);
    }
}

/// Outcome of processing one tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepReport {
    pub tag: Tag,
    pub records: Vec<TraceRecord>,
    /// Physical time when the last reaction finished.
    pub physical_end: u64,
}

struct Finished {
    reaction: ReactionId,
    deadline_missed: bool,
    writes: Vec<(PortId, Payload)>,
    schedules: Vec<(ActionId, Tag, Payload)>,
    end: u64,
}

pub struct Scheduler {
    topology: Topology,
    apg: Apg,
    states: Vec<Option<Box<dyn Any + Send>>>,
    code: Vec<Option<ReactionCode>>,
    queue: EventQueue,
    physical: PhysicalTagAllocator,
    last_processed: Option<Tag>,
    events_processed: u64,
    port_dependents: Vec<Vec<ReactionId>>,
    action_dependents: Vec<Vec<ReactionId>>,
    startup_dependents: Vec<ReactionId>,
    downstream: Vec<Vec<(PortId, Option<Duration>)>>,
    port_values: Vec<Option<Payload>>,
    action_values: Vec<Option<Payload>>,
    touched_ports: Vec<PortId>,
    touched_actions: Vec<ActionId>,
}

impl Scheduler {
    /// Prepares a graph for execution. Reactions triggered by startup are
    /// scheduled at [`Tag::ZERO`].
    pub fn new(graph: ReactorGraph) -> Self {
        let ReactorGraph {
            topology,
            apg,
            states,
            code,
        } = graph;

        let mut port_dependents = vec![Vec::new(); topology.ports.len()];
        let mut action_dependents = vec![Vec::new(); topology.actions.len()];
        let mut startup_dependents = Vec::new();
        for (i, reaction) in topology.reactions.iter().enumerate() {
            let id = ReactionId(i as u32);
            for trigger in &reaction.triggers {
                match *trigger {
                    Trigger::Startup => startup_dependents.push(id),
                    Trigger::Port(p) => port_dependents[p.index()].push(id),
                    Trigger::Action(a) => action_dependents[a.index()].push(id),
                }
            }
        }
        let mut downstream = vec![Vec::new(); topology.ports.len()];
        for conn in &topology.connections {
            downstream[conn.from.index()].push((conn.to, conn.delay));
        }

        let mut queue = EventQueue::default();
        if !startup_dependents.is_empty() {
            queue.push(Event {
                tag: Tag::ZERO,
                target: EventTarget::Startup,
                payload: Payload::empty(),
            });
        }

        Scheduler {
            port_values: vec![None; topology.ports.len()],
            action_values: vec![None; topology.actions.len()],
            topology,
            apg,
            states: states.into_iter().map(Some).collect(),
            code: code.into_iter().map(Some).collect(),
            queue,
            physical: PhysicalTagAllocator::default(),
            last_processed: None,
            events_processed: 0,
            port_dependents,
            action_dependents,
            startup_dependents,
            downstream,
            touched_ports: Vec::new(),
            touched_actions: Vec::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn apg(&self) -> &Apg {
        &self.apg
    }

    pub fn next_tag(&self) -> Option<Tag> {
        self.queue.next_tag()
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn last_processed(&self) -> Option<Tag> {
        self.last_processed
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn state<S: 'static>(&self, key: ReactorKey<S>) -> &S {
        self.states[key.id.index()]
            .as_ref()
            .and_then(|s| s.downcast_ref())
            .expect("reactor state type matches its key")
    }

    pub fn state_mut<S: 'static>(&mut self, key: ReactorKey<S>) -> &mut S {
        self.states[key.id.index()]
            .as_mut()
            .and_then(|s| s.downcast_mut())
            .expect("reactor state type matches its key")
    }

    /// Inserts an already-tagged event, rejecting tags that were passed.
    pub fn enqueue(&mut self, event: Event) -> Result<(), StaleTag> {
        if let Some(current) = self.last_processed {
            if event.tag <= current {
                return Err(StaleTag {
                    tag: event.tag,
                    current,
                });
            }
        }
        self.queue.push(event);
        Ok(())
    }

    fn check_physical(&self, action: ActionId) -> Result<(), RuntimeError> {
        if self.topology.action(action).kind == ActionKind::Physical {
            Ok(())
        } else {
            Err(RuntimeError::NotPhysical(action))
        }
    }

    /// Schedules a physical action observed at `physical_now`.
    pub fn schedule_physical(
        &mut self,
        action: ActionId,
        physical_now: u64,
        min_delay: Duration,
        value: impl Into<Payload>,
    ) -> Result<Tag, RuntimeError> {
        self.check_physical(action)?;
        let tag = self
            .physical
            .allocate(action, Tag::at(physical_now + min_delay.as_nanos()));
        self.queue.push(Event {
            tag,
            target: EventTarget::Action(action),
            payload: value.into(),
        });
        Ok(tag)
    }

    /// Schedules a physical action at exactly `tag`.
    pub fn schedule_physical_at(
        &mut self,
        action: ActionId,
        tag: Tag,
        value: impl Into<Payload>,
    ) -> Result<Tag, RuntimeError> {
        self.check_physical(action)?;
        let tag = self.physical.allocate_exact(action, tag)?;
        self.queue.push(Event {
            tag,
            target: EventTarget::Action(action),
            payload: value.into(),
        });
        Ok(tag)
    }

    /// Processes every event at the smallest pending tag. Returns `None` when
    /// the queue is empty.
    pub fn step(
        &mut self,
        time: PhysicalTime<'_>,
        executor: &dyn Executor,
    ) -> Result<Option<StepReport>, RuntimeError> {
        let Some((tag, events)) = self.queue.pop_next() else {
            return Ok(None);
        };

        let mut pending: BTreeSet<(u32, ReactionId)> = BTreeSet::new();
        let mut startup = false;
        for (target, payload) in events {
            self.events_processed += 1;
            let dependents = match target {
                EventTarget::Startup => {
                    startup = true;
                    &self.startup_dependents
                }
                EventTarget::Port(p) => {
                    self.port_values[p.index()] = Some(payload);
                    self.touched_ports.push(p);
                    &self.port_dependents[p.index()]
                }
                EventTarget::Action(a) => {
                    self.action_values[a.index()] = Some(payload);
                    self.touched_actions.push(a);
                    &self.action_dependents[a.index()]
                }
            };
            pending.extend(dependents.iter().map(|&r| (self.apg.level(r), r)));
        }

        let mut now = match time {
            PhysicalTime::Simulated(t) => t,
            PhysicalTime::Live(clock) => clock(),
        };
        let mut records = Vec::new();
        let mut failure = None;

        while let Some(&(level, _)) = pending.first() {
            let mut batch = Vec::new();
            while let Some(&(l, r)) = pending.first() {
                if l != level {
                    break;
                }
                pending.pop_first();
                batch.push(r);
            }

            let finished = {
                let view = TagView {
                    topology: &self.topology,
                    ports: &self.port_values,
                    actions: &self.action_values,
                    startup,
                    queue: &self.queue,
                };
                let mut jobs = Vec::with_capacity(batch.len());
                for &r in &batch {
                    let info = self.topology.reaction(r);
                    let (clock, dispatch) = match time {
                        PhysicalTime::Simulated(_) => (
                            DispatchClock::Simulated {
                                dispatch: now,
                                consumed: 0,
                            },
                            now,
                        ),
                        PhysicalTime::Live(c) => (DispatchClock::Live(c), c()),
                    };
                    let deadline_missed = info
                        .deadline
                        .is_some_and(|bound| check_deadline(tag, bound, dispatch));
                    jobs.push(Job {
                        state: self.states[info.reactor.index()]
                            .take()
                            .expect("reactions of one reactor never share a level"),
                        code: self.code[r.index()].take().expect("reaction code present"),
                        ctx: ReactionCtx {
                            tag,
                            reaction: r,
                            info,
                            view: &view,
                            clock,
                            deadline_missed,
                            writes: Vec::new(),
                            schedules: Vec::new(),
                        },
                        fault: None,
                    });
                }

                executor.execute(&mut jobs);

                let mut finished = Vec::with_capacity(jobs.len());
                for job in jobs {
                    let Job {
                        state,
                        code,
                        ctx,
                        fault,
                    } = job;
                    let reactor = ctx.info.reactor;
                    self.states[reactor.index()] = Some(state);
                    self.code[ctx.reaction.index()] = Some(code);
                    if let (Some(message), None) = (fault, &failure) {
                        failure = Some(RuntimeError::ExecutionFault {
                            tag,
                            reaction: self.topology.reaction_name(ctx.reaction),
                            message,
                        });
                    }
                    finished.push(Finished {
                        reaction: ctx.reaction,
                        deadline_missed: ctx.deadline_missed,
                        end: ctx.physical_time(),
                        writes: ctx.writes,
                        schedules: ctx.schedules,
                    });
                }
                finished
            };

            if failure.is_some() {
                break;
            }

            let mut level_end = now;
            for done in finished {
                let mut digests = Vec::with_capacity(done.writes.len());
                for (port, value) in done.writes {
                    digests.push((port, value.digest()));
                    for &(to, delay) in &self.downstream[port.index()] {
                        match delay {
                            None => {
                                self.port_values[to.index()] = Some(value.clone());
                                self.touched_ports.push(to);
                                for &r in &self.port_dependents[to.index()] {
                                    debug_assert!(self.apg.level(r) > level);
                                    pending.insert((self.apg.level(r), r));
                                }
                            }
                            Some(d) => self.queue.push(Event {
                                tag: tag.delayed(d),
                                target: EventTarget::Port(to),
                                payload: value.clone(),
                            }),
                        }
                    }
                    self.port_values[port.index()] = Some(value);
                    self.touched_ports.push(port);
                }
                for (action, at, value) in done.schedules {
                    self.queue.push(Event {
                        tag: at,
                        target: EventTarget::Action(action),
                        payload: value,
                    });
                }
                records.push(TraceRecord {
                    tag,
                    reaction: done.reaction,
                    deadline_handler: done.deadline_missed,
                    writes: digests,
                });
                level_end = level_end.max(done.end);
            }
            now = match time {
                PhysicalTime::Simulated(_) => level_end,
                PhysicalTime::Live(clock) => clock(),
            };
        }

        for p in self.touched_ports.drain(..) {
            self.port_values[p.index()] = None;
        }
        for a in self.touched_actions.drain(..) {
            self.action_values[a.index()] = None;
        }
        self.last_processed = Some(tag);
        self.physical.advance(tag);

        match failure {
            Some(err) => Err(err),
            None => Ok(Some(StepReport {
                tag,
                records,
                physical_end: now,
            })),
        }
    }

    /// Runs to completion on a simulated clock that jumps to each tag's time
    /// and advances by declared compute time.
    pub fn run_simulated(
        &mut self,
        stop: StopCondition,
        executor: &dyn Executor,
    ) -> Result<Vec<TraceRecord>, RuntimeError> {
        let mut clock = 0u64;
        let mut trace = Vec::new();
        while let Some(next) = self.next_tag() {
            if stop.reached(next, self.events_processed) {
                break;
            }
            clock = clock.max(next.time);
            if let Some(report) = self.step(PhysicalTime::Simulated(clock), executor)? {
                clock = report.physical_end;
                trace.extend(report.records);
            }
        }
        Ok(trace)
    }
}

impl fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheduler")
            .field("next_tag", &self.next_tag())
            .field("last_processed", &self.last_processed)
            .field("pending_events", &self.pending_events())
            .finish_non_exhaustive()
    }
}
