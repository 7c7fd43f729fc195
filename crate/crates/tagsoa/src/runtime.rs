//! Clocks, thread pools and a thread-safe front end to the scheduler.
//!
//! A [`Runtime`] wraps a [`Scheduler`] together with a [`Clock`]. Code
//! outside the scheduler, such as middleware callbacks, inserts events
//! through a cloneable [`RuntimeHandle`]; insertions land in an inbox that
//! the runtime drains before it picks the next tag.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Instant;

use rayon::prelude::*;
use tagsoa_core::{ActionId, Inline};
use tagsoa_core::{
    Duration, Event, EventTarget, Executor, Job, Payload, PhysicalTagAllocator, PhysicalTime,
    ReactorGraph, ReactorKey, RuntimeError, Scheduler, StepReport, StopCondition, Tag, TraceRecord,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClockMode {
    Simulated,
    Real,
}

/// A platform clock in nanoseconds.
///
/// Simulated clocks only move when [`Clock::set`] is called. Real clocks
/// count from their creation. Both add a fixed offset that models the
/// platform's synchronization error.
#[derive(Clone, Debug)]
pub struct Clock {
    source: Source,
    offset: i64,
}

#[derive(Clone, Debug)]
enum Source {
    Simulated(Arc<AtomicU64>),
    Real(Instant),
}

impl Clock {
    pub fn simulated() -> Self {
        Clock {
            source: Source::Simulated(Arc::new(AtomicU64::new(0))),
            offset: 0,
        }
    }

    pub fn real() -> Self {
        Clock {
            source: Source::Real(Instant::now()),
            offset: 0,
        }
    }

    pub fn with_offset(mut self, offset: i64) -> Self {
        self.offset = offset;
        self
    }

    pub fn mode(&self) -> ClockMode {
        match self.source {
            Source::Simulated(_) => ClockMode::Simulated,
            Source::Real(_) => ClockMode::Real,
        }
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// The reference time before the offset is applied.
    pub fn reference(&self) -> u64 {
        match &self.source {
            Source::Simulated(t) => t.load(Ordering::Acquire),
            Source::Real(epoch) => epoch.elapsed().as_nanos() as u64,
        }
    }

    pub fn now(&self) -> u64 {
        self.reference().saturating_add_signed(self.offset)
    }

    /// Moves a simulated clock's reference time. Time never goes back.
    pub fn set(&self, reference: u64) {
        match &self.source {
            Source::Simulated(t) => {
                t.fetch_max(reference, Ordering::AcqRel);
            }
            Source::Real(_) => panic!("a real clock cannot be set"),
        }
    }
}

/// Runs the jobs of one level on a dedicated rayon pool.
pub struct PoolExecutor {
    pool: rayon::ThreadPool,
}

impl PoolExecutor {
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .thread_name(|i| format!("reactor-{i}"))
            .build()
            .expect("thread pool");
        PoolExecutor { pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for PoolExecutor {
    fn execute(&self, jobs: &mut [Job<'_>]) {
        if jobs.len() < 2 || self.pool.current_num_threads() == 1 {
            jobs.iter_mut().for_each(Job::run);
        } else {
            self.pool.install(|| jobs.par_iter_mut().for_each(Job::run));
        }
    }
}

/// Inline for one worker, a pool otherwise.
pub fn executor(workers: usize) -> Arc<dyn Executor + Send> {
    if workers <= 1 {
        Arc::new(Inline)
    } else {
        Arc::new(PoolExecutor::new(workers))
    }
}

#[derive(Default)]
struct Inbox {
    allocator: PhysicalTagAllocator,
    events: Vec<Event>,
    stopped: bool,
}

struct Shared {
    inbox: Mutex<Inbox>,
    wake: Condvar,
}

/// Inserts events into a runtime from any thread.
#[derive(Clone)]
pub struct RuntimeHandle {
    shared: Arc<Shared>,
    clock: Clock,
}

impl RuntimeHandle {
    /// A handle not yet attached to a runtime. Insertions are buffered until
    /// [`Runtime::with_handle`] picks them up.
    pub fn new(clock: Clock) -> Self {
        RuntimeHandle {
            shared: Arc::new(Shared {
                inbox: Mutex::new(Inbox::default()),
                wake: Condvar::new(),
            }),
            clock,
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn physical_time(&self) -> u64 {
        self.clock.now()
    }

    fn inbox(&self) -> MutexGuard<'_, Inbox> {
        self.shared.inbox.lock().expect("inbox lock")
    }

    fn open_inbox(&self) -> Result<MutexGuard<'_, Inbox>, RuntimeError> {
        let inbox = self.inbox();
        if inbox.stopped {
            Err(RuntimeError::SchedulerStopped)
        } else {
            Ok(inbox)
        }
    }

    fn push(&self, mut inbox: MutexGuard<'_, Inbox>, action: ActionId, tag: Tag, value: Payload) {
        inbox.events.push(Event {
            tag,
            target: EventTarget::Action(action),
            payload: value,
        });
        drop(inbox);
        self.shared.wake.notify_all();
    }

    /// Schedules a physical action at the current physical time plus
    /// `min_delay`.
    pub fn schedule_physical(
        &self,
        action: ActionId,
        min_delay: Duration,
        value: impl Into<Payload>,
    ) -> Result<Tag, RuntimeError> {
        let mut inbox = self.open_inbox()?;
        let observed = Tag::at(self.clock.now() + min_delay.as_nanos());
        let tag = inbox.allocator.allocate(action, observed);
        self.push(inbox, action, tag, value.into());
        Ok(tag)
    }

    /// Schedules a physical action at exactly `tag`, failing if the runtime
    /// has already processed that tag.
    pub fn insert_at(
        &self,
        action: ActionId,
        tag: Tag,
        value: impl Into<Payload>,
    ) -> Result<Tag, RuntimeError> {
        let mut inbox = self.open_inbox()?;
        let tag = inbox.allocator.allocate_exact(action, tag)?;
        self.push(inbox, action, tag, value.into());
        Ok(tag)
    }

    /// The last tag the runtime started processing.
    pub fn current_tag(&self) -> Option<Tag> {
        self.inbox().allocator.floor()
    }

    /// Terminates the runtime. Later insertions fail with
    /// [`RuntimeError::SchedulerStopped`].
    pub fn stop(&self) {
        self.inbox().stopped = true;
        self.shared.wake.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        self.inbox().stopped
    }
}

fn absorb(scheduler: &mut Scheduler, inbox: &mut Inbox) {
    for event in inbox.events.drain(..) {
        scheduler
            .enqueue(event)
            .expect("allocator never issues passed tags");
    }
}

/// A scheduler bound to a clock and an inbox.
pub struct Runtime {
    scheduler: Scheduler,
    handle: RuntimeHandle,
}

impl Runtime {
    pub fn new(graph: ReactorGraph, clock: Clock) -> Self {
        Self::with_handle(graph, RuntimeHandle::new(clock))
    }

    pub fn with_handle(graph: ReactorGraph, handle: RuntimeHandle) -> Self {
        Runtime {
            scheduler: Scheduler::new(graph),
            handle,
        }
    }

    pub fn handle(&self) -> RuntimeHandle {
        self.handle.clone()
    }

    pub fn clock(&self) -> &Clock {
        &self.handle.clock
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn state<S: 'static>(&self, key: ReactorKey<S>) -> &S {
        self.scheduler.state(key)
    }

    /// Moves pending insertions into the event queue and returns the next
    /// tag to process.
    pub fn next_tag(&mut self) -> Option<Tag> {
        let mut inbox = self.handle.inbox();
        absorb(&mut self.scheduler, &mut inbox);
        self.scheduler.next_tag()
    }

    /// Processes the next tag, starting at simulated local time `start`.
    pub fn step_at(
        &mut self,
        start: u64,
        executor: &dyn Executor,
    ) -> Result<Option<StepReport>, RuntimeError> {
        if !self.claim_next()? {
            return Ok(None);
        }
        self.scheduler
            .step(PhysicalTime::Simulated(start), executor)
    }

    /// Drains the inbox and fixes the next tag so that concurrent insertions
    /// land strictly after it.
    fn claim_next(&mut self) -> Result<bool, RuntimeError> {
        let mut inbox = self.handle.inbox();
        if inbox.stopped {
            return Err(RuntimeError::SchedulerStopped);
        }
        absorb(&mut self.scheduler, &mut inbox);
        match self.scheduler.next_tag() {
            Some(tag) => {
                inbox.allocator.advance(tag);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Runs until the stop condition is met.
    ///
    /// Under a simulated clock time jumps to each tag and the run ends when
    /// no events remain. Under a real clock the runtime waits for physical
    /// time to reach each tag and for new insertions while idle; it ends
    /// when stopped through a handle or when the stop condition is met.
    pub fn run(
        &mut self,
        stop: StopCondition,
        executor: &dyn Executor,
    ) -> Result<Vec<TraceRecord>, RuntimeError> {
        let mut trace = Vec::new();
        match self.handle.clock.mode() {
            ClockMode::Simulated => {
                let mut busy_until = self.clock().now();
                while let Some(next) = self.next_tag() {
                    if stop.reached(next, self.scheduler.events_processed()) {
                        break;
                    }
                    let start = busy_until.max(next.time);
                    self.clock()
                        .set(start.saturating_add_signed(-self.clock().offset()));
                    match self.step_at(start, executor)? {
                        Some(report) => {
                            busy_until = report.physical_end;
                            trace.extend(report.records);
                        }
                        None => break,
                    }
                }
            }
            ClockMode::Real => loop {
                {
                    let mut inbox = self.handle.inbox();
                    loop {
                        if inbox.stopped {
                            return Ok(trace);
                        }
                        absorb(&mut self.scheduler, &mut inbox);
                        let now = self.handle.clock.now();
                        match self.scheduler.next_tag() {
                            Some(tag) if stop.reached(tag, self.scheduler.events_processed()) => {
                                return Ok(trace);
                            }
                            Some(tag) if tag.time <= now => break,
                            Some(tag) => {
                                let wait = std::time::Duration::from_nanos(tag.time - now);
                                inbox = self
                                    .handle
                                    .shared
                                    .wake
                                    .wait_timeout(inbox, wait)
                                    .expect("inbox lock")
                                    .0;
                            }
                            None => {
                                if stop.until.is_some_and(|u| now > u.time) {
                                    return Ok(trace);
                                }
                                let wait = std::time::Duration::from_millis(50);
                                inbox = self
                                    .handle
                                    .shared
                                    .wake
                                    .wait_timeout(inbox, wait)
                                    .expect("inbox lock")
                                    .0;
                            }
                        }
                    }
                }
                let clock = self.handle.clock.clone();
                let now = move || clock.now();
                if !self.claim_next()? {
                    continue;
                }
                if let Some(report) = self.scheduler.step(PhysicalTime::Live(&now), executor)? {
                    trace.extend(report.records);
                }
            },
        }
        Ok(trace)
    }
}
