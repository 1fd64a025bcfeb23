//! Detached transactions: invocations registered inside a parent
//! transaction that run later as independent roots, triggered by the
//! parent's outcome, with a per-spec delivery contract.

use crate::addr::ActorAddress;
use crate::error::{AbortReason, EngineError};
use crate::security::Frame;
use crate::value::Value;
use parking_lot::{Condvar, Mutex};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetachTrigger {
    OnCommit,
    OnAbort,
    OnAny,
}

impl DetachTrigger {
    pub fn fires_on(&self, committed: bool) -> bool {
        match self {
            DetachTrigger::OnCommit => committed,
            DetachTrigger::OnAbort => !committed,
            DetachTrigger::OnAny => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    ExactlyOnce,
    AtMostOnce,
    AtLeastOnce,
}

/// A detached invocation registered by a transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachedSpec {
    pub id: u64,
    pub target: ActorAddress,
    pub method: String,
    pub args: Vec<Value>,
    pub trigger: DetachTrigger,
    pub delivery: Delivery,
    /// Frame that issued the detach; access control for the detached
    /// invocation is checked against it.
    pub origin: Frame,
}

struct Entry {
    ready_at: Instant,
    seq: u64,
    spec: DetachedSpec,
    attempts: u32,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ready_at
            .cmp(&other.ready_at)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Outcome of one execution attempt, fed back by the engine.
pub(crate) enum AttemptOutcome {
    Committed,
    Aborted(AbortReason),
    /// Setup failures that no retry can fix (unknown actor/method, denial).
    Permanent(EngineError),
}

pub(crate) struct DetachedQueue {
    heap: Mutex<BinaryHeap<Reverse<Entry>>>,
    cv: Condvar,
    executed: Mutex<HashSet<u64>>,
    /// Specs whose delivery contract ran out of retries (or failed
    /// permanently), with the final failure class.
    given_up: Mutex<Vec<(u64, AbortReason)>>,
    inflight: AtomicUsize,
    stop: AtomicBool,
    seq: Mutex<u64>,
    pub retry_limit: u32,
    pub backoff_ms: u64,
}

impl DetachedQueue {
    pub fn new(retry_limit: u32, backoff_ms: u64) -> DetachedQueue {
        DetachedQueue {
            heap: Mutex::new(BinaryHeap::new()),
            cv: Condvar::new(),
            executed: Mutex::new(HashSet::new()),
            given_up: Mutex::new(Vec::new()),
            inflight: AtomicUsize::new(0),
            stop: AtomicBool::new(false),
            seq: Mutex::new(0),
            retry_limit,
            backoff_ms,
        }
    }

    pub fn schedule(&self, spec: DetachedSpec) {
        self.schedule_at(spec, Instant::now(), 0);
    }

    fn schedule_at(&self, spec: DetachedSpec, ready_at: Instant, attempts: u32) {
        let mut heap = self.heap.lock();
        let mut seq = self.seq.lock();
        *seq += 1;
        heap.push(Reverse(Entry {
            ready_at,
            seq: *seq,
            spec,
            attempts,
        }));
        drop(seq);
        self.cv.notify_all();
    }

    pub fn given_up(&self) -> Vec<(u64, AbortReason)> {
        self.given_up.lock().clone()
    }

    pub fn mark_executed(&self, spec_id: u64) {
        self.executed.lock().insert(spec_id);
    }

    pub fn already_executed(&self, spec_id: u64) -> bool {
        self.executed.lock().contains(&spec_id)
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.cv.notify_all();
    }

    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn pending(&self) -> usize {
        self.heap.lock().len() + self.inflight.load(Ordering::SeqCst)
    }

    /// Pop the next entry whose ready time has passed; `None` immediately
    /// if nothing is eligible right now.
    fn try_pop_ready(&self) -> Option<(DetachedSpec, u32)> {
        let mut heap = self.heap.lock();
        if let Some(Reverse(top)) = heap.peek() {
            if top.ready_at <= Instant::now() {
                let Reverse(e) = heap.pop().unwrap();
                self.inflight.fetch_add(1, Ordering::SeqCst);
                return Some((e.spec, e.attempts));
            }
        }
        None
    }

    fn finish(&self) {
        self.inflight.fetch_sub(1, Ordering::SeqCst);
        self.cv.notify_all();
    }

    /// Drain every eligible entry with `run`, handling delivery contracts.
    /// Returns the number of executions performed (attempts that ran a
    /// transaction, committed or not).
    pub fn process<F>(&self, mut run: F) -> usize
    where
        F: FnMut(&DetachedSpec) -> AttemptOutcome,
    {
        let mut executed = 0usize;
        while let Some((spec, attempts)) = self.try_pop_ready() {
            executed += self.run_one(spec, attempts, &mut run);
            self.finish();
        }
        executed
    }

    fn run_one<F>(&self, spec: DetachedSpec, attempts: u32, run: &mut F) -> usize
    where
        F: FnMut(&DetachedSpec) -> AttemptOutcome,
    {
        if spec.delivery == Delivery::ExactlyOnce && self.already_executed(spec.id) {
            return 0;
        }
        let outcome = run(&spec);
        match outcome {
            AttemptOutcome::Committed => {
                if spec.delivery == Delivery::ExactlyOnce {
                    self.mark_executed(spec.id);
                }
            }
            AttemptOutcome::Permanent(e) => {
                self.given_up.lock().push((spec.id, e.abort_class()));
            }
            AttemptOutcome::Aborted(reason) => match spec.delivery {
                Delivery::AtMostOnce => {}
                Delivery::AtLeastOnce | Delivery::ExactlyOnce => {
                    if attempts + 1 <= self.retry_limit {
                        let backoff =
                            Duration::from_millis(self.backoff_ms << attempts.min(16));
                        self.schedule_at(spec, Instant::now() + backoff, attempts + 1);
                    } else {
                        self.given_up.lock().push((spec.id, reason));
                    }
                }
            },
        }
        1
    }

    /// Block until the queue is empty and nothing is in flight (retries
    /// included), processing entries inline if no worker picks them up.
    pub fn drain<F>(&self, mut run: F)
    where
        F: FnMut(&DetachedSpec) -> AttemptOutcome,
    {
        loop {
            self.process(&mut run);
            if self.pending() == 0 {
                return;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::addr;

    fn spec(id: u64, delivery: Delivery) -> DetachedSpec {
        DetachedSpec {
            id,
            target: addr("Customer", "1"),
            method: "add_store_visit".into(),
            args: vec![],
            trigger: DetachTrigger::OnCommit,
            delivery,
            origin: Frame::External,
        }
    }

    #[test]
    fn empty_queue_processes_zero() {
        let q = DetachedQueue::new(10, 1);
        assert_eq!(q.process(|_| AttemptOutcome::Committed), 0);
    }

    #[test]
    fn at_least_once_retries_until_commit() {
        let q = DetachedQueue::new(10, 0);
        q.schedule(spec(1, Delivery::AtLeastOnce));
        let mut calls = 0;
        q.drain(|_| {
            calls += 1;
            if calls == 1 {
                AttemptOutcome::Aborted(AbortReason::ReadValidation)
            } else {
                AttemptOutcome::Committed
            }
        });
        assert_eq!(calls, 2);
    }

    #[test]
    fn at_most_once_never_retries() {
        let q = DetachedQueue::new(10, 0);
        q.schedule(spec(1, Delivery::AtMostOnce));
        let mut calls = 0;
        q.drain(|_| {
            calls += 1;
            AttemptOutcome::Aborted(AbortReason::ReadValidation)
        });
        assert_eq!(calls, 1);
    }

    #[test]
    fn exactly_once_dedups_by_id() {
        let q = DetachedQueue::new(10, 0);
        q.schedule(spec(7, Delivery::ExactlyOnce));
        q.schedule(spec(7, Delivery::ExactlyOnce));
        let mut calls = 0;
        q.drain(|_| {
            calls += 1;
            AttemptOutcome::Committed
        });
        assert_eq!(calls, 1);
    }

    #[test]
    fn retry_limit_bounds_attempts() {
        let q = DetachedQueue::new(3, 0);
        q.schedule(spec(1, Delivery::AtLeastOnce));
        let mut calls = 0;
        q.drain(|_| {
            calls += 1;
            AttemptOutcome::Aborted(AbortReason::ReadValidation)
        });
        assert_eq!(calls, 4, "initial attempt plus three retries");
    }
}
