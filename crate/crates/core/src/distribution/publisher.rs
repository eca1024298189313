//! Timed emission of local map batches.

use std::collections::VecDeque;

use crate::sim::SimTime;
use crate::state::MapBatch;

/// FIFO of local batches released at most one per `spacing`. The first batch
/// of a fresh bundle adjustment leaves at once when nothing is queued.
#[derive(Debug, Clone)]
pub struct LocalPublisher {
    queue: VecDeque<MapBatch>,
    spacing: SimTime,
    last_emit: Option<SimTime>,
    immediate: bool,
    armed: bool,
}

/// What the caller does after [`LocalPublisher::poll`].
#[derive(Debug, Clone, PartialEq)]
pub struct Poll {
    pub emit: Option<MapBatch>,
    /// Arm a wake-up at this time.
    pub wake_at: Option<SimTime>,
}

impl LocalPublisher {
    pub fn new(spacing: SimTime) -> Self {
        Self { queue: VecDeque::new(), spacing, last_emit: None, immediate: false, armed: false }
    }

    pub fn push(&mut self, batches: Vec<MapBatch>, fresh: bool) {
        if fresh && self.queue.is_empty() {
            self.immediate = true;
        }
        self.queue.extend(batches);
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn last_emit(&self) -> Option<SimTime> {
        self.last_emit
    }

    /// The armed wake-up fired.
    pub fn woke(&mut self) {
        self.armed = false;
    }

    /// Drops everything queued (the node crashed).
    pub fn clear(&mut self) {
        self.queue.clear();
        self.armed = false;
    }

    pub fn poll(&mut self, now: SimTime) -> Poll {
        if self.armed || self.queue.is_empty() {
            return Poll { emit: None, wake_at: None };
        }
        let due = match self.last_emit {
            Some(last) if !self.immediate => last + self.spacing,
            _ => now,
        };
        if due > now {
            self.armed = true;
            return Poll { emit: None, wake_at: Some(due) };
        }
        self.immediate = false;
        self.last_emit = Some(now);
        let emit = self.queue.pop_front();
        let wake_at = (!self.queue.is_empty()).then(|| {
            self.armed = true;
            now + self.spacing
        });
        Poll { emit, wake_at }
    }
}
