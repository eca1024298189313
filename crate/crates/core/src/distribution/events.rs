//! Per-node event log.

use std::fmt;

use crate::ids::{KeyFrameId, MapId, Role};
use crate::kernel::GlobalKind;
use crate::sim::{to_ms, SimTime};

use super::policy::DistributionDecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCause {
    /// Tracking was lost and a fresh map started.
    NewMap,
    /// Tracking was lost while the map waited for its initial optimization and later recovered.
    Resumed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Joined(Role),
    Rejoined(Role),
    Departed(Role),
    Decision(DistributionDecision),
    MapInitialized(MapId),
    KeyFrameCreated(KeyFrameId),
    TrackingLost,
    Failure(FailureCause),
    /// Local bundle adjustment centered on a keyframe.
    LocalAdjust(KeyFrameId),
    /// A keyframe handed to a departed peer is processed again locally.
    Reprocessed(KeyFrameId),
    GlobalStarted {
        kind: GlobalKind,
        epoch: u64,
        writer: Role,
    },
    Paused {
        epoch: u64,
    },
    Resumed {
        epoch: u64,
    },
    GlobalAbandoned {
        epoch: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub at: SimTime,
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ", to_ms(self.at) / 1000.0)?;
        match &self.kind {
            EventKind::Joined(r) => write!(f, "joined {r}"),
            EventKind::Rejoined(r) => write!(f, "rejoined {r}"),
            EventKind::Departed(r) => write!(f, "departed {r}"),
            EventKind::Decision(d) => write!(f, "decision {d}"),
            EventKind::MapInitialized(m) => write!(f, "map {m}"),
            EventKind::KeyFrameCreated(k) => write!(f, "keyframe {k}"),
            EventKind::TrackingLost => write!(f, "lost"),
            EventKind::Failure(c) => write!(f, "failure {c:?}"),
            EventKind::LocalAdjust(k) => write!(f, "lba {k}"),
            EventKind::Reprocessed(k) => write!(f, "reprocess {k}"),
            EventKind::GlobalStarted { kind, epoch, writer } => {
                write!(f, "global {} epoch {epoch} by {writer}", kind.name())
            }
            EventKind::Paused { epoch } => write!(f, "paused {epoch}"),
            EventKind::Resumed { epoch } => write!(f, "resumed {epoch}"),
            EventKind::GlobalAbandoned { epoch } => write!(f, "abandoned {epoch}"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EventLog(Vec<Event>);

impl EventLog {
    pub fn push(&mut self, at: SimTime, kind: EventKind) {
        self.0.push(Event { at, kind });
    }

    pub fn events(&self) -> &[Event] {
        &self.0
    }

    pub fn failures(&self) -> usize {
        self.0.iter().filter(|e| matches!(e.kind, EventKind::Failure(_))).count()
    }

    pub fn global_kinds(&self) -> Vec<GlobalKind> {
        self.0
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::GlobalStarted { kind, .. } => Some(kind),
                _ => None,
            })
            .collect()
    }

    /// `[pause, resume]` intervals; an interval still open ends at `u64::MAX`.
    pub fn pause_windows(&self) -> Vec<(SimTime, SimTime)> {
        let mut out = Vec::new();
        let mut open = None;
        for e in &self.0 {
            match e.kind {
                EventKind::Paused { .. } if open.is_none() => open = Some(e.at),
                EventKind::Resumed { .. } | EventKind::GlobalAbandoned { .. } => {
                    if let Some(s) = open.take() {
                        out.push((s, e.at));
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            out.push((s, SimTime::MAX));
        }
        out
    }

    pub fn keyframe_times(&self) -> Vec<SimTime> {
        self.0.iter().filter(|e| matches!(e.kind, EventKind::KeyFrameCreated(_))).map(|e| e.at).collect()
    }
}
