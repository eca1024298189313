//! Per-node bandwidth and message-frequency accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::comm::PayloadKind;
use crate::ids::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::In => "in",
            Direction::Out => "out",
        }
    }
}

fn kind_name(k: PayloadKind) -> &'static str {
    match k {
        PayloadKind::NewKeyFrame => "new_keyframe",
        PayloadKind::KeyFrameUpdate => "keyframe_update",
        PayloadKind::MapBatch => "map_batch",
        PayloadKind::GlobalUpdateStart => "global_update_start",
        PayloadKind::Discovery => "discovery",
        PayloadKind::Heartbeat => "heartbeat",
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub bytes: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrafficAccount {
    counters: BTreeMap<(Role, Direction, u8), (PayloadKind, Counter)>,
    pub duration_s: f64,
}

impl TrafficAccount {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn account(&mut self, bytes: usize, node: Role, dir: Direction, kind: PayloadKind) {
        let (_, c) = self.counters.entry((node, dir, kind.code())).or_insert((kind, Counter::default()));
        c.bytes += bytes as u64;
        c.count += 1;
    }

    pub fn counter(&self, node: Role, dir: Direction, kind: PayloadKind) -> Counter {
        self.counters.get(&(node, dir, kind.code())).map(|(_, c)| *c).unwrap_or_default()
    }

    pub fn bytes(&self, node: Role, dir: Direction) -> u64 {
        self.counters.iter().filter(|((n, d, _), _)| *n == node && *d == dir).map(|(_, (_, c))| c.bytes).sum()
    }

    /// Bytes in both directions.
    pub fn node_bytes(&self, node: Role) -> u64 {
        self.bytes(node, Direction::In) + self.bytes(node, Direction::Out)
    }

    pub fn count(&self, node: Role, dir: Direction, kind: PayloadKind) -> u64 {
        self.counter(node, dir, kind).count
    }

    /// Megabits per second over the run, both directions.
    pub fn bandwidth_mbps(&self, node: Role) -> f64 {
        if self.duration_s <= 0.0 {
            return 0.0;
        }
        self.node_bytes(node) as f64 * 8.0 / 1e6 / self.duration_s
    }

    /// Messages per second of `kind` published by `node`.
    pub fn frequency_hz(&self, node: Role, kind: PayloadKind) -> f64 {
        if self.duration_s <= 0.0 {
            return 0.0;
        }
        self.count(node, Direction::Out, kind) as f64 / self.duration_s
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    /// `node,direction,kind,bytes,count,duration_s`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,direction,kind,bytes,count,duration_s\n");
        for ((node, dir, _), (kind, c)) in &self.counters {
            let _ =
                writeln!(s, "{node},{},{},{},{},{}", dir.name(), kind_name(*kind), c.bytes, c.count, self.duration_s);
        }
        s
    }
}
