//! A deterministic discrete-event network simulator.
//!
//! One event loop owns every node. Time is virtual and counted in
//! microseconds. Links are directed; each carries its own [`LinkSpec`]. Frames
//! travel as encoded bytes so that traffic accounting sees exactly what the
//! wire would carry.
//!
//! Reliability follows the reliable-QoS contract: a drop costs one extra
//! one-way latency and the frame is resent, and a link never reorders. Frames
//! for a link that is down (partitioned, or receiver crashed) wait in a hold
//! buffer until the link comes back or the sender forgets the peer.

pub mod fault;
pub mod traffic;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::comm::{check_publish, decode, encode, Envelope, PayloadKind, Topic, TopicViolation};
use crate::ids::Role;

pub use fault::{parse_schedule, FaultEvent, FaultKind, FaultParseError};
pub use traffic::{Counter, Direction, TrafficAccount};

/// Virtual time in microseconds.
pub type SimTime = u64;

pub fn ms(v: f64) -> SimTime {
    (v * 1000.0).round().max(0.0) as SimTime
}

pub fn to_ms(t: SimTime) -> f64 {
    t as f64 / 1000.0
}

/// One direction of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub t_p_ms: f64,
    pub t_proc_ms: f64,
    /// Half-width of the uniform jitter.
    pub jitter_ms: f64,
    pub drop_prob: f64,
}

impl LinkSpec {
    pub const IDEAL: LinkSpec = LinkSpec { t_p_ms: 0.0, t_proc_ms: 0.0, jitter_ms: 0.0, drop_prob: 0.0 };

    /// Wireless-to-wired mix used unless a run configures otherwise.
    pub const DEFAULT: LinkSpec = LinkSpec { t_p_ms: 5.0, t_proc_ms: 1.0, jitter_ms: 2.0, drop_prob: 0.0 };

    pub fn new(t_p_ms: f64, t_proc_ms: f64) -> Self {
        Self { t_p_ms, t_proc_ms, jitter_ms: 0.0, drop_prob: 0.0 }
    }

    /// Mean one-way delay.
    pub fn one_way_ms(&self) -> f64 {
        self.t_p_ms + self.t_proc_ms
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> SimTime {
        let j = if self.jitter_ms > 0.0 { rng.random_range(-self.jitter_ms..=self.jitter_ms) } else { 0.0 };
        ms((self.one_way_ms() + j).max(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    /// Dispatching more events than this aborts the run.
    pub max_events: u64,
    /// Resends before a frame is given up as undeliverable.
    pub max_retries: u32,
    /// Keep a human-readable trace besides the trace digest.
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { seed: 0, max_events: 50_000_000, max_retries: 64, record_trace: false }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("livelock guard: more than {0} events dispatched")]
    LivelockGuard(u64),
}

/// How a timer is ordered and whether it keeps the run alive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerClass {
    Normal,
    /// Does not keep the simulation from reaching quiescence (heartbeats).
    Background,
    /// External input. Fires after every other event due at the same instant.
    Input,
}

impl TimerClass {
    pub fn rank(self) -> u8 {
        match self {
            TimerClass::Normal | TimerClass::Background => 0,
            TimerClass::Input => 1,
        }
    }
}

/// Where an outgoing frame goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    To(Role),
    /// Every other node present in the network.
    Broadcast,
}

/// What a node asked its driver to do during one callback.
#[derive(Debug)]
pub struct Ctx {
    now: SimTime,
    role: Role,
    sends: Vec<(Dest, Envelope)>,
    timers: Vec<(SimTime, u64, TimerClass)>,
    forgets: Vec<Role>,
}

/// Everything a callback produced, in emission order.
#[derive(Debug, Default)]
pub struct Effects {
    pub sends: Vec<(Dest, Envelope)>,
    pub timers: Vec<(SimTime, u64, TimerClass)>,
    pub forgets: Vec<Role>,
}

impl Ctx {
    pub fn new(now: SimTime, role: Role) -> Self {
        Self { now, role, sends: Vec::new(), timers: Vec::new(), forgets: Vec::new() }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn now_ms(&self) -> f64 {
        to_ms(self.now)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Publishes `env` to `to`. Fails fast on topics the sender may not use.
    pub fn send(&mut self, to: Role, env: Envelope) -> Result<(), TopicViolation> {
        check_publish(self.role, env.topic)?;
        self.sends.push((Dest::To(to), env));
        Ok(())
    }

    pub fn broadcast(&mut self, env: Envelope) -> Result<(), TopicViolation> {
        check_publish(self.role, env.topic)?;
        self.sends.push((Dest::Broadcast, env));
        Ok(())
    }

    /// Fires `on_timer(token)` at `at`.
    pub fn timer(&mut self, at: SimTime, token: u64) {
        self.timers.push((at.max(self.now), token, TimerClass::Normal));
    }

    pub fn background_timer(&mut self, at: SimTime, token: u64) {
        self.timers.push((at.max(self.now), token, TimerClass::Background));
    }

    pub fn input_timer(&mut self, at: SimTime, token: u64) {
        self.timers.push((at.max(self.now), token, TimerClass::Input));
    }

    /// Drops frames still held for `peer`; called once the peer is declared departed.
    pub fn forget(&mut self, peer: Role) {
        self.forgets.push(peer);
    }

    pub fn into_effects(self) -> Effects {
        Effects { sends: self.sends, timers: self.timers, forgets: self.forgets }
    }
}

/// A node driven by the simulator.
pub trait SimNode {
    fn role(&self) -> Role;
    fn on_start(&mut self, cx: &mut Ctx);
    fn on_frame(&mut self, cx: &mut Ctx, env: Envelope);
    fn on_timer(&mut self, cx: &mut Ctx, token: u64);
    /// The node's queues are lost.
    fn on_crash(&mut self) {}
    fn on_recover(&mut self, cx: &mut Ctx) {
        self.on_start(cx)
    }
    /// No queued work. Quiescence requires every live node to be idle.
    fn is_idle(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub events: u64,
    pub sent: u64,
    pub delivered: u64,
    /// Frames discarded at a crashed sender, a forgotten peer, or after the retry cap.
    pub dropped: u64,
    pub retransmissions: u64,
    pub decode_errors: u64,
}

#[derive(Debug)]
struct Frame {
    from: Role,
    to: Role,
    kind: PayloadKind,
    topic: Topic,
    bytes: Vec<u8>,
}

#[derive(Debug)]
enum Event {
    Deliver(u64),
    Timer { node: Role, token: u64, incarnation: u64, class: TimerClass },
    Fault(FaultKind),
}

pub struct Simulator<N: SimNode> {
    cfg: SimConfig,
    now: SimTime,
    nodes: BTreeMap<Role, N>,
    crashed: BTreeSet<Role>,
    incarnation: BTreeMap<Role, u64>,
    links: BTreeMap<(Role, Role), LinkSpec>,
    partitioned: BTreeSet<(Role, Role)>,
    last_delivery: BTreeMap<(Role, Role), SimTime>,
    held: BTreeMap<(Role, Role), VecDeque<u64>>,
    queue: BTreeMap<(SimTime, u8, u64), Event>,
    frames: BTreeMap<u64, Frame>,
    next_id: u64,
    foreground: usize,
    rng: ChaCha8Rng,
    traffic: TrafficAccount,
    stats: SimStats,
    trace: Sha256,
    trace_lines: Vec<String>,
    started: bool,
}

impl<N: SimNode> Simulator<N> {
    pub fn new(nodes: Vec<N>, cfg: SimConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nodes: BTreeMap<Role, N> = nodes.into_iter().map(|n| (n.role(), n)).collect();
        let mut links = BTreeMap::new();
        for a in Role::ALL {
            for b in Role::ALL {
                if a != b {
                    links.insert((a, b), LinkSpec::DEFAULT);
                }
            }
        }
        Self {
            cfg,
            now: 0,
            nodes,
            crashed: BTreeSet::new(),
            incarnation: BTreeMap::new(),
            links,
            partitioned: BTreeSet::new(),
            last_delivery: BTreeMap::new(),
            held: BTreeMap::new(),
            queue: BTreeMap::new(),
            frames: BTreeMap::new(),
            next_id: 0,
            foreground: 0,
            rng,
            traffic: TrafficAccount::new(),
            stats: SimStats::default(),
            trace: Sha256::new(),
            trace_lines: Vec::new(),
            started: false,
        }
    }

    pub fn set_link(&mut self, from: Role, to: Role, spec: LinkSpec) {
        self.links.insert((from, to), spec);
    }

    pub fn set_all_links(&mut self, spec: LinkSpec) {
        for s in self.links.values_mut() {
            *s = spec;
        }
    }

    pub fn link(&self, from: Role, to: Role) -> LinkSpec {
        self.links[&(from, to)]
    }

    /// Jitter-free round trip between two nodes.
    pub fn round_trip_ms(&self, a: Role, b: Role) -> f64 {
        self.link(a, b).one_way_ms() + self.link(b, a).one_way_ms()
    }

    /// Queues faults. Events at the same time fire in the order given.
    pub fn schedule_faults(&mut self, events: impl IntoIterator<Item = FaultEvent>) {
        for ev in events {
            self.push(ms(ev.at_ms as f64), Event::Fault(ev.kind));
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node(&self, role: Role) -> Option<&N> {
        self.nodes.get(&role)
    }

    pub fn node_mut(&mut self, role: Role) -> Option<&mut N> {
        self.nodes.get_mut(&role)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &N> {
        self.nodes.values()
    }

    pub fn is_crashed(&self, role: Role) -> bool {
        self.crashed.contains(&role)
    }

    pub fn traffic(&self) -> &TrafficAccount {
        &self.traffic
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    /// Frames scheduled for delivery or held behind a down link.
    pub fn in_flight(&self) -> u64 {
        self.frames.len() as u64
    }

    pub fn trace_digest(&self) -> String {
        let h = self.trace.clone().finalize();
        h.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn trace_lines(&self) -> &[String] {
        &self.trace_lines
    }

    fn push(&mut self, at: SimTime, ev: Event) {
        let rank = match &ev {
            Event::Timer { class, .. } => class.rank(),
            _ => 0,
        };
        if !matches!(ev, Event::Timer { class: TimerClass::Background, .. }) {
            self.foreground += 1;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.queue.insert((at, rank, id), ev);
    }

    fn log(&mut self, line: std::fmt::Arguments<'_>) {
        let s = format!("{} {}", self.now, line);
        self.trace.update(s.as_bytes());
        self.trace.update(b"\n");
        if self.cfg.record_trace {
            self.trace_lines.push(s);
        }
    }

    fn link_up(&self, from: Role, to: Role) -> bool {
        !self.crashed.contains(&to) && !self.partitioned.contains(&(from, to))
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        let roles: Vec<Role> = self.nodes.keys().copied().collect();
        for r in roles {
            self.callback(r, |n, cx| n.on_start(cx));
        }
    }

    fn callback(&mut self, role: Role, f: impl FnOnce(&mut N, &mut Ctx)) {
        if self.crashed.contains(&role) {
            return;
        }
        let Some(node) = self.nodes.get_mut(&role) else { return };
        let mut cx = Ctx::new(self.now, role);
        f(node, &mut cx);
        let fx = cx.into_effects();
        let inc = *self.incarnation.get(&role).unwrap_or(&0);
        for (at, token, class) in fx.timers {
            self.push(at, Event::Timer { node: role, token, incarnation: inc, class });
        }
        for peer in fx.forgets {
            self.drop_held(role, peer);
        }
        for (dest, env) in fx.sends {
            match dest {
                Dest::To(to) => self.send(role, to, env),
                Dest::Broadcast => {
                    let peers: Vec<Role> = self.nodes.keys().copied().filter(|r| *r != role).collect();
                    for to in peers {
                        self.send(role, to, env.clone());
                    }
                }
            }
        }
    }

    fn send(&mut self, from: Role, to: Role, env: Envelope) {
        let bytes = encode(&env).expect("nodes emit current-version envelopes");
        self.traffic.account(bytes.len(), from, Direction::Out, env.kind);
        self.stats.sent += 1;
        let id = self.next_id;
        self.next_id += 1;
        self.log(format_args!("send {from}->{to} {} seq={} len={}", env.topic, env.seq, bytes.len()));
        self.frames.insert(id, Frame { from, to, kind: env.kind, topic: env.topic, bytes });
        if self.link_up(from, to) && self.nodes.contains_key(&to) {
            self.transmit(id);
        } else {
            self.held.entry((from, to)).or_default().push_back(id);
        }
    }

    /// Schedules the delivery of a frame that is leaving now.
    fn transmit(&mut self, id: u64) {
        let (from, to) = {
            let f = &self.frames[&id];
            (f.from, f.to)
        };
        let spec = self.links[&(from, to)];
        let mut at = self.now + spec.draw(&mut self.rng);
        let mut tries = 0;
        while spec.drop_prob > 0.0 && self.rng.random_bool(spec.drop_prob.min(1.0)) {
            tries += 1;
            self.stats.retransmissions += 1;
            if tries > self.cfg.max_retries {
                self.frames.remove(&id);
                self.stats.dropped += 1;
                self.log(format_args!("undeliverable {from}->{to}"));
                return;
            }
            at += spec.draw(&mut self.rng);
        }
        let last = self.last_delivery.entry((from, to)).or_insert(0);
        at = at.max(*last);
        *last = at;
        self.push(at, Event::Deliver(id));
    }

    fn drop_held(&mut self, from: Role, to: Role) {
        if let Some(q) = self.held.remove(&(from, to)) {
            for id in q {
                self.frames.remove(&id);
                self.stats.dropped += 1;
            }
        }
    }

    /// Resends frames held on links that are up again, in their original order.
    fn release_held(&mut self) {
        let ready: Vec<(Role, Role)> = self.held.keys().copied().filter(|(a, b)| self.link_up(*a, *b)).collect();
        for link in ready {
            if let Some(q) = self.held.remove(&link) {
                for id in q {
                    self.transmit(id);
                }
            }
        }
    }

    fn deliver(&mut self, id: u64) {
        let Some(frame) = self.frames.get(&id) else { return };
        let (from, to) = (frame.from, frame.to);
        if !self.link_up(from, to) {
            self.held.entry((from, to)).or_default().push_back(id);
            return;
        }
        let frame = self.frames.remove(&id).unwrap();
        self.stats.delivered += 1;
        self.traffic.account(frame.bytes.len(), to, Direction::In, frame.kind);
        self.log(format_args!("deliver {from}->{to} {} len={}", frame.topic, frame.bytes.len()));
        match decode(&frame.bytes) {
            Ok(env) => self.callback(to, |n, cx| n.on_frame(cx, env)),
            Err(_) => self.stats.decode_errors += 1,
        }
    }

    fn fault(&mut self, kind: FaultKind) {
        self.log(format_args!("fault {kind:?}"));
        match kind {
            FaultKind::NodeCrash(r) => {
                if self.crashed.insert(r) {
                    *self.incarnation.entry(r).or_insert(0) += 1;
                    if let Some(n) = self.nodes.get_mut(&r) {
                        n.on_crash();
                    }
                    for peer in Role::ALL {
                        self.drop_held(r, peer);
                    }
                }
            }
            FaultKind::NodeRecover(r) => {
                if self.crashed.remove(&r) {
                    self.callback(r, |n, cx| n.on_recover(cx));
                    self.release_held();
                }
            }
            FaultKind::Partition(links) => {
                for (a, b) in links {
                    self.partitioned.insert((a, b));
                    self.partitioned.insert((b, a));
                }
            }
            FaultKind::Heal => {
                self.partitioned.clear();
                self.release_held();
            }
        }
    }

    /// No foreground work and every live node idle. Held frames do not count:
    /// only a pending heal or recovery releases them, and those are foreground.
    pub fn quiescent(&self) -> bool {
        self.foreground == 0 && self.nodes.iter().all(|(r, n)| self.crashed.contains(r) || n.is_idle())
    }

    /// Runs until `t_end` (inclusive) or, without one, until quiescence.
    /// Returns the final virtual time.
    pub fn run_until(&mut self, t_end: Option<SimTime>) -> Result<SimTime, SimError> {
        self.start();
        loop {
            if t_end.is_none() && self.quiescent() {
                break;
            }
            let Some((&(at, _, _), _)) = self.queue.first_key_value() else {
                if let Some(t) = t_end {
                    self.now = self.now.max(t);
                }
                break;
            };
            if t_end.is_some_and(|t| at > t) {
                self.now = t_end.unwrap();
                break;
            }
            let ((at, _, _), ev) = self.queue.pop_first().unwrap();
            if !matches!(ev, Event::Timer { class: TimerClass::Background, .. }) {
                self.foreground -= 1;
            }
            debug_assert!(at >= self.now, "clock moves forward");
            self.now = at;
            self.stats.events += 1;
            if self.stats.events > self.cfg.max_events {
                return Err(SimError::LivelockGuard(self.cfg.max_events));
            }
            match ev {
                Event::Deliver(id) => self.deliver(id),
                Event::Timer { node, token, incarnation, .. } => {
                    if *self.incarnation.get(&node).unwrap_or(&0) == incarnation {
                        self.log(format_args!("timer {node} {token}"));
                        self.callback(node, |n, cx| n.on_timer(cx, token));
                    }
                }
                Event::Fault(kind) => self.fault(kind),
            }
        }
        self.traffic.duration_s = to_ms(self.now) / 1000.0;
        Ok(self.now)
    }
}
