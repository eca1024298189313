//! One SLAM node: whichever modules the distribution decision leaves local,
//! plus discovery, the publishers and the pause protocol.
//!
//! The node is sans-IO. Every entry point receives a [`Ctx`] collecting the
//! frames to send and the timers to arm, so the same code runs under the
//! network simulator and under the in-process centralized driver.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::comm::{Discovery, Envelope, Payload, SeqCheck, SeqFilter, Target, Topic};
use crate::geometry::Pose2;
use crate::ids::{KeyFrameId, MapId, Role};
use crate::kernel::{
    close_loop, create_keyframe, detect_loop_or_merge, global_bundle_adjust, initialize_map, local_bundle_adjust,
    merge_maps, should_create_keyframe, track_frame, Frame, IdMint, KernelError, LoopKind, TrackStatus,
};
use crate::sim::{ms, Ctx, SimNode, SimTime};
use crate::state::{
    build_global_batches, growth_schedule, BatchKind, GlobalUpdateStart, MapBatch, NewKeyFramePayload, SystemState,
};

use super::config::NodeConfig;
use super::events::{EventKind, EventLog, FailureCause};
use super::membership::{MemberChange, Membership};
use super::policy::{decide, DiscoverySet, DistributionDecision, Route};
use super::publisher::LocalPublisher;

const TOKEN_SHIFT: u32 = 56;
const T_FRAME: u64 = 1;
const T_HEARTBEAT: u64 = 2;
const T_DETECT: u64 = 3;
const T_LOCAL: u64 = 4;
const T_GLOBAL: u64 = 5;
const T_LMFREQ: u64 = 6;

fn token(kind: u64, arg: u64) -> u64 {
    (kind << TOKEN_SHIFT) | arg
}

/// Counters of inbound anomalies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub decode_errors: u64,
    pub duplicates: u64,
    pub gaps: u64,
    pub keyframes_created: u64,
    pub frames_processed: u64,
}

#[derive(Debug, Clone)]
struct Tracker {
    mint: IdMint,
    active: Option<MapId>,
    pose: Pose2,
    since_kf: u32,
    init_ref: Option<Frame>,
    lost: bool,
    /// Keyframes sent to a remote LM and not yet covered by one of its local batches.
    unacked: VecDeque<NewKeyFramePayload>,
}

#[derive(Debug, Clone)]
struct GlobalOut {
    start: GlobalUpdateStart,
    batches: Vec<MapBatch>,
    next: usize,
    served: BTreeSet<Role>,
}

/// Input frames for a tracking node and when the first one arrives.
#[derive(Debug, Clone, Default)]
pub struct FrameInput {
    pub frames: Vec<Frame>,
    pub start: SimTime,
}

impl FrameInput {
    fn due(&self, i: usize) -> SimTime {
        let t0 = self.frames[0].timestamp;
        self.start + ms((self.frames[i].timestamp - t0) * 1000.0)
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    cfg: NodeConfig,
    session: u64,
    state: SystemState,
    members: Membership,
    decision: DistributionDecision,
    seq_out: HashMap<(Role, Topic), u32>,
    seq_in: SeqFilter,
    heartbeat_seq: u32,
    log: EventLog,
    stats: NodeStats,
    input: FrameInput,
    next_frame: usize,
    tracker: Tracker,
    local_out: LocalPublisher,
    global_out: Option<GlobalOut>,
    /// The last completed own global update, kept for peers that became direct subscribers late.
    last_global: Option<GlobalOut>,
    kfs_since_global: usize,
    pause_writer: Option<Role>,
    was_paused: bool,
    crashed: bool,
}

impl Node {
    pub fn new(cfg: NodeConfig) -> Self {
        let role = cfg.role;
        let window = ms(cfg.departure_after_ms());
        Self {
            session: 1,
            state: SystemState::new(),
            members: Membership::new(window),
            decision: decide(role, &DiscoverySet::new()),
            seq_out: HashMap::new(),
            seq_in: SeqFilter::new(),
            heartbeat_seq: 0,
            log: EventLog::default(),
            stats: NodeStats::default(),
            input: FrameInput::default(),
            next_frame: 0,
            tracker: Tracker {
                mint: IdMint::new(role),
                active: None,
                pose: Pose2::IDENTITY,
                since_kf: 0,
                init_ref: None,
                lost: false,
                unacked: VecDeque::new(),
            },
            local_out: LocalPublisher::new(ms(cfg.local_batch_spacing_ms)),
            global_out: None,
            last_global: None,
            kfs_since_global: 0,
            pause_writer: None,
            was_paused: false,
            crashed: false,
            cfg,
        }
    }

    /// A tracking node fed with `input`.
    pub fn tracker(cfg: NodeConfig, input: FrameInput) -> Self {
        let mut n = Self::new(cfg);
        n.input = input;
        n
    }

    pub fn role(&self) -> Role {
        self.cfg.role
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn members(&self) -> &DiscoverySet {
        self.members.members()
    }

    pub fn decision(&self) -> DistributionDecision {
        self.decision
    }

    /// All input frames have been consumed.
    pub fn input_done(&self) -> bool {
        self.next_frame >= self.input.frames.len()
    }

    /// Keyframe poses of the map holding the most keyframes, by timestamp.
    pub fn keyframe_trajectory(&self) -> Vec<(f64, Pose2)> {
        let Some(map) = self.state.maps().values().max_by_key(|m| (m.keyframes.len(), std::cmp::Reverse(m.map_id)))
        else {
            return Vec::new();
        };
        let mut out: Vec<(f64, Pose2)> = map.keyframes.values().map(|k| (k.timestamp, k.pose)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    // ---- outbound -------------------------------------------------------

    fn envelope(&mut self, to: Role, topic: Topic, target: Target, payload: &Payload) -> Envelope {
        let (role, epoch) = (self.role(), self.state.pause_epoch() as u32);
        let seq = self.seq_out.entry((to, topic)).or_insert(0);
        let env = Envelope::new(topic, role, *seq, epoch, target, payload);
        *seq += 1;
        env
    }

    fn send(&mut self, cx: &mut Ctx, to: Role, topic: Topic, target: Target, payload: &Payload) {
        let env = self.envelope(to, topic, target, payload);
        cx.send(to, env).expect("node publishes only on its own topics");
    }

    fn announce(&mut self, cx: &mut Ctx, to: Option<Role>) {
        let p = Payload::Discovery(Discovery { task: self.role(), session: self.session });
        match to {
            Some(r) => self.send(cx, r, Topic::Discovery, Target::None, &p),
            None => {
                let env =
                    Envelope::new(Topic::Discovery, self.role(), 0, self.state.pause_epoch() as u32, Target::None, &p);
                cx.broadcast(env).expect("discovery is open to every role");
            }
        }
    }

    fn heartbeat(&mut self, cx: &mut Ctx) {
        let env = Envelope::heartbeat(
            self.role(),
            self.heartbeat_seq,
            self.state.pause_epoch() as u32,
            (cx.now() / 1000) as u32,
        );
        self.heartbeat_seq = self.heartbeat_seq.wrapping_add(1);
        cx.broadcast(env).expect("discovery is open to every role");
        cx.background_timer(cx.now() + ms(self.cfg.heartbeat_ms), token(T_HEARTBEAT, 0));
    }

    /// Topics used for full-state resync towards a peer.
    fn resync_topics(&self) -> (Topic, Topic) {
        match self.role() {
            Role::Tr => (Topic::KfNew, Topic::MapLocal),
            Role::Lm => (Topic::KfForward, Topic::MapLocal),
            Role::Lc => (Topic::MapGlobal, Topic::MapGlobal),
        }
    }

    fn resync(&mut self, cx: &mut Ctx, peer: Role) {
        let (payloads, batches) = self.state.export(self.role());
        let (kt, bt) = self.resync_topics();
        for p in payloads {
            self.send(cx, peer, kt, Target::None, &Payload::NewKeyFrame(p));
        }
        for b in batches {
            self.send(cx, peer, bt, Target::None, &Payload::MapBatch(b));
        }
    }

    fn publish_local(&mut self, cx: &mut Ctx, batches: Vec<MapBatch>, fresh: bool) {
        if self.members.members().is_empty() || batches.is_empty() {
            return;
        }
        self.local_out.push(batches, fresh);
        self.pump_local(cx);
    }

    fn pump_local(&mut self, cx: &mut Ctx) {
        let poll = self.local_out.poll(cx.now());
        if let Some(b) = poll.emit {
            let p = Payload::MapBatch(b);
            let peers: Vec<Role> = self.members.members().iter().collect();
            for r in peers {
                self.send(cx, r, Topic::MapLocal, Target::None, &p);
            }
        }
        if let Some(at) = poll.wake_at {
            cx.timer(at, token(T_LOCAL, 0));
        }
    }

    fn schedule(&self) -> Vec<usize> {
        growth_schedule(self.cfg.local_batch_min, self.cfg.local_batch_max, 8)
    }

    /// Peers that receive this node's global updates directly.
    fn global_targets(&self) -> Vec<Role> {
        let g = self.members.members();
        match self.role() {
            Role::Lc if g.contains(Role::Lm) => vec![Role::Lm],
            Role::Lc | Role::Lm if g.contains(Role::Tr) => vec![Role::Tr],
            _ => Vec::new(),
        }
    }

    /// Sends everything emitted so far of `g` to targets that have not seen it.
    fn serve_global(&mut self, cx: &mut Ctx, g: &mut GlobalOut) {
        for r in self.global_targets() {
            if g.served.insert(r) {
                self.send(cx, r, Topic::MapGlobal, Target::None, &Payload::GlobalUpdateStart(g.start));
                for b in &g.batches[..g.next] {
                    self.send(cx, r, Topic::MapGlobal, Target::None, &Payload::MapBatch(b.clone()));
                }
            }
        }
    }

    fn emit_global(&mut self, cx: &mut Ctx) {
        let Some(mut g) = self.global_out.take() else { return };
        let b = g.batches[g.next].clone();
        self.serve_global(cx, &mut g);
        g.next += 1;
        let p = Payload::MapBatch(b.clone());
        for r in g.served.clone() {
            if self.members.members().contains(r) {
                self.send(cx, r, Topic::MapGlobal, Target::None, &p);
            }
        }
        let _ = self.state.apply_map_batch(&b);
        self.note_pause(cx);
        if g.next < g.batches.len() {
            cx.timer(cx.now() + ms(self.cfg.global_batch_spacing_ms), token(T_GLOBAL, 0));
            self.global_out = Some(g);
        } else {
            self.last_global = Some(g);
        }
    }

    // ---- modules --------------------------------------------------------

    /// Local mapping for keyframe `kf`, then hand-off to loop closing.
    fn lm_process(&mut self, cx: &mut Ctx, kf: KeyFrameId, payload: &NewKeyFramePayload) {
        let writer = self.role();
        let params = self.cfg.kernel;
        if let Some(mid) = self.state.keyframe_map(kf) {
            let map = self.state.map(mid).expect("home map exists");
            if !map.initialized_optimized {
                // Only the newest initial keyframe triggers the first optimization,
                // so a co-located mapper does the same work as a remote one that
                // receives the keyframes one at a time.
                let newest = map.latest_keyframe().is_some_and(|k| k.id == kf);
                if newest
                    && map.keyframes.len() >= 2
                    && self.state.run_local(mid, writer, |m| global_bundle_adjust(m, &params)).is_ok()
                {
                    let batches = self.state.collect_all_dirty(&self.schedule(), writer);
                    self.publish_local(cx, batches, true);
                }
            } else if self
                .state
                .run_local(mid, writer, |m| local_bundle_adjust(m, kf, params.lba_covisible, &params))
                .is_ok()
            {
                self.log.push(cx.now(), EventKind::LocalAdjust(kf));
                let batches = self.state.collect_dirty(kf, params.lba_covisible, &self.schedule(), writer);
                self.publish_local(cx, batches, true);
            }
        }
        match self.decision.lc {
            Route::Local => self.lc_process(cx, kf),
            Route::Remote(peer) if peer != self.role() && self.role() != Role::Lc => {
                let p = Payload::NewKeyFrame(payload.clone());
                self.send(cx, peer, Topic::KfForward, Target::Lc, &p);
            }
            Route::Remote(_) => {}
        }
    }

    /// Loop and merge detection for keyframe `kf`, starting a global update on a hit.
    fn lc_process(&mut self, cx: &mut Ctx, kf: KeyFrameId) {
        self.kfs_since_global += 1;
        if !self.cfg.loop_closing
            || self.state.paused()
            || self.global_out.is_some()
            || self.kfs_since_global < self.cfg.loop_min_gap_kfs
        {
            return;
        }
        let Some(mid) = self.state.keyframe_map(kf) else { return };
        if !self.state.map(mid).is_some_and(|m| m.initialized_optimized) {
            return;
        }
        let params = self.cfg.kernel;
        let Some(cand) = detect_loop_or_merge(self.state.maps(), mid, kf, params.loop_tau) else { return };
        let mut work = self.state.maps().clone();
        let record = match cand.kind {
            LoopKind::Loop => match work.get_mut(&cand.query_map) {
                Some(m) => close_loop(m, &cand, &params),
                None => Err(KernelError::UnknownMap(cand.query_map)),
            },
            LoopKind::Merge => merge_maps(&mut work, &cand, &params),
        };
        let Ok(record) = record else { return };
        let writer = self.role();
        let (epoch, version) = self.state.next_global_stamp(writer);
        let start = GlobalUpdateStart { writer, epoch, kind: record.kind };
        let batches =
            build_global_batches(&record, &work[&record.map_id], writer, epoch, version, self.cfg.global_batch_size);
        self.kfs_since_global = 0;
        self.log.push(cx.now(), EventKind::GlobalStarted { kind: record.kind, epoch, writer });
        self.state.apply_global_start(&start);
        self.pause_writer = Some(writer);
        self.note_pause(cx);
        self.last_global = None;
        self.global_out = Some(GlobalOut { start, batches, next: 0, served: BTreeSet::new() });
        self.emit_global(cx);
    }

    fn route_keyframe(&mut self, cx: &mut Ctx, payload: NewKeyFramePayload) {
        let id = payload.keyframe.id;
        self.log.push(cx.now(), EventKind::KeyFrameCreated(id));
        self.stats.keyframes_created += 1;
        match self.decision.lm {
            Route::Remote(peer) => {
                self.send(cx, peer, Topic::KfNew, Target::Lm, &Payload::NewKeyFrame(payload.clone()));
                self.tracker.unacked.push_back(payload);
            }
            Route::Local => self.lm_process(cx, id, &payload),
        }
    }

    fn track(&mut self, cx: &mut Ctx, f: Frame) {
        self.stats.frames_processed += 1;
        let params = self.cfg.kernel;
        let paused = self.state.paused();
        if let Some(active) = self.tracker.active {
            let (m, t) = self.state.resolve_map_transform(active);
            if let Some(t) = t {
                self.tracker.pose = t.compose(&self.tracker.pose);
            }
            self.tracker.active = Some(m);
        }
        let Some(mid) = self.tracker.active else {
            if paused {
                return;
            }
            let Some(r) = self.tracker.init_ref.take() else {
                self.tracker.init_ref = Some(f);
                return;
            };
            match initialize_map(&r, &f, &mut self.tracker.mint, &params) {
                Ok(map) => {
                    let mid = map.map_id;
                    let last = map.latest_keyframe().map(|k| k.pose).unwrap_or_default();
                    self.log.push(cx.now(), EventKind::MapInitialized(mid));
                    let payloads = self.state.insert_own_map(map, self.role());
                    self.tracker.active = Some(mid);
                    self.tracker.pose = last;
                    self.tracker.since_kf = 0;
                    for p in payloads {
                        self.route_keyframe(cx, p);
                    }
                }
                Err(KernelError::InsufficientParallax { common, .. }) if common >= params.min_init_common => {
                    self.tracker.init_ref = Some(r);
                }
                Err(_) => self.tracker.init_ref = Some(f),
            }
            return;
        };
        let Some(map) = self.state.map(mid) else { return };
        let predicted = self.tracker.pose.compose(&f.odometry_delta);
        let tr = track_frame(map, &f, predicted, params.track_window, &params);
        self.tracker.since_kf += 1;
        if tr.status == TrackStatus::Lost {
            if !self.tracker.lost {
                self.tracker.lost = true;
                self.log.push(cx.now(), EventKind::TrackingLost);
            }
            self.tracker.pose = predicted;
            if map.initialized_optimized {
                self.log.push(cx.now(), EventKind::Failure(FailureCause::NewMap));
                self.tracker.lost = false;
                self.tracker.active = None;
                self.tracker.init_ref = Some(f);
            }
            return;
        }
        if self.tracker.lost {
            self.tracker.lost = false;
            self.log.push(cx.now(), EventKind::Failure(FailureCause::Resumed));
        }
        self.tracker.pose = tr.pose;
        if paused || !should_create_keyframe(&tr, self.tracker.since_kf, &params) {
            return;
        }
        self.tracker.since_kf = 0;
        let (kf, pts) = create_keyframe(&f, &tr, &mut self.tracker.mint, map);
        let payload = self.state.insert_own_keyframe(kf, pts, false, self.role());
        self.route_keyframe(cx, payload);
    }

    // ---- membership -----------------------------------------------------

    fn redecide(&mut self, cx: &mut Ctx) {
        let d = decide(self.role(), self.members.members());
        if d != self.decision {
            self.decision = d;
            self.log.push(cx.now(), EventKind::Decision(d));
        }
        if let Some(mut g) = self.global_out.take() {
            self.serve_global(cx, &mut g);
            self.global_out = Some(g);
        }
        if let Some(mut g) = self.last_global.take() {
            self.serve_global(cx, &mut g);
            self.last_global = Some(g);
        }
    }

    fn arm_detector(&mut self, cx: &mut Ctx, peer: Role) {
        if let Some(d) = self.members.deadline(peer) {
            cx.background_timer(d, token(T_DETECT, peer.code() as u64));
        }
    }

    fn on_member(&mut self, cx: &mut Ctx, peer: Role, change: MemberChange) {
        match change {
            MemberChange::None => {}
            MemberChange::Joined | MemberChange::Rejoined => {
                let kind =
                    if change == MemberChange::Joined { EventKind::Joined(peer) } else { EventKind::Rejoined(peer) };
                self.log.push(cx.now(), kind);
                self.announce(cx, Some(peer));
                self.redecide(cx);
                self.resync(cx, peer);
            }
        }
        self.arm_detector(cx, peer);
    }

    fn on_departed(&mut self, cx: &mut Ctx, peer: Role) {
        self.log.push(cx.now(), EventKind::Departed(peer));
        cx.forget(peer);
        self.redecide(cx);
        if self.state.paused() && self.pause_writer == Some(peer) {
            let epoch = self.state.pause_epoch();
            self.state.abandon_global();
            self.log.push(cx.now(), EventKind::GlobalAbandoned { epoch });
            self.was_paused = false;
        }
        if peer == Role::Lm && self.decision.lm == Route::Local {
            let pending: Vec<NewKeyFramePayload> = self.tracker.unacked.drain(..).collect();
            for p in pending {
                let id = p.keyframe.id;
                self.log.push(cx.now(), EventKind::Reprocessed(id));
                self.lm_process(cx, id, &p);
            }
        }
    }

    fn note_pause(&mut self, cx: &mut Ctx) {
        let p = self.state.paused();
        if p != self.was_paused {
            let epoch = self.state.pause_epoch();
            self.log.push(cx.now(), if p { EventKind::Paused { epoch } } else { EventKind::Resumed { epoch } });
            self.was_paused = p;
        }
    }

    fn ack(&mut self, b: &MapBatch) {
        if b.kind != BatchKind::Local || self.tracker.unacked.is_empty() {
            return;
        }
        match b.center {
            Some(c) => self.tracker.unacked.retain(|p| p.keyframe.id > c),
            None => {
                let ids: BTreeSet<KeyFrameId> = b.keyframes.iter().map(|k| k.id).collect();
                self.tracker.unacked.retain(|p| !ids.contains(&p.keyframe.id));
            }
        }
    }

    fn handle(&mut self, cx: &mut Ctx, env: &Envelope, payload: Payload) {
        match payload {
            Payload::Discovery(d) => {
                if self.seq_in.on_session(d.task, d.session) {
                    // A restarted peer counts from zero again.
                }
                let change = self.members.on_announce(d.task, d.session, cx.now());
                self.on_member(cx, d.task, change);
            }
            Payload::Heartbeat { sent_at_ms } => {
                let change = self.members.on_heartbeat(env.sender, ms(sent_at_ms as f64), cx.now());
                self.on_member(cx, env.sender, change);
            }
            Payload::NewKeyFrame(p) => {
                let _ = self.state.apply_new_keyframe(&p);
                let id = p.keyframe.id;
                match (env.target, self.role()) {
                    (Target::Lm, Role::Lm) => self.lm_process(cx, id, &p),
                    (Target::Lc, Role::Lc) => self.lc_process(cx, id),
                    _ => {}
                }
            }
            Payload::KeyFrameUpdate(u) => {
                self.state.apply_keyframe_update(&u);
            }
            Payload::MapBatch(b) => {
                let _ = self.state.apply_map_batch(&b);
                if env.sender == Role::Lm && self.role() == Role::Tr {
                    self.ack(&b);
                }
                if b.kind.is_global() {
                    self.relay(cx, env, Payload::MapBatch(b));
                }
            }
            Payload::GlobalUpdateStart(s) => {
                self.state.apply_global_start(&s);
                if self.state.paused() && self.state.pause_epoch() == s.epoch {
                    self.pause_writer = Some(s.writer);
                }
                self.relay(cx, env, Payload::GlobalUpdateStart(s));
            }
        }
        self.note_pause(cx);
    }

    /// LM passes global updates from LC on to TR.
    fn relay(&mut self, cx: &mut Ctx, env: &Envelope, p: Payload) {
        if self.role() == Role::Lm && env.sender == Role::Lc && self.members.members().contains(Role::Tr) {
            self.send(cx, Role::Tr, Topic::MapGlobal, Target::None, &p);
        }
    }
}

impl SimNode for Node {
    fn role(&self) -> Role {
        self.cfg.role
    }

    fn on_start(&mut self, cx: &mut Ctx) {
        self.announce(cx, None);
        self.heartbeat(cx);
        cx.background_timer(cx.now() + ms(self.cfg.t_lmfreq_ms), token(T_LMFREQ, 0));
        if self.next_frame < self.input.frames.len() {
            let at = self.input.due(self.next_frame);
            cx.input_timer(at, token(T_FRAME, self.next_frame as u64));
        }
    }

    fn on_frame(&mut self, cx: &mut Ctx, env: Envelope) {
        if env.topic != Topic::Discovery {
            match self.seq_in.check(env.sender, env.topic, env.seq) {
                SeqCheck::Duplicate => {
                    self.stats.duplicates += 1;
                    return;
                }
                SeqCheck::Gap { .. } => self.stats.gaps += 1,
                SeqCheck::InOrder => {}
            }
        }
        match env.decode_payload() {
            Ok(p) => self.handle(cx, &env, p),
            Err(_) => self.stats.decode_errors += 1,
        }
    }

    fn on_timer(&mut self, cx: &mut Ctx, tok: u64) {
        let arg = tok & ((1 << TOKEN_SHIFT) - 1);
        match tok >> TOKEN_SHIFT {
            T_FRAME => {
                let i = arg as usize;
                if i != self.next_frame || i >= self.input.frames.len() {
                    return;
                }
                self.next_frame += 1;
                let f = self.input.frames[i].clone();
                self.track(cx, f);
                if self.next_frame < self.input.frames.len() {
                    let at = self.input.due(self.next_frame);
                    cx.input_timer(at, token(T_FRAME, self.next_frame as u64));
                }
            }
            T_HEARTBEAT => self.heartbeat(cx),
            T_DETECT => {
                let Some(peer) = Role::from_code(arg as u8) else { return };
                if self.members.expire(peer, cx.now()) {
                    self.on_departed(cx, peer);
                }
            }
            T_LOCAL => {
                self.local_out.woke();
                self.pump_local(cx);
            }
            T_GLOBAL => self.emit_global(cx),
            T_LMFREQ => {
                let due = self.local_out.last_emit().is_none_or(|t| cx.now() >= t + ms(self.cfg.t_lmfreq_ms));
                if due && self.state.has_dirty() && self.local_out.is_empty() {
                    let batches = self.state.collect_all_dirty(&self.schedule(), self.role());
                    self.publish_local(cx, batches, false);
                }
                cx.background_timer(cx.now() + ms(self.cfg.t_lmfreq_ms), token(T_LMFREQ, 0));
            }
            _ => {}
        }
    }

    fn on_crash(&mut self) {
        self.crashed = true;
        self.local_out.clear();
        self.global_out = None;
        self.last_global = None;
    }

    fn on_recover(&mut self, cx: &mut Ctx) {
        self.crashed = false;
        self.session += 1;
        self.seq_out.clear();
        self.seq_in = SeqFilter::new();
        self.members = Membership::new(self.members.window());
        self.redecide(cx);
        if self.state.paused() && self.pause_writer == Some(self.role()) {
            let epoch = self.state.pause_epoch();
            self.state.abandon_global();
            self.log.push(cx.now(), EventKind::GlobalAbandoned { epoch });
            self.was_paused = false;
        }
        while self.next_frame < self.input.frames.len() && self.input.due(self.next_frame) < cx.now() {
            self.next_frame += 1;
        }
        self.on_start(cx);
    }

    fn is_idle(&self) -> bool {
        self.local_out.is_empty()
            && self.global_out.is_none()
            && (self.members.members().is_empty() || !self.state.has_dirty())
    }
}
