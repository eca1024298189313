use dslam_core::comm::{Envelope, Payload, Target, Topic};
use dslam_core::sim::{
    ms, parse_schedule, Ctx, Direction, FaultEvent, FaultKind, LinkSpec, SimConfig, SimError, SimNode, Simulator,
};
use dslam_core::Role;
use proptest::prelude::*;

const HB: u64 = 1;
const BURST: u64 = 2;

/// Sends `burst` heartbeat frames to `peer` at start, optionally echoes
/// everything back, and records what it receives.
#[derive(Default)]
struct Probe {
    role: Option<Role>,
    peer: Option<Role>,
    burst: u32,
    burst_at: u64,
    echo: bool,
    heartbeat_ms: Option<u64>,
    got: Vec<(u64, Role, u32)>,
    got_bytes: u64,
    last_heard: Option<u64>,
    declared_departed_at: Option<u64>,
    starts: u32,
    crashes: u32,
    seq: u32,
}

impl Probe {
    fn new(role: Role) -> Self {
        Self { role: Some(role), ..Default::default() }
    }

    fn hb(&mut self, sent_at: u64) -> Envelope {
        self.seq += 1;
        Envelope::heartbeat(self.role.unwrap(), self.seq - 1, 0, sent_at as u32)
    }
}

impl SimNode for Probe {
    fn role(&self) -> Role {
        self.role.unwrap()
    }

    fn on_start(&mut self, cx: &mut Ctx) {
        self.starts += 1;
        if self.burst > 0 {
            cx.timer(ms(self.burst_at as f64), BURST);
        }
        if let Some(h) = self.heartbeat_ms {
            cx.background_timer(cx.now() + ms(h as f64), HB);
        }
    }

    fn on_frame(&mut self, cx: &mut Ctx, env: Envelope) {
        self.got.push((cx.now(), env.sender, env.seq));
        self.got_bytes += env.wire_len() as u64;
        self.last_heard = Some(cx.now());
        if self.echo {
            let e = self.hb(cx.now());
            cx.send(env.sender, e).unwrap();
        }
    }

    fn on_timer(&mut self, cx: &mut Ctx, token: u64) {
        match token {
            BURST => {
                for _ in 0..self.burst {
                    let e = self.hb(cx.now());
                    cx.send(self.peer.unwrap(), e).unwrap();
                }
            }
            HB => {
                let h = ms(self.heartbeat_ms.unwrap() as f64);
                if let Some(peer) = self.peer {
                    let e = self.hb(cx.now());
                    cx.send(peer, e).unwrap();
                    let heard = self.last_heard.unwrap_or(0);
                    if self.declared_departed_at.is_none() && cx.now() >= heard + 3 * h {
                        self.declared_departed_at = Some(cx.now());
                        cx.forget(peer);
                    }
                }
                cx.background_timer(cx.now() + h, HB);
            }
            _ => unreachable!(),
        }
    }

    fn on_crash(&mut self) {
        self.crashes += 1;
    }
}

fn pair(burst: u32, spec: LinkSpec, seed: u64) -> Simulator<Probe> {
    let mut a = Probe::new(Role::Tr);
    a.peer = Some(Role::Lm);
    a.burst = burst;
    let b = Probe::new(Role::Lm);
    let mut sim = Simulator::new(vec![a, b], SimConfig { seed, ..Default::default() });
    sim.set_all_links(spec);
    sim
}

#[test]
fn empty_system_returns_at_zero() {
    let mut sim: Simulator<Probe> = Simulator::new(vec![], SimConfig::default());
    assert_eq!(sim.run_until(None), Ok(0));
    assert!(sim.traffic().is_empty());
}

#[test]
fn deterministic_sum_of_latencies() {
    let mut sim = pair(1, LinkSpec::new(5.0, 2.0), 0);
    sim.run_until(None).unwrap();
    assert_eq!(sim.node(Role::Lm).unwrap().got, vec![(ms(7.0), Role::Tr, 0)]);
}

#[test]
fn round_trip_is_four_term_sum() {
    let mut sim = pair(1, LinkSpec::new(5.0, 2.0), 0);
    sim.node_mut(Role::Lm).unwrap().echo = true;
    sim.run_until(None).unwrap();
    assert_eq!(sim.round_trip_ms(Role::Tr, Role::Lm), 14.0);
    assert_eq!(sim.node(Role::Tr).unwrap().got[0].0, ms(14.0));
}

#[test]
fn asymmetric_directions() {
    let mut sim = pair(1, LinkSpec::new(5.0, 2.0), 0);
    sim.set_link(Role::Lm, Role::Tr, LinkSpec::new(20.0, 3.0));
    sim.node_mut(Role::Lm).unwrap().echo = true;
    sim.run_until(None).unwrap();
    assert_eq!(sim.node(Role::Tr).unwrap().got[0].0, ms(30.0));
}

#[test]
fn zero_traffic_without_peers() {
    let mut sim = Simulator::new(vec![Probe::new(Role::Tr)], SimConfig::default());
    sim.run_until(Some(ms(1000.0))).unwrap();
    assert!(sim.traffic().is_empty());
    assert_eq!(sim.now(), ms(1000.0));
}

#[test]
fn accounting_matches_encoded_bytes() {
    let mut sim = pair(50, LinkSpec::DEFAULT, 3);
    sim.run_until(None).unwrap();
    let got = sim.node(Role::Lm).unwrap().got_bytes;
    assert_eq!(got, 50 * 24);
    assert_eq!(sim.traffic().bytes(Role::Lm, Direction::In), got);
    assert_eq!(sim.traffic().bytes(Role::Tr, Direction::Out), got);
    assert_eq!(sim.traffic().bytes(Role::Lm, Direction::Out), 0);
}

#[test]
fn always_dropping_link_surfaces_as_departure() {
    let mut a = Probe::new(Role::Tr);
    a.peer = Some(Role::Lm);
    a.heartbeat_ms = Some(200);
    let mut b = Probe::new(Role::Lm);
    b.peer = Some(Role::Tr);
    b.heartbeat_ms = Some(200);
    let mut sim = Simulator::new(vec![a, b], SimConfig { max_retries: 5, ..Default::default() });
    sim.set_link(Role::Tr, Role::Lm, LinkSpec { drop_prob: 1.0, ..LinkSpec::DEFAULT });
    sim.run_until(Some(ms(2000.0))).unwrap();
    let lm = sim.node(Role::Lm).unwrap();
    assert!(lm.got.is_empty());
    assert_eq!(lm.declared_departed_at, Some(ms(600.0)));
    let st = sim.stats();
    assert!(st.dropped > 0);
    assert_eq!(st.sent, st.delivered + st.dropped + sim.in_flight());
    // The healthy direction keeps TR from declaring LM departed.
    assert_eq!(sim.node(Role::Tr).unwrap().declared_departed_at, None);
}

#[test]
fn partition_holds_frames_until_heal() {
    let mut sim = pair(20, LinkSpec::new(5.0, 1.0), 0);
    sim.node_mut(Role::Tr).unwrap().burst_at = 100;
    sim.schedule_faults(parse_schedule("50 partition TR-LM\n2050 heal\n").unwrap());
    sim.run_until(Some(ms(2000.0))).unwrap();
    assert!(sim.node(Role::Lm).unwrap().got.is_empty());
    assert_eq!(sim.in_flight(), 20);
    sim.run_until(None).unwrap();
    let got = &sim.node(Role::Lm).unwrap().got;
    assert_eq!(got.iter().map(|g| g.2).collect::<Vec<_>>(), (0..20).collect::<Vec<_>>());
    assert!(got.iter().all(|g| g.0 == ms(2056.0)));
}

#[test]
fn crash_holds_inbound_and_recover_restarts() {
    let mut sim = pair(5, LinkSpec::new(5.0, 1.0), 0);
    sim.node_mut(Role::Tr).unwrap().burst_at = 100;
    sim.schedule_faults([
        FaultEvent { at_ms: 10, kind: FaultKind::NodeCrash(Role::Lm) },
        FaultEvent { at_ms: 500, kind: FaultKind::NodeRecover(Role::Lm) },
    ]);
    sim.run_until(None).unwrap();
    let lm = sim.node(Role::Lm).unwrap();
    assert_eq!((lm.crashes, lm.starts), (1, 2));
    assert_eq!(lm.got.len(), 5);
    assert!(lm.got.iter().all(|g| g.0 == ms(506.0)));
}

#[test]
fn crash_and_recover_at_the_same_instant_keep_declaration_order() {
    let mut sim = pair(1, LinkSpec::new(5.0, 1.0), 0);
    sim.node_mut(Role::Tr).unwrap().burst_at = 100;
    sim.schedule_faults(parse_schedule("20 crash LM\n20 recover LM\n").unwrap());
    sim.run_until(None).unwrap();
    assert!(!sim.is_crashed(Role::Lm));
    assert_eq!(sim.node(Role::Lm).unwrap().got.len(), 1);
}

#[test]
fn crashed_sender_loses_its_held_frames() {
    let mut sim = pair(10, LinkSpec::new(5.0, 1.0), 0);
    sim.node_mut(Role::Tr).unwrap().burst_at = 100;
    sim.schedule_faults(parse_schedule("50 partition TR-LM\n200 crash TR\n300 heal\n").unwrap());
    sim.run_until(None).unwrap();
    let st = sim.stats();
    assert_eq!((st.sent, st.delivered, st.dropped), (10, 0, 10));
}

#[test]
fn livelock_guard_trips_on_endless_ping_pong() {
    let mut a = Probe::new(Role::Tr);
    a.peer = Some(Role::Lm);
    a.burst = 1;
    a.echo = true;
    let mut b = Probe::new(Role::Lm);
    b.echo = true;
    let mut sim = Simulator::new(vec![a, b], SimConfig { max_events: 1000, ..Default::default() });
    assert_eq!(sim.run_until(None), Err(SimError::LivelockGuard(1000)));
}

fn three_node_run(seed: u64) -> (String, u64) {
    let mut nodes = Vec::new();
    for (r, p) in [(Role::Tr, Role::Lm), (Role::Lm, Role::Lc), (Role::Lc, Role::Tr)] {
        let mut n = Probe::new(r);
        n.peer = Some(p);
        n.burst = 7;
        n.heartbeat_ms = Some(200);
        n.echo = r == Role::Lc;
        nodes.push(n);
    }
    let mut sim = Simulator::new(nodes, SimConfig { seed, ..Default::default() });
    sim.set_all_links(LinkSpec { drop_prob: 0.2, ..LinkSpec::DEFAULT });
    sim.run_until(Some(ms(3000.0))).unwrap();
    (sim.trace_digest(), sim.stats().retransmissions)
}

#[test]
fn identical_seeds_give_identical_traces() {
    assert_eq!(three_node_run(9), three_node_run(9));
    assert_ne!(three_node_run(9).0, three_node_run(10).0);
}

#[test]
fn delivered_frames_keep_the_envelope() {
    struct Sink(Vec<Envelope>);
    impl SimNode for Sink {
        fn role(&self) -> Role {
            Role::Lc
        }
        fn on_start(&mut self, _: &mut Ctx) {}
        fn on_frame(&mut self, _: &mut Ctx, env: Envelope) {
            self.0.push(env);
        }
        fn on_timer(&mut self, _: &mut Ctx, _: u64) {}
    }
    struct Src;
    impl SimNode for Src {
        fn role(&self) -> Role {
            Role::Lm
        }
        fn on_start(&mut self, cx: &mut Ctx) {
            let p = Payload::GlobalUpdateStart(dslam_core::state::GlobalUpdateStart {
                writer: Role::Lm,
                epoch: 3,
                kind: dslam_core::kernel::GlobalKind::Gba,
            });
            cx.send(Role::Lc, Envelope::new(Topic::KfForward, Role::Lm, 0, 3, Target::Lc, &p)).unwrap();
            assert!(cx.send(Role::Lc, Envelope::new(Topic::KfNew, Role::Lm, 0, 3, Target::Lc, &p)).is_err());
        }
        fn on_frame(&mut self, _: &mut Ctx, _: Envelope) {}
        fn on_timer(&mut self, _: &mut Ctx, _: u64) {}
    }
    enum Either {
        A(Src),
        B(Sink),
    }
    impl SimNode for Either {
        fn role(&self) -> Role {
            match self {
                Either::A(n) => n.role(),
                Either::B(n) => n.role(),
            }
        }
        fn on_start(&mut self, cx: &mut Ctx) {
            match self {
                Either::A(n) => n.on_start(cx),
                Either::B(n) => n.on_start(cx),
            }
        }
        fn on_frame(&mut self, cx: &mut Ctx, env: Envelope) {
            match self {
                Either::A(n) => n.on_frame(cx, env),
                Either::B(n) => n.on_frame(cx, env),
            }
        }
        fn on_timer(&mut self, cx: &mut Ctx, t: u64) {
            match self {
                Either::A(n) => n.on_timer(cx, t),
                Either::B(n) => n.on_timer(cx, t),
            }
        }
    }
    let mut sim = Simulator::new(vec![Either::A(Src), Either::B(Sink(vec![]))], SimConfig::default());
    sim.run_until(None).unwrap();
    let Either::B(sink) = sim.node(Role::Lc).unwrap() else { unreachable!() };
    assert_eq!(sink.0.len(), 1);
    assert_eq!(sink.0[0].target, Target::Lc);
    assert_eq!(sink.0[0].pause_epoch, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lossy_link_delivers_every_frame_in_order(seed in any::<u64>()) {
        let mut sim = pair(100, LinkSpec { drop_prob: 0.1, ..LinkSpec::DEFAULT }, seed);
        sim.run_until(None).unwrap();
        let got: Vec<u32> = sim.node(Role::Lm).unwrap().got.iter().map(|g| g.2).collect();
        prop_assert_eq!(got, (0..100).collect::<Vec<_>>());
        prop_assert!(sim.stats().retransmissions > 0);
    }

    #[test]
    fn jittered_delivery_stays_within_bounds_and_fifo(seed in any::<u64>(), t_p in 0.0f64..20.0, jitter in 0.0f64..10.0) {
        let spec = LinkSpec { t_p_ms: t_p, t_proc_ms: 1.0, jitter_ms: jitter, drop_prob: 0.0 };
        let mut sim = pair(30, spec, seed);
        sim.run_until(None).unwrap();
        let got = &sim.node(Role::Lm).unwrap().got;
        prop_assert_eq!(got.len(), 30);
        let lo = ms((t_p + 1.0 - jitter).max(0.0));
        let hi = ms(t_p + 1.0 + jitter);
        for w in got.windows(2) {
            prop_assert!(w[0].0 <= w[1].0);
            prop_assert_eq!(w[0].2 + 1, w[1].2);
        }
        // FIFO can only push a frame later, up to the slowest earlier draw.
        prop_assert!(got.iter().all(|g| g.0 + 1 >= lo && g.0 <= hi + 1));
    }

    #[test]
    fn frames_are_conserved_under_faults(seed in any::<u64>(), crash_at in 0u64..400, heal_at in 0u64..800, stop in 100u64..1000) {
        let mut sim = pair(40, LinkSpec { drop_prob: 0.1, ..LinkSpec::DEFAULT }, seed);
        sim.node_mut(Role::Tr).unwrap().burst_at = 50;
        sim.schedule_faults(vec![
            FaultEvent { at_ms: 20, kind: FaultKind::Partition(vec![(Role::Tr, Role::Lm)]) },
            FaultEvent { at_ms: crash_at, kind: FaultKind::NodeCrash(Role::Tr) },
            FaultEvent { at_ms: heal_at, kind: FaultKind::Heal },
        ]);
        sim.run_until(Some(ms(stop as f64))).unwrap();
        let st = sim.stats();
        prop_assert_eq!(st.sent, st.delivered + st.dropped + sim.in_flight());
    }
}
