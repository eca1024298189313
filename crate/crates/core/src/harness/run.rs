//! Centralized and distributed runs over a generated scenario.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::comm::PayloadKind;
use crate::distribution::{EventLog, FrameInput, Node, NodeConfig, NodeStats};
use crate::ids::Role;
use crate::sim::{
    ms, parse_schedule, to_ms, Ctx, Dest, Direction, FaultEvent, FaultParseError, LinkSpec, SimConfig, SimError,
    SimNode, SimTime, Simulator, TimerClass, TrafficAccount,
};
use crate::state::StateDigest;

use super::kv::{parse_kv, KvError};
use super::report::MetricsReport;
use super::scenario::Scenario;
use super::trajectory::{evaluate_ate, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("topology must contain TR")]
    NoTracker,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Template for every node; the role is filled in per node.
    pub node: NodeConfig,
    /// Virtual time of the first frame, leaving room for discovery.
    pub input_start_ms: f64,
    /// Digest sampling period after the input ends.
    pub sample_ms: f64,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { node: NodeConfig::new(Role::Tr), input_start_ms: 500.0, sample_ms: 10.0, sim: SimConfig::default() }
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error(transparent)]
    Syntax(#[from] KvError),
    #[error(transparent)]
    Fault(#[from] FaultParseError),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub roles: Vec<Role>,
    pub default_link: LinkSpec,
    /// Per undirected link; applied to both directions.
    pub links: BTreeMap<(Role, Role), LinkSpec>,
    pub faults: Vec<FaultEvent>,
    /// Remaining keys, meant for the node configuration.
    pub extra: Vec<(String, String)>,
}

impl Topology {
    pub fn new(roles: &[Role]) -> Self {
        Self {
            roles: roles.to_vec(),
            default_link: LinkSpec::DEFAULT,
            links: BTreeMap::new(),
            faults: Vec::new(),
            extra: Vec::new(),
        }
    }

    pub fn three_node() -> Self {
        Self::new(&Role::ALL)
    }

    pub fn with_links(mut self, spec: LinkSpec) -> Self {
        self.default_link = spec;
        self
    }

    pub fn with_faults(mut self, faults: Vec<FaultEvent>) -> Self {
        self.faults = faults;
        self
    }

    pub fn link(&self, a: Role, b: Role) -> LinkSpec {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.links.get(&key).copied().unwrap_or(self.default_link)
    }

    /// ```text
    /// nodes = TR LM LC
    /// default_link = 5 1 2 0        # t_p t_proc jitter drop
    /// link = TR-LM 20 1 0 0.1
    /// fault = 30000 crash LM
    /// ```
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut t = Self::three_node();
        let mut faults = String::new();
        for (k, v) in parse_kv(text)? {
            let bad = || TopologyError::BadValue { key: k.clone(), value: v.clone() };
            let spec = |s: &str| -> Result<LinkSpec, TopologyError> {
                let n: Vec<f64> =
                    s.split_whitespace().map(|w| w.parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
                match n[..] {
                    [t_p_ms, t_proc_ms] => Ok(LinkSpec::new(t_p_ms, t_proc_ms)),
                    [t_p_ms, t_proc_ms, jitter_ms] => Ok(LinkSpec { t_p_ms, t_proc_ms, jitter_ms, drop_prob: 0.0 }),
                    [t_p_ms, t_proc_ms, jitter_ms, drop_prob] => {
                        Ok(LinkSpec { t_p_ms, t_proc_ms, jitter_ms, drop_prob })
                    }
                    _ => Err(bad()),
                }
            };
            match k.as_str() {
                "nodes" => {
                    t.roles = v.split_whitespace().map(|w| w.parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
                }
                "default_link" => t.default_link = spec(&v)?,
                "link" => {
                    let (name, rest) = v.split_once(char::is_whitespace).ok_or_else(bad)?;
                    let (a, b) = name.split_once('-').ok_or_else(bad)?;
                    let (a, b): (Role, Role) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                    t.links.insert(if a <= b { (a, b) } else { (b, a) }, spec(rest)?);
                }
                "fault" => {
                    faults.push_str(&v);
                    faults.push('\n');
                }
                _ => t.extra.push((k, v)),
            }
        }
        t.faults = parse_schedule(&faults)?;
        Ok(t)
    }
}

#[derive(Debug, Clone)]
pub struct NodeResult {
    pub role: Role,
    pub digest: StateDigest,
    pub trajectory: TrajectoryRecord,
    pub log: EventLog,
    pub maps: usize,
    pub stats: NodeStats,
    pub crashed: bool,
}

impl NodeResult {
    fn of(node: &Node, crashed: bool) -> Self {
        Self {
            role: node.role(),
            digest: node.state().canonical_digest(),
            trajectory: TrajectoryRecord::new(node.keyframe_trajectory()),
            log: node.log().clone(),
            maps: node.state().maps().len(),
            stats: node.stats(),
            crashed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub nodes: Vec<NodeResult>,
    pub traffic: TrafficAccount,
    pub metrics: MetricsReport,
    /// Virtual time at which the last frame was due.
    pub input_end: SimTime,
    pub end: SimTime,
}

impl RunOutput {
    pub fn node(&self, role: Role) -> Option<&NodeResult> {
        self.nodes.iter().find(|n| n.role == role)
    }

    pub fn tracker(&self) -> &NodeResult {
        self.node(Role::Tr).expect("every run has a tracker")
    }
}

fn input(scenario: &Scenario, cfg: &RunConfig) -> FrameInput {
    FrameInput { frames: scenario.frames.clone(), start: ms(cfg.input_start_ms) }
}

fn input_end(scenario: &Scenario, cfg: &RunConfig) -> SimTime {
    let f = &scenario.frames;
    ms(cfg.input_start_ms) + ms((f[f.len() - 1].timestamp - f[0].timestamp) * 1000.0)
}

fn input_duration_s(scenario: &Scenario) -> f64 {
    scenario.frames.len() as f64 / super::scenario::FRAME_RATE_HZ
}

fn node_config(cfg: &RunConfig, role: Role) -> NodeConfig {
    let mut c = cfg.node.clone();
    c.role = role;
    c
}

fn metrics(
    scenario: &Scenario,
    nodes: &[NodeResult],
    traffic: &TrafficAccount,
    consistency: Option<f64>,
) -> MetricsReport {
    let tr = nodes.iter().find(|n| n.role == Role::Tr).expect("tracker present");
    let duration = input_duration_s(scenario);
    let per_s = |x: u64| x as f64 / duration;
    let bw = |r: Role| traffic.node_bytes(r) as f64 * 8.0 / 1e6 / duration;
    let map_in = traffic.count(Role::Tr, Direction::In, PayloadKind::MapBatch);
    MetricsReport {
        scenario: scenario.spec.name().to_string(),
        nodes: nodes.len(),
        rms_ate: evaluate_ate(&tr.trajectory, &scenario.ground_truth, true).ok(),
        failures: tr.log.failures(),
        bw_mbps: Role::ALL.map(bw),
        kf_hz: per_s(tr.log.keyframe_times().len() as u64),
        map_hz: per_s(map_in),
        digests: nodes.iter().map(|n| (n.role, n.digest.clone())).collect(),
        consistency_s: consistency,
        diverged: consistency.is_none(),
    }
}

/// Drives a lone node until only background timers remain and it is idle.
pub fn drive_alone(node: &mut Node) -> SimTime {
    let mut queue: BTreeMap<(SimTime, u8, u64), (u64, TimerClass)> = BTreeMap::new();
    let mut next_id = 0u64;
    let mut foreground = 0usize;
    let mut now: SimTime = 0;
    let mut absorb = |cx: Ctx, queue: &mut BTreeMap<_, _>, foreground: &mut usize| {
        let fx = cx.into_effects();
        debug_assert!(fx.sends.iter().all(|(d, _)| *d == Dest::Broadcast), "a lone node has nobody to address");
        for (at, tok, class) in fx.timers {
            if class != TimerClass::Background {
                *foreground += 1;
            }
            queue.insert((at, class.rank(), next_id), (tok, class));
            next_id += 1;
        }
    };
    let mut cx = Ctx::new(0, node.role());
    node.on_start(&mut cx);
    absorb(cx, &mut queue, &mut foreground);
    while foreground > 0 || !node.is_idle() {
        let Some(((at, _, _), (tok, class))) = queue.pop_first() else { break };
        if class != TimerClass::Background {
            foreground -= 1;
        }
        now = at;
        let mut cx = Ctx::new(now, node.role());
        node.on_timer(&mut cx, tok);
        absorb(cx, &mut queue, &mut foreground);
    }
    now
}

/// The whole pipeline on one node with no peers.
pub fn run_centralized(scenario: &Scenario, cfg: &RunConfig) -> RunOutput {
    let mut node = Node::tracker(node_config(cfg, Role::Tr), input(scenario, cfg));
    let end = drive_alone(&mut node);
    let nodes = vec![NodeResult::of(&node, false)];
    let traffic = TrafficAccount::new();
    let metrics = metrics(scenario, &nodes, &traffic, Some(0.0));
    RunOutput { nodes, traffic, metrics, input_end: input_end(scenario, cfg), end }
}

fn digests_agree(sim: &Simulator<Node>) -> bool {
    let mut live = sim.nodes().filter(|n| !sim.is_crashed(n.role()));
    let Some(first) = live.next() else { return true };
    let d = first.state().canonical_digest();
    live.all(|n| n.state().canonical_digest() == d)
}

/// Discovery, then frames into TR, then the network runs to quiescence.
/// Digests are sampled after the input ends to find the consistency time.
pub fn run_distributed(scenario: &Scenario, topology: &Topology, cfg: &RunConfig) -> Result<RunOutput, RunError> {
    if !topology.roles.contains(&Role::Tr) {
        return Err(RunError::NoTracker);
    }
    let nodes: Vec<Node> = topology
        .roles
        .iter()
        .map(|&r| match r {
            Role::Tr => Node::tracker(node_config(cfg, r), input(scenario, cfg)),
            _ => Node::new(node_config(cfg, r)),
        })
        .collect();
    let mut sim = Simulator::new(nodes, cfg.sim.clone());
    for &a in &topology.roles {
        for &b in &topology.roles {
            if a != b {
                sim.set_link(a, b, topology.link(a, b));
            }
        }
    }
    sim.schedule_faults(topology.faults.iter().cloned());
    let end_in = input_end(scenario, cfg);
    sim.run_until(Some(end_in))?;
    let mut consistency = None;
    loop {
        if consistency.is_none() && digests_agree(&sim) {
            consistency = Some(to_ms(sim.now() - end_in) / 1000.0);
        }
        if consistency.is_some() || sim.quiescent() {
            break;
        }
        let t = sim.now() + ms(cfg.sample_ms);
        sim.run_until(Some(t))?;
    }
    let end = sim.run_until(None)?;
    if !digests_agree(&sim) {
        consistency = None;
    }
    let results: Vec<NodeResult> = sim.nodes().map(|n| NodeResult::of(n, sim.is_crashed(n.role()))).collect();
    let traffic = sim.traffic().clone();
    let metrics = metrics(scenario, &results, &traffic, consistency);
    Ok(RunOutput { nodes: results, traffic, metrics, input_end: end_in, end })
}
