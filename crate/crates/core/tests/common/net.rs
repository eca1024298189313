//! Networked runs whose nodes record every frame they receive.

use dslam_core::comm::{Envelope, PayloadKind, Topic};
use dslam_core::distribution::{FrameInput, Node, NodeConfig};
use dslam_core::harness::{RunConfig, Scenario};
use dslam_core::sim::{ms, Ctx, FaultEvent, LinkSpec, SimConfig, SimNode, SimTime, Simulator};
use dslam_core::Role;

/// A node that remembers every frame it received.
pub struct Rec {
    pub node: Node,
    pub got: Vec<(SimTime, Role, Topic, PayloadKind)>,
}

impl SimNode for Rec {
    fn role(&self) -> Role {
        self.node.role()
    }
    fn on_start(&mut self, cx: &mut Ctx) {
        self.node.on_start(cx)
    }
    fn on_frame(&mut self, cx: &mut Ctx, env: Envelope) {
        self.got.push((cx.now(), env.sender, env.topic, env.kind));
        self.node.on_frame(cx, env)
    }
    fn on_timer(&mut self, cx: &mut Ctx, token: u64) {
        self.node.on_timer(cx, token)
    }
    fn on_crash(&mut self) {
        self.node.on_crash()
    }
    fn on_recover(&mut self, cx: &mut Ctx) {
        self.node.on_recover(cx)
    }
    fn is_idle(&self) -> bool {
        self.node.is_idle()
    }
}

pub fn recorded_run(sc: &Scenario, link: LinkSpec, faults: Vec<FaultEvent>) -> Simulator<Rec> {
    let cfg = RunConfig::default();
    let nodes = Role::ALL
        .iter()
        .map(|&role| {
            let c = NodeConfig { role, ..cfg.node.clone() };
            let node = if role == Role::Tr {
                Node::tracker(c, FrameInput { frames: sc.frames.clone(), start: ms(cfg.input_start_ms) })
            } else {
                Node::new(c)
            };
            Rec { node, got: Vec::new() }
        })
        .collect();
    let mut sim = Simulator::new(nodes, SimConfig::default());
    sim.set_all_links(link);
    sim.schedule_faults(faults);
    sim.run_until(None).unwrap();
    sim
}
