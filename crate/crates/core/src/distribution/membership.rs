//! Discovery set maintenance and the heartbeat failure detector.
//!
//! A peer is heard through its discovery announcement or any heartbeat. It is
//! declared departed once `misses` heartbeat intervals pass after the send time
//! of its newest heartbeat, so detection never lags the peer's last sign of
//! life by more than that window.

use std::collections::BTreeMap;

use crate::ids::Role;
use crate::sim::SimTime;

use super::policy::DiscoverySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberChange {
    None,
    Joined,
    /// Known peer announced a new session (it restarted).
    Rejoined,
}

#[derive(Debug, Clone)]
pub struct Membership {
    g: DiscoverySet,
    sessions: BTreeMap<Role, u64>,
    /// Send time of the newest heartbeat (or arrival time of the announcement).
    last_sign: BTreeMap<Role, SimTime>,
    window: SimTime,
}

impl Membership {
    pub fn new(window: SimTime) -> Self {
        Self { g: DiscoverySet::new(), sessions: BTreeMap::new(), last_sign: BTreeMap::new(), window }
    }

    pub fn members(&self) -> &DiscoverySet {
        &self.g
    }

    pub fn window(&self) -> SimTime {
        self.window
    }

    pub fn on_announce(&mut self, peer: Role, session: u64, now: SimTime) -> MemberChange {
        let prev = self.sessions.insert(peer, session);
        let s = self.last_sign.entry(peer).or_insert(now);
        *s = (*s).max(now);
        if self.g.insert(peer) {
            MemberChange::Joined
        } else if prev != Some(session) {
            MemberChange::Rejoined
        } else {
            MemberChange::None
        }
    }

    /// Heartbeats older than the window are stale (released after a partition)
    /// and neither refresh nor re-admit a peer.
    pub fn on_heartbeat(&mut self, peer: Role, sent_at: SimTime, now: SimTime) -> MemberChange {
        if sent_at + self.window <= now {
            return MemberChange::None;
        }
        let s = self.last_sign.entry(peer).or_insert(sent_at);
        *s = (*s).max(sent_at);
        if self.g.insert(peer) {
            MemberChange::Joined
        } else {
            MemberChange::None
        }
    }

    /// When `peer` will be declared departed unless heard from again.
    pub fn deadline(&self, peer: Role) -> Option<SimTime> {
        self.g.contains(peer).then(|| self.last_sign.get(&peer).copied().unwrap_or(0) + self.window)
    }

    /// Removes `peer` if its deadline has passed. Returns true when it departed.
    pub fn expire(&mut self, peer: Role, now: SimTime) -> bool {
        match self.deadline(peer) {
            Some(d) if now >= d => {
                self.g.remove(peer);
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ms;

    #[test]
    fn join_then_silence_departs_after_window() {
        let mut m = Membership::new(ms(600.0));
        assert_eq!(m.on_announce(Role::Lm, 1, 0), MemberChange::Joined);
        assert_eq!(m.on_announce(Role::Lm, 1, 10), MemberChange::None);
        assert_eq!(m.on_heartbeat(Role::Lm, ms(200.0), ms(206.0)), MemberChange::None);
        assert_eq!(m.deadline(Role::Lm), Some(ms(800.0)));
        assert!(!m.expire(Role::Lm, ms(799.0)));
        assert!(m.expire(Role::Lm, ms(800.0)));
        assert!(m.members().is_empty());
        assert_eq!(m.deadline(Role::Lm), None);
    }

    #[test]
    fn stale_heartbeats_do_not_readmit() {
        let mut m = Membership::new(ms(600.0));
        assert_eq!(m.on_heartbeat(Role::Lc, 0, ms(600.0)), MemberChange::None);
        assert!(m.members().is_empty());
        assert_eq!(m.on_heartbeat(Role::Lc, ms(100.0), ms(600.0)), MemberChange::Joined);
    }

    #[test]
    fn new_session_is_a_rejoin() {
        let mut m = Membership::new(ms(600.0));
        m.on_announce(Role::Tr, 1, 0);
        assert_eq!(m.on_announce(Role::Tr, 2, 5), MemberChange::Rejoined);
    }
}
