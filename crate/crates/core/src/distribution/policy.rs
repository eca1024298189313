//! Which modules a node runs locally and where it sends the rest.

use std::collections::BTreeSet;
use std::fmt;

use crate::ids::Role;

/// Peers currently known to be alive, excluding the node itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DiscoverySet(BTreeSet<Role>);

impl DiscoverySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, r: Role) -> bool {
        self.0.contains(&r)
    }

    pub fn insert(&mut self, r: Role) -> bool {
        self.0.insert(r)
    }

    pub fn remove(&mut self, r: Role) -> bool {
        self.0.remove(&r)
    }

    pub fn iter(&self) -> impl Iterator<Item = Role> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<Role> for DiscoverySet {
    fn from_iter<I: IntoIterator<Item = Role>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Display for DiscoverySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|r| r.name()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Where a module's work happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    Local,
    Remote(Role),
}

impl Route {
    pub fn is_local(self) -> bool {
        self == Route::Local
    }
}

/// Routing of the local-mapping and loop-closing modules for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DistributionDecision {
    pub lm: Route,
    pub lc: Route,
}

impl DistributionDecision {
    pub const ALL_LOCAL: DistributionDecision = DistributionDecision { lm: Route::Local, lc: Route::Local };
}

impl fmt::Display for DistributionDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |x: Route| match x {
            Route::Local => "local".to_string(),
            Route::Remote(p) => p.name().to_string(),
        };
        write!(f, "lm={} lc={}", r(self.lm), r(self.lc))
    }
}

/// Offloads every module whose host is present.
///
/// A tracking node hands its keyframes to LM when it can. Loop-closing work goes
/// to LC; without an LC it goes to LM, which then runs both. A mapping node keeps
/// local mapping and forwards to LC when present. LC always works locally.
pub fn decide(own: Role, g: &DiscoverySet) -> DistributionDecision {
    let lm_here = g.contains(Role::Lm);
    let lc_here = g.contains(Role::Lc);
    match own {
        Role::Tr => match (lm_here, lc_here) {
            (true, true) => DistributionDecision { lm: Route::Remote(Role::Lm), lc: Route::Remote(Role::Lc) },
            (true, false) => DistributionDecision { lm: Route::Remote(Role::Lm), lc: Route::Remote(Role::Lm) },
            (false, true) => DistributionDecision { lm: Route::Local, lc: Route::Remote(Role::Lc) },
            (false, false) => DistributionDecision::ALL_LOCAL,
        },
        Role::Lm => {
            DistributionDecision { lm: Route::Local, lc: if lc_here { Route::Remote(Role::Lc) } else { Route::Local } }
        }
        Role::Lc => DistributionDecision::ALL_LOCAL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_tracker_keeps_everything() {
        assert_eq!(decide(Role::Tr, &DiscoverySet::new()), DistributionDecision::ALL_LOCAL);
    }

    #[test]
    fn display_is_compact() {
        let g: DiscoverySet = [Role::Lc, Role::Lm].into_iter().collect();
        assert_eq!(g.to_string(), "{LM,LC}");
        assert_eq!(decide(Role::Tr, &g).to_string(), "lm=LM lc=LC");
    }
}
