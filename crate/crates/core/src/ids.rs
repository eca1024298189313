//! Identifiers shared by every layer: node roles, keyframes, map points and maps.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// The task a node performs. Exactly one per node process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    /// Tracking.
    Tr,
    /// Local mapping.
    Lm,
    /// Loop closing.
    Lc,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Tr, Role::Lm, Role::Lc];

    pub fn code(self) -> u8 {
        match self {
            Role::Tr => 1,
            Role::Lm => 2,
            Role::Lc => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        match code {
            1 => Some(Role::Tr),
            2 => Some(Role::Lm),
            3 => Some(Role::Lc),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Tr => "TR",
            Role::Lm => "LM",
            Role::Lc => "LC",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown role `{0}`")]
pub struct ParseRoleError(pub String);

impl FromStr for Role {
    type Err = ParseRoleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TR" => Ok(Role::Tr),
            "LM" => Ok(Role::Lm),
            "LC" => Ok(Role::Lc),
            _ => Err(ParseRoleError(s.to_string())),
        }
    }
}

/// Node-scoped keyframe identity, totally ordered by `(origin, seq)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyFrameId {
    pub origin: Role,
    pub seq: u64,
}

impl KeyFrameId {
    pub fn new(origin: Role, seq: u64) -> Self {
        Self { origin, seq }
    }
}

impl fmt::Display for KeyFrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.seq)
    }
}

/// Map identity `(origin node, counter)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MapId {
    pub origin: Role,
    pub counter: u64,
}

impl MapId {
    pub fn new(origin: Role, counter: u64) -> Self {
        Self { origin, counter }
    }
}

impl fmt::Display for MapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/map{}", self.origin, self.counter)
    }
}

/// Hashed map-point identifier, rendered as 16 lowercase hex characters.
///
/// Ordering on the raw value equals lexicographic ordering of the hex form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MapPointId(u64);

const COUNTER_BITS: u32 = 56;

impl MapPointId {
    /// Mints the id for the `counter`-th point created by `node`.
    ///
    /// The input word is `(role << 56) | counter` and the mixer is a bijection,
    /// so distinct `(node, counter)` pairs never collide while `counter < 2^56`.
    pub fn mint(node: Role, counter: u64) -> Self {
        debug_assert!(counter < (1u64 << COUNTER_BITS));
        let word = ((node.code() as u64) << COUNTER_BITS) | (counter & ((1u64 << COUNTER_BITS) - 1));
        MapPointId(mix64(word))
    }

    pub fn from_raw(raw: u64) -> Self {
        MapPointId(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for MapPointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid map point id `{0}`: expected 16 lowercase hex characters")]
pub struct ParseMapPointIdError(pub String);

impl FromStr for MapPointId {
    type Err = ParseMapPointIdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.len() == 16 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !ok {
            return Err(ParseMapPointIdError(s.to_string()));
        }
        u64::from_str_radix(s, 16).map(MapPointId).map_err(|_| ParseMapPointIdError(s.to_string()))
    }
}

/// splitmix64 finalizer; invertible on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn no_collisions_across_nodes_and_counters() {
        let mut seen = HashSet::new();
        for role in Role::ALL {
            for c in 0..50_000u64 {
                assert!(seen.insert(MapPointId::mint(role, c)));
            }
        }
    }

    #[test]
    fn hex_form_is_fixed_width_lowercase() {
        let id = MapPointId::mint(Role::Tr, 0);
        let s = id.to_string();
        assert_eq!(s.len(), 16);
        assert!(s.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        assert_eq!(MapPointId::mint(Role::Tr, 0), id, "minting is deterministic");
    }

    #[test]
    fn rejects_malformed_ids() {
        assert!("ABCDEF0123456789".parse::<MapPointId>().is_err());
        assert!("abc".parse::<MapPointId>().is_err());
        assert!("0123456789abcdeg".parse::<MapPointId>().is_err());
    }

    #[test]
    fn keyframe_ids_order_by_origin_then_seq() {
        let a = KeyFrameId::new(Role::Tr, 9);
        let b = KeyFrameId::new(Role::Lm, 0);
        let c = KeyFrameId::new(Role::Tr, 10);
        assert!(a < c && c < b);
    }

    proptest! {
        #[test]
        fn map_point_id_round_trips(raw in any::<u64>()) {
            let id = MapPointId::from_raw(raw);
            prop_assert_eq!(id.to_string().parse::<MapPointId>().unwrap(), id);
        }

        #[test]
        fn hex_order_matches_raw_order(a in any::<u64>(), b in any::<u64>()) {
            let (x, y) = (MapPointId::from_raw(a), MapPointId::from_raw(b));
            prop_assert_eq!(x.cmp(&y), x.to_string().cmp(&y.to_string()));
        }
    }
}
