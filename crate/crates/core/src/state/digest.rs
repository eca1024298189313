//! Canonical serialization of the promoted state and its digest.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::StateDigest;
use crate::ids::MapId;
use crate::kernel::Map;

/// Fixed-width decimal of `v` rounded to 1e-9.
fn fixed(out: &mut String, v: f64) {
    let scaled = (v * 1e9).round();
    let n = if scaled.is_finite() { scaled as i64 } else { i64::MIN };
    let _ = write!(out, "{n:+020};");
}

/// Canonical byte stream: maps by id, then keyframes and map points by id.
/// Versions, dirty flags and derived covisibility are excluded.
pub fn canonical_bytes(maps: &BTreeMap<MapId, Map>) -> Vec<u8> {
    let mut s = String::new();
    for (id, m) in maps {
        let _ = writeln!(s, "M {id} origin={} init={}", m.origin_kf, m.initialized_optimized as u8);
        for (kid, kf) in &m.keyframes {
            let _ = write!(s, "K {kid} ");
            fixed(&mut s, kf.pose.x);
            fixed(&mut s, kf.pose.y);
            fixed(&mut s, kf.pose.theta);
            fixed(&mut s, kf.timestamp);
            let _ = write!(s, "ref={}", kf.ref_point_count);
            for (mp, o) in &kf.observations {
                let _ = write!(s, " {mp}:{}:", o.landmark_id);
                fixed(&mut s, o.range);
                fixed(&mut s, o.bearing);
            }
            s.push('\n');
        }
        for (pid, mp) in &m.map_points {
            let _ = write!(s, "P {pid} ");
            fixed(&mut s, mp.position.x);
            fixed(&mut s, mp.position.y);
            let _ = writeln!(s, "lm={} birth={}", mp.origin_landmark, mp.birth);
        }
    }
    s.into_bytes()
}

pub(super) fn digest(maps: &BTreeMap<MapId, Map>) -> StateDigest {
    let hash = Sha256::digest(canonical_bytes(maps));
    let mut hex = String::with_capacity(32);
    for b in &hash[..16] {
        let _ = write!(hex, "{b:02x}");
    }
    StateDigest(hex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_width_rounding() {
        let mut s = String::new();
        fixed(&mut s, 1.0);
        fixed(&mut s, -0.0000000004);
        assert_eq!(s, "+0000000001000000000;+0000000000000000000;");
    }

    #[test]
    fn empty_state_digest_is_hash_of_empty_stream() {
        let d = digest(&BTreeMap::new());
        assert_eq!(d.0.len(), 32);
        assert_eq!(d.0, "e3b0c44298fc1c149afbf4c8996fb924");
    }
}
