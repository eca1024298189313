//! Per-node tunables.

use thiserror::Error;

use crate::ids::Role;
use crate::kernel::KernelParams;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub role: Role,
    pub t_lmfreq_ms: f64,
    pub local_batch_min: usize,
    pub local_batch_max: usize,
    pub local_batch_spacing_ms: f64,
    pub global_batch_size: usize,
    pub global_batch_spacing_ms: f64,
    pub heartbeat_ms: f64,
    pub heartbeat_misses: u32,
    /// Loop and merge detection on or off.
    pub loop_closing: bool,
    /// Keyframes LC must see after a global update before it looks for another.
    pub loop_min_gap_kfs: usize,
    pub kernel: KernelParams,
}

impl NodeConfig {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            t_lmfreq_ms: 250.0,
            local_batch_min: 3,
            local_batch_max: 15,
            local_batch_spacing_ms: 50.0,
            global_batch_size: 10,
            global_batch_spacing_ms: 100.0,
            heartbeat_ms: 200.0,
            heartbeat_misses: 3,
            loop_closing: true,
            loop_min_gap_kfs: 10,
            kernel: KernelParams::default(),
        }
    }

    /// Time after a peer's last heartbeat left it at which the peer is declared departed.
    pub fn departure_after_ms(&self) -> f64 {
        self.heartbeat_ms * self.heartbeat_misses as f64
    }

    /// Sets one key. Keys not owned by the node are rejected so callers can route them elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
        }
        let k = &mut self.kernel;
        match key {
            "role" => self.role = parse(key, value)?,
            "t_lmfreq_ms" => self.t_lmfreq_ms = parse(key, value)?,
            "local_batch_min" => self.local_batch_min = parse(key, value)?,
            "local_batch_max" => self.local_batch_max = parse(key, value)?,
            "local_batch_spacing_ms" => self.local_batch_spacing_ms = parse(key, value)?,
            "global_batch_size" => self.global_batch_size = parse(key, value)?,
            "global_batch_spacing_ms" => self.global_batch_spacing_ms = parse(key, value)?,
            "heartbeat_ms" => self.heartbeat_ms = parse(key, value)?,
            "heartbeat_misses" => self.heartbeat_misses = parse(key, value)?,
            "loop_closing" => self.loop_closing = parse(key, value)?,
            "loop_min_gap_kfs" => self.loop_min_gap_kfs = parse(key, value)?,
            "kf_min_gap_frames" => k.kf_min_gap_frames = parse(key, value)?,
            "kf_ref_ratio" => k.kf_ref_ratio = parse(key, value)?,
            "loop_tau" => k.loop_tau = parse(key, value)?,
            "track_window" => k.track_window = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_into_fields() {
        let mut c = NodeConfig::new(Role::Tr);
        c.set("role", "LM").unwrap();
        c.set("loop_tau", "0.5").unwrap();
        c.set("heartbeat_misses", "4").unwrap();
        assert_eq!(c.role, Role::Lm);
        assert_eq!(c.kernel.loop_tau, 0.5);
        assert_eq!(c.departure_after_ms(), 800.0);
        assert!(matches!(c.set("nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("track_window", "x"), Err(ConfigError::BadValue { .. })));
    }
}
