//! Run metrics and their CSV / text rendering.

use std::fmt::Write as _;

use crate::ids::Role;
use crate::state::StateDigest;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub nodes: usize,
    /// `None` when the estimate could not be associated with the ground truth.
    pub rms_ate: Option<f64>,
    pub failures: usize,
    /// TR, LM, LC; both directions, megabits per second of input time.
    pub bw_mbps: [f64; 3],
    pub kf_hz: f64,
    pub map_hz: f64,
    pub digests: Vec<(Role, StateDigest)>,
    /// Seconds after the input ended until every live node held the same digest.
    pub consistency_s: Option<f64>,
    pub diverged: bool,
}

pub const CSV_HEADER: &str =
    "scenario,nodes,ate_m,failures,bw_tr_mbps,bw_lm_mbps,bw_lc_mbps,kf_hz,map_hz,consistency_s,diverged";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.scenario,
            self.nodes,
            opt(self.rms_ate),
            self.failures,
            self.bw_mbps[0],
            self.bw_mbps[1],
            self.bw_mbps[2],
            self.kf_hz,
            self.map_hz,
            opt(self.consistency_s),
            self.diverged
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario     {} ({} node{})",
            self.scenario,
            self.nodes,
            if self.nodes == 1 { "" } else { "s" }
        );
        let _ =
            writeln!(s, "ate          {}", self.rms_ate.map(|a| format!("{a:.4} m")).unwrap_or_else(|| "n/a".into()));
        let _ = writeln!(s, "failures     {}", self.failures);
        let _ = writeln!(
            s,
            "bandwidth    TR {:.3}  LM {:.3}  LC {:.3} Mbps",
            self.bw_mbps[0], self.bw_mbps[1], self.bw_mbps[2]
        );
        let _ = writeln!(s, "frequency    kf {:.2} Hz  map {:.2} Hz", self.kf_hz, self.map_hz);
        match self.consistency_s {
            Some(c) if !self.diverged => {
                let _ = writeln!(s, "consistency  {c:.3} s");
            }
            _ => {
                let _ = writeln!(s, "consistency  DIVERGED");
            }
        }
        for (r, d) in &self.digests {
            let _ = writeln!(s, "digest {r}    {d}");
        }
        s
    }
}

pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Parses rows written by [`to_csv`]; digests are not part of the CSV.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsReport>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err("unexpected header".into());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 11 {
                return Err(format!("row {}: expected 11 columns", i + 1));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
            let of = |s: &str| if s.is_empty() { Ok(None) } else { f(s).map(Some) };
            Ok(MetricsReport {
                scenario: c[0].to_string(),
                nodes: c[1].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                rms_ate: of(c[2])?,
                failures: c[3].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                bw_mbps: [f(c[4])?, f(c[5])?, f(c[6])?],
                kf_hz: f(c[7])?,
                map_hz: f(c[8])?,
                digests: Vec::new(),
                consistency_s: of(c[9])?,
                diverged: c[10] == "true",
            })
        })
        .collect()
}
