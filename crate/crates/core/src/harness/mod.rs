//! Scenarios, centralized and distributed runs, trajectory evaluation and reports.

pub mod kv;
pub mod report;
pub mod run;
pub mod scenario;
pub mod trajectory;

pub use kv::{parse_kv, KvError};
pub use report::{to_csv, MetricsReport, CSV_HEADER};
pub use run::{
    drive_alone, run_centralized, run_distributed, NodeResult, RunConfig, RunError, RunOutput, Topology, TopologyError,
};
pub use scenario::{
    generate, ground_truth_poses, Noise, Scenario, ScenarioError, ScenarioSpec, TrajectoryKind, FRAME_RATE_HZ,
};
pub use trajectory::{evaluate_ate, AteError, TrajectoryError, TrajectoryRecord, ASSOCIATION_WINDOW_S};
