//! Discovery, the distribution policy and the per-node pipelines.

pub mod config;
pub mod events;
pub mod membership;
pub mod node;
pub mod policy;
pub mod publisher;

pub use config::{ConfigError, NodeConfig};
pub use events::{Event, EventKind, EventLog, FailureCause};
pub use membership::{MemberChange, Membership};
pub use node::{FrameInput, Node, NodeStats};
pub use policy::{decide, DiscoverySet, DistributionDecision, Route};
pub use publisher::{LocalPublisher, Poll};
