//! Framewise metrics, clustering, assignment and the two evaluation
//! protocols (unsupervised discovery and zero-shot localization).

mod hungarian;
mod kmeans;
mod metrics;
mod protocol;

pub use hungarian::{assignment_cost, hungarian};
pub use kmeans::{keep_top_fraction, kmeans, Clustering};
pub use metrics::{framewise_metrics, identity_map, FrameCounts, Metrics};
pub use protocol::{
    random_segment_baseline, unsupervised_protocol, zero_shot_protocol, Localization, MetricsReport, ProtocolConfig,
    Support,
};
