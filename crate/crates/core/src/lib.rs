//! Service call-graph embedding and anomaly detection.
//!
//! Minute-level traffic snapshots are embedded with a two-layer graph
//! convolutional autoencoder; services whose embedding drifts from a
//! reference are flagged, and fan-out ratios explain what changed.

pub mod gae;
pub mod graph;
pub mod inject;
pub mod kv;
pub mod linalg;
pub mod scoring;
pub mod sim;
pub mod telemetry;

pub use gae::{EmbeddingMatrix, Model, ModelConfig, ModelError, ModelParams};
pub use graph::{GraphInput, GraphSnapshot, NormalizedSnapshot, Profile, ServiceId, ServiceRegistry};
pub use inject::{EvalMetrics, GroundTruth, InjectionSpec};
pub use linalg::Matrix;
pub use scoring::{AnomalyReport, ReferenceEmbedding};
pub use telemetry::{Partition, SnapshotCorpus, TelemetryRecord};
