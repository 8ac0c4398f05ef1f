//! Priority-aware flow monitoring.
//!
//! Operator-designated flows are counted exactly in a [`priority::PriorityTable`].
//! Everything else goes through a hash-indexed [`heavy::HeavyTable`] of elephant
//! candidates; traffic it cannot hold spills into a [`linear::LinearCounter`]
//! for distinct-flow estimation and a three-layer [`cms::CmsLayers`] sketch.
//! [`pipeline::Pipeline`] wires them together and reconstructs per-flow
//! statistics. [`trace`] and [`eval`] provide packet sources, exact ground
//! truth and accuracy metrics.

pub mod bench;
pub mod cms;
pub mod config;
pub mod error;
pub mod eval;
pub mod flow;
pub mod hash;
pub mod heavy;
pub mod linear;
pub mod pipeline;
pub mod priority;
pub mod trace;

pub use config::{CompatFlags, PipelineConfig};
pub use error::{ConfigError, FlowError, LineError, PriorityError, Saturated, TraceError};
pub use eval::{compute_metrics, oracle, GroundTruth, MetricsReport, Observed};
pub use flow::{FlowCounts, FlowKey, PacketRecord, TcpFlags, TcpTrackState};
pub use pipeline::{CardinalityEstimate, FlowReport, Pipeline, PipelineStats, ReportSource};
