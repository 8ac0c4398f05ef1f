//! JSON report shapes. Field order here is the order in the output.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use psketch::bench::BenchReport;
use psketch::cms::CMS_DEPTH;
use psketch::trace::SynthConfig;
use psketch::{CardinalityEstimate, FlowReport, MetricsReport, PipelineConfig, PipelineStats};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct FileIdentity {
    pub path: String,
    pub sha256: String,
}

impl FileIdentity {
    pub fn new(path: &Path, contents: &[u8]) -> Self {
        FileIdentity {
            path: path.display().to_string(),
            sha256: sha256_hex(contents),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TraceIdentity {
    pub path: String,
    pub sha256: String,
    pub packets: usize,
    pub skipped: u64,
    pub truncated_at: Option<u64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthIdentity {
    Oracle,
    Sidecar(FileIdentity),
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub heavy: u32,
    pub lc: u32,
    pub cms: [u32; CMS_DEPTH],
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: PipelineConfig,
    pub config_file: Option<FileIdentity>,
    pub trace: TraceIdentity,
    pub priority_file: Option<FileIdentity>,
    pub truth: Option<TruthIdentity>,
    pub k: usize,
    pub seeds: Seeds,
}

impl RunManifest {
    pub fn new(
        config: PipelineConfig,
        config_file: Option<FileIdentity>,
        trace: TraceIdentity,
        priority_file: Option<FileIdentity>,
        truth: Option<TruthIdentity>,
        k: usize,
    ) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seeds: Seeds {
                heavy: config.seed_heavy,
                lc: config.seed_lc,
                cms: config.seed_cms,
            },
            config,
            config_file,
            trace,
            priority_file,
            truth,
            k,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub pipeline_stats: PipelineStats,
    pub topk: Vec<FlowReport>,
    pub priority: Vec<FlowReport>,
    /// `null` when the linear counter saturated.
    pub cardinality: Option<CardinalityEstimate>,
    pub throughput_pps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Serialize)]
pub struct BenchOutput {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: PipelineConfig,
    pub config_file: Option<FileIdentity>,
    pub trace: Option<TraceIdentity>,
    pub synthetic: Option<SynthConfig>,
    pub priority_flows: usize,
    pub bench: BenchReport,
}
