//! Single-threaded pipeline throughput measurement.

use std::time::Instant;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::ConfigError;
use crate::flow::{FlowKey, PacketRecord};
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub packets: usize,
    /// Packets per second of each pass, in run order.
    pub passes_pps: Vec<f64>,
    pub best_pps: f64,
}

/// Replays `packets` through a fresh pipeline `passes` times.
pub fn measure(
    config: &PipelineConfig,
    priority: &[FlowKey],
    packets: &[PacketRecord],
    passes: usize,
) -> Result<BenchReport, ConfigError> {
    let mut passes_pps = Vec::with_capacity(passes);
    for _ in 0..passes {
        let mut pipeline = Pipeline::new(config.clone())?;
        for k in priority {
            // Capacity overflow only drops the extra keys from the exact path.
            let _ = pipeline.register_priority(*k);
        }
        let start = Instant::now();
        for p in packets {
            pipeline.process_packet(std::hint::black_box(p));
        }
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        std::hint::black_box(pipeline.stats());
        passes_pps.push(packets.len() as f64 / secs);
    }
    let best_pps = passes_pps.iter().copied().fold(0.0, f64::max);
    Ok(BenchReport {
        packets: packets.len(),
        passes_pps,
        best_pps,
    })
}
