//! Browser bindings for the monitoring pipeline.
//!
//! Two operations back the demo page: `simulate` replays a synthetic trace and
//! returns top-k estimates against ground truth plus a map of heavy-table
//! slots, and `cardinality_curve` sweeps the distinct-flow count to compare the
//! linear counter with the combined estimate. Both return JSON strings.

use std::collections::HashSet;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use psketch::trace::{generate, SynthConfig};
use psketch::{
    compute_metrics, CompatFlags, FlowKey, MetricsReport, Observed, Pipeline, PipelineConfig,
    PipelineStats, ReportSource,
};

/// Upper bound on synthetic packets per call, to keep the page responsive.
pub const MAX_PACKETS: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub flows: usize,
    pub packets: u64,
    pub zipf: f64,
    pub retrans_rate: f64,
    pub heavy_size: usize,
    pub vote_threshold: u64,
    pub k: usize,
    pub priority_flows: usize,
    pub seed: u64,
    pub literal: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            flows: 2000,
            packets: 200_000,
            zipf: 1.0,
            retrans_rate: 0.01,
            heavy_size: 1024,
            vote_threshold: 8,
            k: 20,
            priority_flows: 5,
            seed: 42,
            literal: false,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TopEntry {
    pub key: String,
    pub estimated: u64,
    pub truth: u64,
    pub retrans_estimated: u64,
    pub retrans_truth: u64,
    pub kicked: bool,
    pub in_true_topk: bool,
}

#[derive(Debug, Serialize)]
pub struct PriorityEntry {
    pub key: String,
    pub packets: u64,
    pub truth: u64,
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub packets: usize,
    pub distinct_flows: usize,
    pub stats: PipelineStats,
    pub topk: Vec<TopEntry>,
    pub priority: Vec<PriorityEntry>,
    pub metrics: MetricsReport,
    /// Per heavy slot: 0 empty, 1 occupied, 2 occupied after an eviction,
    /// 3 holds a reported top-k flow.
    pub slots: Vec<u8>,
    pub cardinality_sketch: Option<f64>,
    pub cardinality_combined: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub flows: usize,
    pub sketch_path: Option<f64>,
    pub combined: Option<f64>,
    pub error: Option<f64>,
}

fn key_label(k: &FlowKey) -> String {
    let proto = match k.protocol {
        6 => "tcp",
        17 => "udp",
        _ => "?",
    };
    format!(
        "{}:{} > {}:{} {proto}",
        k.src_ip, k.src_port, k.dst_ip, k.dst_port
    )
}

fn check(params: &SimParams) -> Result<(), String> {
    if params.packets > MAX_PACKETS {
        return Err(format!("at most {MAX_PACKETS} packets per run"));
    }
    if params.k == 0 {
        return Err("k must be at least 1".into());
    }
    if params.heavy_size == 0 || params.heavy_size > 1 << 20 {
        return Err("heavy table size must be between 1 and 1048576".into());
    }
    if params.vote_threshold == 0 {
        return Err("vote threshold must be at least 1".into());
    }
    Ok(())
}

pub fn run_simulation(params: &SimParams) -> Result<Simulation, String> {
    check(params)?;
    let synth = generate(&SynthConfig {
        flow_count: params.flows,
        total_packets: params.packets,
        zipf_alpha: params.zipf,
        retrans_rate: params.retrans_rate,
        rng_seed: params.seed,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let truth = &synth.truth;

    let flags = if params.literal {
        CompatFlags {
            alg1_literal_update: true,
            alg1_literal_cms: true,
            alg1_literal_routing: true,
            reset_votes_on_match: false,
        }
    } else {
        CompatFlags::default()
    };
    let mut pipeline = Pipeline::new(PipelineConfig {
        heavy_table_size: params.heavy_size,
        vote_threshold: params.vote_threshold,
        flags,
        ..PipelineConfig::default()
    })
    .map_err(|e| e.to_string())?;

    // Priority flows sit just below the reported top-k.
    let priority_keys: Vec<FlowKey> = truth
        .top_k(params.k + params.priority_flows, &HashSet::new())
        .into_iter()
        .skip(params.k)
        .map(|(key, _)| key)
        .collect();
    for key in &priority_keys {
        pipeline
            .register_priority(*key)
            .map_err(|e| e.to_string())?;
    }
    pipeline.process_all(&synth.trace.packets);

    let topk = pipeline.top_k(params.k);
    let priority = pipeline.priority_reports();
    let cardinality = pipeline.cardinality_estimate().ok();
    let metrics = compute_metrics(
        &Observed {
            topk: &topk,
            priority: &priority,
            combined_cardinality: cardinality.map(|c| c.combined),
            throughput_pps: 0.0,
        },
        truth,
        params.k,
    );

    let exclude: HashSet<FlowKey> = priority_keys.iter().copied().collect();
    let true_top: HashSet<FlowKey> = truth
        .top_k(params.k, &exclude)
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let reported: HashSet<FlowKey> = topk.iter().map(|r| r.key).collect();
    let slots = pipeline
        .heavy()
        .slots()
        .iter()
        .map(|e| match (e.occupied, e.kick_flag) {
            (false, _) => 0,
            _ if reported.contains(&e.key) => 3,
            (true, false) => 1,
            (true, true) => 2,
        })
        .collect();

    Ok(Simulation {
        packets: synth.trace.packets.len(),
        distinct_flows: truth.distinct_flows,
        stats: *pipeline.stats(),
        topk: topk
            .iter()
            .map(|r| {
                let t = truth.get(&r.key);
                TopEntry {
                    key: key_label(&r.key),
                    estimated: r.packet_count,
                    truth: t.packet_count,
                    retrans_estimated: r.retrans_count,
                    retrans_truth: t.retrans_count,
                    kicked: r.source == ReportSource::HeavyCms,
                    in_true_topk: true_top.contains(&r.key),
                }
            })
            .collect(),
        priority: priority
            .iter()
            .map(|r| PriorityEntry {
                key: key_label(&r.key),
                packets: r.packet_count,
                truth: truth.get(&r.key).packet_count,
            })
            .collect(),
        metrics,
        slots,
        cardinality_sketch: cardinality.map(|c| c.sketch_path),
        cardinality_combined: cardinality.map(|c| c.combined),
    })
}

/// Sweeps `steps` evenly spaced flow counts up to `max_flows`, three packets
/// per flow, and estimates each with a fresh pipeline.
pub fn run_cardinality_curve(
    max_flows: usize,
    steps: usize,
    lc_size: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, String> {
    if steps == 0 || steps > 64 {
        return Err("steps must be between 1 and 64".into());
    }
    if max_flows == 0 || 3 * max_flows as u64 > MAX_PACKETS {
        return Err(format!(
            "flow count must be between 1 and {}",
            MAX_PACKETS / 3
        ));
    }
    if lc_size == 0 || lc_size > 1 << 24 {
        return Err("linear counter size must be between 1 and 16777216".into());
    }
    let config = PipelineConfig {
        lc_size,
        ..PipelineConfig::default()
    };
    (1..=steps)
        .map(|i| {
            let flows = (max_flows * i / steps).max(1);
            let synth = generate(&SynthConfig {
                flow_count: flows,
                total_packets: 3 * flows as u64,
                rng_seed: seed.wrapping_add(i as u64),
                ..SynthConfig::default()
            })
            .map_err(|e| e.to_string())?;
            let mut pipeline = Pipeline::new(config.clone()).map_err(|e| e.to_string())?;
            pipeline.process_all(&synth.trace.packets);
            let est = pipeline.cardinality_estimate().ok();
            let truth = synth.truth.distinct_flows as f64;
            Ok(CurvePoint {
                flows: synth.truth.distinct_flows,
                sketch_path: est.map(|c| c.sketch_path),
                combined: est.map(|c| c.combined),
                error: est.map(|c| (c.combined - truth).abs() / truth),
            })
        })
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    flows: usize,
    packets: u32,
    zipf: f64,
    retrans_rate: f64,
    heavy_size: usize,
    vote_threshold: u32,
    k: usize,
    priority_flows: usize,
    seed: u32,
    literal: bool,
) -> Result<String, JsError> {
    let params = SimParams {
        flows,
        packets: packets as u64,
        zipf,
        retrans_rate,
        heavy_size,
        vote_threshold: vote_threshold as u64,
        k,
        priority_flows,
        seed: seed as u64,
        literal,
    };
    let sim = run_simulation(&params).map_err(|e| JsError::new(&e))?;
    to_json(&sim)
}

#[wasm_bindgen]
pub fn cardinality_curve(
    max_flows: usize,
    steps: usize,
    lc_size: usize,
    seed: u32,
) -> Result<String, JsError> {
    let curve = run_cardinality_curve(max_flows, steps, lc_size, seed as u64)
        .map_err(|e| JsError::new(&e))?;
    to_json(&curve)
}
