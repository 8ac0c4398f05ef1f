//! Exact ground truth over a trace and accuracy metrics against pipeline output.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::LineError;
use crate::flow::{seq_before, FlowCounts, FlowKey, PacketRecord};
use crate::pipeline::FlowReport;
use crate::priority::parse_key_fields;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub per_flow: BTreeMap<FlowKey, FlowCounts>,
    pub distinct_flows: usize,
}

impl GroundTruth {
    pub fn get(&self, key: &FlowKey) -> FlowCounts {
        self.per_flow.get(key).copied().unwrap_or_default()
    }

    pub fn total_packets(&self) -> u64 {
        self.per_flow.values().map(|c| c.packet_count).sum()
    }

    pub fn total_retrans(&self) -> u64 {
        self.per_flow.values().map(|c| c.retrans_count).sum()
    }

    /// The `k` largest flows by packet count, ties to the smaller key
    /// encoding, skipping keys in `exclude`.
    pub fn top_k(&self, k: usize, exclude: &HashSet<FlowKey>) -> Vec<(FlowKey, FlowCounts)> {
        let mut flows: Vec<(FlowKey, FlowCounts)> = self
            .per_flow
            .iter()
            .filter(|(key, _)| !exclude.contains(key))
            .map(|(key, c)| (*key, *c))
            .collect();
        flows.sort_by(|a, b| {
            b.1.packet_count
                .cmp(&a.1.packet_count)
                .then_with(|| a.0.encode().cmp(&b.0.encode()))
        });
        flows.truncate(k);
        flows
    }

    /// Sidecar text: one `src_ip,dst_ip,src_port,dst_port,proto,packets,retrans`
    /// line per flow after `#` header comments.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::with_capacity(48 * self.per_flow.len() + 128);
        out.push_str("# psketch ground truth\n");
        let _ = writeln!(out, "# distinct_flows={}", self.distinct_flows);
        out.push_str("# src_ip,dst_ip,src_port,dst_port,proto,packets,retrans\n");
        for (k, c) in &self.per_flow {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                k.src_ip,
                k.dst_ip,
                k.src_port,
                k.dst_port,
                k.protocol,
                c.packet_count,
                c.retrans_count
            );
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self, LineError> {
        let mut per_flow = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let key = parse_key_fields(line, lineno)?;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(LineError::new(
                    lineno,
                    format!("expected 7 fields, found {}", fields.len()),
                ));
            }
            let count = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| LineError::new(lineno, format!("bad count {s:?}")))
            };
            let counts = FlowCounts::new(count(fields[5])?, count(fields[6])?);
            if per_flow.insert(key, counts).is_some() {
                return Err(LineError::new(lineno, format!("duplicate flow {key}")));
            }
        }
        Ok(GroundTruth {
            distinct_flows: per_flow.len(),
            per_flow,
        })
    }
}

/// Exact per-flow counts over `packets`.
///
/// A TCP packet is a retransmission when it occupies sequence space
/// (payload, SYN or FIN) that lies entirely at or below the highest
/// end sequence the flow has already sent. No timing is involved.
pub fn oracle<'a>(packets: impl IntoIterator<Item = &'a PacketRecord>) -> GroundTruth {
    let mut per_flow: BTreeMap<FlowKey, FlowCounts> = BTreeMap::new();
    let mut highest: HashMap<FlowKey, u32> = HashMap::new();
    for p in packets {
        let c = per_flow.entry(p.key).or_default();
        c.packet_count += 1;
        if !p.key.is_tcp() {
            continue;
        }
        let end = p.seq.wrapping_add(p.seq_len());
        match highest.get_mut(&p.key) {
            Some(high) => {
                if p.seq_len() > 0 && !seq_before(*high, end) {
                    c.retrans_count += 1;
                }
                if seq_before(*high, end) {
                    *high = end;
                }
            }
            None => {
                highest.insert(p.key, end);
            }
        }
    }
    GroundTruth {
        distinct_flows: per_flow.len(),
        per_flow,
    }
}

/// Pipeline output fed to [`compute_metrics`].
#[derive(Debug, Clone, Copy)]
pub struct Observed<'a> {
    pub topk: &'a [FlowReport],
    pub priority: &'a [FlowReport],
    /// `None` when the estimate is unavailable (saturated counter).
    pub combined_cardinality: Option<f64>,
    pub throughput_pps: f64,
}

/// Accuracy against ground truth. `None` marks a metric whose denominator set
/// is empty; it serializes as JSON `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub topk_detection_accuracy: f64,
    pub topk_packet_recall: Option<f64>,
    pub topk_retrans_recall: Option<f64>,
    pub priority_packet_recall: Option<f64>,
    pub priority_retrans_recall: Option<f64>,
    pub cardinality_error: Option<f64>,
    pub throughput_pps: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "k,topk_detection_accuracy,topk_packet_recall,topk_retrans_recall,\
priority_packet_recall,priority_retrans_recall,cardinality_error,throughput_pps";

    pub fn csv_row(&self, k: usize) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{k},{:.6},{},{},{},{},{},{:.0}",
            self.topk_detection_accuracy,
            opt(self.topk_packet_recall),
            opt(self.topk_retrans_recall),
            opt(self.priority_packet_recall),
            opt(self.priority_retrans_recall),
            opt(self.cardinality_error),
            self.throughput_pps
        )
    }
}

/// `min(est, true) / true`, so overestimates cannot push recall above 1.
pub fn flow_recall(estimated: u64, truth: u64) -> f64 {
    debug_assert!(truth > 0);
    estimated.min(truth) as f64 / truth as f64
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn compute_metrics(obs: &Observed<'_>, truth: &GroundTruth, k: usize) -> MetricsReport {
    assert!(k >= 1, "k must be positive");
    let priority_keys: HashSet<FlowKey> = obs.priority.iter().map(|r| r.key).collect();
    let true_top: HashMap<FlowKey, FlowCounts> =
        truth.top_k(k, &priority_keys).into_iter().collect();
    let detected: Vec<&FlowReport> = obs.topk.iter().take(k).collect();
    let hits: Vec<(&FlowReport, FlowCounts)> = detected
        .iter()
        .filter_map(|r| true_top.get(&r.key).map(|c| (*r, *c)))
        .collect();

    let topk_packet_recall = mean(
        hits.iter()
            .filter(|(_, t)| t.packet_count > 0)
            .map(|(r, t)| flow_recall(r.packet_count, t.packet_count)),
    );
    let topk_retrans_recall = mean(
        hits.iter()
            .filter(|(_, t)| t.retrans_count > 0)
            .map(|(r, t)| flow_recall(r.retrans_count, t.retrans_count)),
    );

    let priority_truth: Vec<(&FlowReport, FlowCounts)> = obs
        .priority
        .iter()
        .map(|r| (r, truth.get(&r.key)))
        .collect();
    let priority_packet_recall = mean(
        priority_truth
            .iter()
            .filter(|(_, t)| t.packet_count > 0)
            .map(|(r, t)| flow_recall(r.packet_count, t.packet_count)),
    );
    let priority_retrans_recall = mean(
        priority_truth
            .iter()
            .filter(|(_, t)| t.retrans_count > 0)
            .map(|(r, t)| flow_recall(r.retrans_count, t.retrans_count)),
    );

    let cardinality_error = match (obs.combined_cardinality, truth.distinct_flows) {
        (Some(est), n) if n > 0 => Some((est - n as f64).abs() / n as f64),
        _ => None,
    };

    MetricsReport {
        topk_detection_accuracy: hits.len() as f64 / k as f64,
        topk_packet_recall,
        topk_retrans_recall,
        priority_packet_recall,
        priority_retrans_recall,
        cardinality_error,
        throughput_pps: obs.throughput_pps,
    }
}
