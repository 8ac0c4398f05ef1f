//! Deterministic synthetic traffic with Zipf-distributed flow sizes and
//! injected TCP retransmissions.

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::TraceError;
use crate::eval::GroundTruth;
use crate::flow::{FlowCounts, FlowKey, PacketRecord, TcpFlags, PROTO_TCP, PROTO_UDP};

use super::{Trace, TraceOrigin};

/// Payload of every generated segment.
pub const SEGMENT_PAYLOAD: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub flow_count: usize,
    /// Original (non-duplicate) packets across all flows. Injected
    /// retransmissions are emitted on top of this budget.
    pub total_packets: u64,
    pub zipf_alpha: f64,
    pub tcp_fraction: f64,
    /// Probability that a TCP segment is followed by a duplicate of itself.
    pub retrans_rate: f64,
    /// Quiet time between a segment and its duplicate.
    pub retrans_gap_ns: u64,
    /// Spacing of the global packet schedule.
    pub mean_gap_ns: u64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            flow_count: 1000,
            total_packets: 100_000,
            zipf_alpha: 1.0,
            tcp_fraction: 0.8,
            retrans_rate: 0.0,
            retrans_gap_ns: 5_000_000,
            mean_gap_ns: 1000,
            rng_seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |msg: String| Err(TraceError::Synth(msg));
        if self.flow_count == 0 {
            return bad("flow count must be at least 1".into());
        }
        if self.total_packets < self.flow_count as u64 {
            return bad(format!(
                "packet count {} is smaller than flow count {}",
                self.total_packets, self.flow_count
            ));
        }
        if !(self.zipf_alpha.is_finite() && self.zipf_alpha >= 0.0) {
            return bad(format!(
                "zipf exponent {} must be finite and >= 0",
                self.zipf_alpha
            ));
        }
        if !(0.0..=1.0).contains(&self.tcp_fraction) {
            return bad(format!("tcp fraction {} outside [0, 1]", self.tcp_fraction));
        }
        if !(0.0..=1.0).contains(&self.retrans_rate) {
            return bad(format!(
                "retransmission rate {} outside [0, 1]",
                self.retrans_rate
            ));
        }
        if self.mean_gap_ns == 0 {
            return bad("packet spacing must be positive".into());
        }
        Ok(())
    }

    /// Non-fatal problems: duplicates spaced at or below the detection
    /// threshold will not be flagged by the pipeline.
    pub fn warnings(&self, retrans_threshold_ns: u64) -> Vec<String> {
        let mut out = Vec::new();
        if self.retrans_rate > 0.0 && self.retrans_gap_ns <= retrans_threshold_ns {
            out.push(format!(
                "retransmission gap {} ns does not exceed the detection threshold {} ns; \
                 injected retransmissions will be undetectable",
                self.retrans_gap_ns, retrans_threshold_ns
            ));
        }
        out
    }
}

pub struct SyntheticTrace {
    pub trace: Trace,
    pub truth: GroundTruth,
    pub injected_retrans: u64,
}

/// Splits `total` packets over `n` ranks proportionally to `1 / rank^alpha`,
/// at least one packet each. Largest-remainder rounding keeps the sum exact.
pub fn zipf_budgets(n: usize, total: u64, alpha: f64) -> Vec<u64> {
    assert!(n >= 1 && total >= n as u64);
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-alpha)).collect();
    let sum: f64 = weights.iter().sum();
    let extra = total - n as u64;
    let quotas: Vec<f64> = weights.iter().map(|w| extra as f64 * w / sum).collect();
    let mut budgets: Vec<u64> = quotas.iter().map(|q| 1 + q.floor() as u64).collect();
    let assigned: u64 = budgets.iter().sum::<u64>() - n as u64;
    let mut leftover = extra.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        budgets[i] += 1;
        leftover -= 1;
    }
    budgets
}

struct FlowState {
    key: FlowKey,
    next_seq: u32,
    offset_ns: u64,
    last_ts: Option<u64>,
    counts: FlowCounts,
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticTrace, TraceError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let budgets = zipf_budgets(cfg.flow_count, cfg.total_packets, cfg.zipf_alpha);

    let mut seen = HashSet::with_capacity(cfg.flow_count);
    let mut flows: Vec<FlowState> = Vec::with_capacity(cfg.flow_count);
    while flows.len() < cfg.flow_count {
        let protocol = if rng.random_bool(cfg.tcp_fraction) {
            PROTO_TCP
        } else {
            PROTO_UDP
        };
        let key = FlowKey::new(
            Ipv4Addr::from(0x0a00_0000 | (rng.random::<u32>() & 0x00ff_ffff)),
            Ipv4Addr::from(0xac10_0000 | (rng.random::<u32>() & 0x000f_ffff)),
            rng.random_range(1024..=u16::MAX),
            rng.random_range(1..1024),
            protocol,
        );
        if !seen.insert(key) {
            continue;
        }
        flows.push(FlowState {
            key,
            next_seq: rng.random(),
            offset_ns: 0,
            last_ts: None,
            counts: FlowCounts::default(),
        });
    }

    let mut schedule: Vec<u32> = Vec::with_capacity(cfg.total_packets as usize);
    for (i, &b) in budgets.iter().enumerate() {
        schedule.extend(std::iter::repeat_n(i as u32, b as usize));
    }
    schedule.shuffle(&mut rng);

    let mut events: Vec<(u64, PacketRecord)> =
        Vec::with_capacity(schedule.len() + schedule.len() / 64);
    let mut injected = 0u64;
    for (slot, &fid) in schedule.iter().enumerate() {
        let f = &mut flows[fid as usize];
        let base = slot as u64 * cfg.mean_gap_ns + f.offset_ns;
        let ts = match f.last_ts {
            Some(last) => base.max(last + 1),
            None => base,
        };
        let packet = if f.key.protocol == PROTO_TCP {
            let p = PacketRecord::tcp(f.key, ts, f.next_seq, SEGMENT_PAYLOAD, TcpFlags::ACK);
            f.next_seq = f.next_seq.wrapping_add(SEGMENT_PAYLOAD);
            p
        } else {
            PacketRecord::udp(f.key, ts, SEGMENT_PAYLOAD)
        };
        events.push((ts, packet));
        f.counts.packet_count += 1;
        f.last_ts = Some(ts);

        if f.key.protocol == PROTO_TCP
            && cfg.retrans_rate > 0.0
            && rng.random_bool(cfg.retrans_rate)
        {
            let dup_ts = ts + cfg.retrans_gap_ns;
            events.push((
                dup_ts,
                PacketRecord {
                    ts_ns: dup_ts,
                    ..packet
                },
            ));
            f.counts.packet_count += 1;
            f.counts.retrans_count += 1;
            f.last_ts = Some(dup_ts);
            f.offset_ns += cfg.retrans_gap_ns;
            injected += 1;
        }
    }

    // Stable sort keeps per-flow emission order on equal timestamps; the
    // second pass makes timestamps strictly increasing.
    events.sort_by_key(|(ts, _)| *ts);
    let mut packets: Vec<PacketRecord> = Vec::with_capacity(events.len());
    let mut prev: Option<u64> = None;
    for (ts, mut p) in events {
        let ts = match prev {
            Some(last) if ts <= last => last + 1,
            _ => ts,
        };
        p.ts_ns = ts;
        prev = Some(ts);
        packets.push(p);
    }

    let per_flow: BTreeMap<FlowKey, FlowCounts> = flows.iter().map(|f| (f.key, f.counts)).collect();
    Ok(SyntheticTrace {
        trace: Trace {
            origin: TraceOrigin::Synthetic,
            packets,
            skipped: 0,
            truncated_at: None,
        },
        truth: GroundTruth {
            distinct_flows: per_flow.len(),
            per_flow,
        },
        injected_retrans: injected,
    })
}
