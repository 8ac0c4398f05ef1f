//! Per-packet orchestration across the priority table, heavy table, linear
//! counter and sketch, plus flow reconstruction and top-k reporting.
//!
//! A packet first consults the priority table; a hit ends processing. Other
//! packets go to the heavy table. Only packets the heavy table does not keep
//! (collisions and evictions) reach the linear counter and the sketch, unless
//! `alg1_literal_routing` is set, in which case every non-priority packet does.

use serde::Serialize;

use crate::cms::CmsLayers;
use crate::config::PipelineConfig;
use crate::error::{ConfigError, PriorityError, Saturated};
use crate::flow::{FlowCounts, FlowKey, PacketRecord};
use crate::heavy::{HeavyOutcome, HeavyParams, HeavyTable};
use crate::linear::LinearCounter;
use crate::priority::{Lookup, PriorityTable, Registered};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ReportSource {
    #[serde(rename = "priority")]
    Priority,
    #[serde(rename = "heavy")]
    Heavy,
    #[serde(rename = "heavy+cms")]
    HeavyCms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct FlowReport {
    pub key: FlowKey,
    pub packet_count: u64,
    pub retrans_count: u64,
    pub kick_flag: bool,
    pub source: ReportSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct PipelineStats {
    pub packets_processed: u64,
    pub priority_hits: u64,
    pub heavy_matched: u64,
    pub heavy_installed: u64,
    pub forwarded: u64,
    pub evictions: u64,
    pub non_ip_skipped: u64,
}

impl PipelineStats {
    /// Every processed packet lands in exactly one outcome bucket.
    pub fn is_balanced(&self) -> bool {
        self.packets_processed
            == self.priority_hits
                + self.heavy_matched
                + self.heavy_installed
                + self.forwarded
                + self.evictions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CardinalityEstimate {
    /// Linear counter estimate alone.
    pub sketch_path: f64,
    /// Linear counter plus flows it never saw: heavy occupants that were never
    /// forwarded and priority flows with traffic.
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pipeline {
    config: PipelineConfig,
    priority: PriorityTable,
    heavy: HeavyTable,
    linear: LinearCounter,
    cms: CmsLayers,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let heavy = HeavyTable::new(HeavyParams {
            size: config.heavy_table_size,
            seed: config.seed_heavy,
            vote_threshold: config.vote_threshold,
            retrans_threshold_ns: config.retrans_threshold_ns,
            literal_update: config.flags.alg1_literal_update,
            reset_votes_on_match: config.flags.reset_votes_on_match,
        });
        Ok(Pipeline {
            priority: PriorityTable::with_capacity(config.priority_capacity),
            heavy,
            linear: LinearCounter::new(config.lc_size, config.seed_lc),
            cms: CmsLayers::new(config.cms_width, config.seed_cms),
            stats: PipelineStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    pub fn priority(&self) -> &PriorityTable {
        &self.priority
    }

    pub fn heavy(&self) -> &HeavyTable {
        &self.heavy
    }

    pub fn linear(&self) -> &LinearCounter {
        &self.linear
    }

    pub fn cms(&self) -> &CmsLayers {
        &self.cms
    }

    pub fn register_priority(&mut self, key: FlowKey) -> Result<Registered, PriorityError> {
        self.priority.register(key)
    }

    /// Records frames dropped at ingestion.
    pub fn add_skipped(&mut self, n: u64) {
        self.stats.non_ip_skipped += n;
    }

    pub fn process_packet(&mut self, p: &PacketRecord) {
        self.stats.packets_processed += 1;
        let flags = self.config.flags;

        if self.priority.process(
            p,
            self.config.retrans_threshold_ns,
            flags.alg1_literal_update,
        ) == Lookup::Hit
        {
            self.stats.priority_hits += 1;
            return;
        }

        let outcome = self.heavy.process(p);
        match outcome {
            HeavyOutcome::Matched => self.stats.heavy_matched += 1,
            HeavyOutcome::Installed => self.stats.heavy_installed += 1,
            HeavyOutcome::Forwarded => self.stats.forwarded += 1,
            HeavyOutcome::Evicted { .. } => self.stats.evictions += 1,
        }

        match outcome {
            HeavyOutcome::Matched | HeavyOutcome::Installed => {
                if flags.alg1_literal_routing {
                    self.linear.record(&p.key);
                    self.cms.update_packet(&p.key);
                }
            }
            HeavyOutcome::Forwarded => {
                self.linear.record(&p.key);
                self.cms.update_packet(&p.key);
            }
            HeavyOutcome::Evicted { old_key, old_stats } => {
                let target = if flags.alg1_literal_cms {
                    p.key
                } else {
                    old_key
                };
                self.cms.absorb(&target, old_stats);
                self.linear.record(&p.key);
                // The evicted flow may never return; keep it in the distinct count.
                self.linear.record(&old_key);
            }
        }
    }

    pub fn process_all<'a>(&mut self, packets: impl IntoIterator<Item = &'a PacketRecord>) {
        for p in packets {
            self.process_packet(p);
        }
    }

    /// Best available lifetime statistics for `key`.
    pub fn reconstruct_flow(&self, key: &FlowKey) -> Option<FlowReport> {
        if let Some(e) = self.priority.get(key) {
            return Some(FlowReport {
                key: *key,
                packet_count: e.packet_count,
                retrans_count: e.retrans_count,
                kick_flag: false,
                source: ReportSource::Priority,
            });
        }
        let e = self.heavy.lookup(key)?;
        let (counts, source) = if e.kick_flag {
            (e.counts() + self.cms.query(key), ReportSource::HeavyCms)
        } else {
            (e.counts(), ReportSource::Heavy)
        };
        Some(FlowReport {
            key: *key,
            packet_count: counts.packet_count,
            retrans_count: counts.retrans_count,
            kick_flag: e.kick_flag,
            source,
        })
    }

    /// Reconstructed reports for every heavy occupant, largest first. Ties go
    /// to the smaller canonical key encoding. Priority flows are excluded.
    pub fn heavy_reports(&self) -> Vec<FlowReport> {
        let mut reports: Vec<FlowReport> = self
            .heavy
            .occupied()
            .filter(|e| !self.priority.contains(&e.key))
            .filter_map(|e| self.reconstruct_flow(&e.key))
            .collect();
        reports.sort_by(|a, b| {
            b.packet_count
                .cmp(&a.packet_count)
                .then_with(|| a.key.encode().cmp(&b.key.encode()))
        });
        reports
    }

    pub fn top_k(&self, k: usize) -> Vec<FlowReport> {
        let mut reports = self.heavy_reports();
        reports.truncate(k);
        reports
    }

    pub fn priority_reports(&self) -> Vec<FlowReport> {
        self.priority
            .snapshot()
            .into_iter()
            .map(|(key, e)| FlowReport {
                key,
                packet_count: e.packet_count,
                retrans_count: e.retrans_count,
                kick_flag: false,
                source: ReportSource::Priority,
            })
            .collect()
    }

    pub fn cardinality_estimate(&self) -> Result<CardinalityEstimate, Saturated> {
        let sketch_path = self.linear.estimate()?;
        let unforwarded = self.heavy.occupied().filter(|e| !e.kick_flag).count();
        let active_priority = self
            .priority
            .snapshot()
            .iter()
            .filter(|(_, e)| e.packet_count > 0)
            .count();
        Ok(CardinalityEstimate {
            sketch_path,
            combined: sketch_path + (unforwarded + active_priority) as f64,
        })
    }

    /// Counts for `key` held in the sketch, independent of the heavy table.
    pub fn sketch_counts(&self, key: &FlowKey) -> FlowCounts {
        self.cms.query(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CompatFlags;
    use crate::flow::{TcpFlags, PROTO_TCP, PROTO_UDP};
    use std::net::Ipv4Addr;

    fn udp(i: u32) -> FlowKey {
        FlowKey::new(
            Ipv4Addr::from(0x0a00_0000 + i),
            Ipv4Addr::new(172, 16, 0, 1),
            1000,
            53,
            PROTO_UDP,
        )
    }

    fn small(heavy: usize) -> PipelineConfig {
        PipelineConfig {
            heavy_table_size: heavy,
            ..PipelineConfig::default()
        }
    }

    /// Two distinct keys landing in the same heavy slot.
    fn colliding_pair(p: &Pipeline) -> (FlowKey, FlowKey) {
        let a = udp(0);
        let slot = p.heavy().slot_of(&a);
        let b = (1..)
            .map(udp)
            .find(|k| p.heavy().slot_of(k) == slot)
            .unwrap();
        (a, b)
    }

    #[test]
    fn priority_hit_touches_nothing_else() {
        let mut p = Pipeline::new(small(64)).unwrap();
        let k = FlowKey::new([10, 0, 0, 1], [10, 0, 0, 2], 5, 6, PROTO_TCP);
        p.register_priority(k).unwrap();
        p.process_packet(&PacketRecord::udp(udp(3), 0, 10));
        let (heavy, lc, cms) = (p.heavy().clone(), p.linear().clone(), p.cms().clone());
        p.process_packet(&PacketRecord::tcp(k, 10, 0, 100, TcpFlags::ACK));
        assert_eq!(p.stats().priority_hits, 1);
        assert_eq!(p.heavy(), &heavy);
        assert_eq!(p.linear(), &lc);
        assert_eq!(p.cms(), &cms);
    }

    #[test]
    fn collision_without_eviction_goes_downstream() {
        let mut p = Pipeline::new(small(64)).unwrap();
        let (a, b) = colliding_pair(&p);
        for t in 0..20 {
            p.process_packet(&PacketRecord::udp(a, t, 10));
        }
        assert_eq!(p.linear().set_cells(), 0);
        p.process_packet(&PacketRecord::udp(b, 100, 10));
        assert_eq!(p.stats().forwarded, 1);
        assert_eq!(p.linear().set_cells(), 1);
        assert_eq!(p.cms().query(&b).packet_count, 1);
        for i in 0..3 {
            assert_eq!(
                p.cms().layer(i).iter().map(|c| c.packet_count).sum::<u64>(),
                1
            );
        }
    }

    #[test]
    fn eviction_moves_history_to_sketch() {
        let mut p = Pipeline::new(small(64)).unwrap();
        let f = FlowKey::new([10, 0, 0, 1], [10, 0, 0, 2], 7000, 80, PROTO_TCP);
        let slot = p.heavy().slot_of(&f);
        let g = (1..)
            .map(|i| {
                FlowKey::new(
                    Ipv4Addr::from(0x0b00_0000 + i),
                    Ipv4Addr::new(10, 0, 0, 2),
                    7000,
                    80,
                    PROTO_TCP,
                )
            })
            .find(|k| p.heavy().slot_of(k) == slot)
            .unwrap();
        // 8 in-order segments, then two stale ones after long gaps: pc=10, rc=2.
        let mut ts = 0;
        for i in 0..8u32 {
            p.process_packet(&PacketRecord::tcp(f, ts, i * 100, 100, TcpFlags::ACK));
            ts += 1000;
        }
        for seq in [0u32, 100] {
            ts += 5_000_000;
            p.process_packet(&PacketRecord::tcp(f, ts, seq, 100, TcpFlags::ACK));
        }
        let e = *p.heavy().lookup(&f).unwrap();
        assert_eq!((e.packet_count, e.retrans_count), (10, 2));

        // 10 / 8 rounds up: the second colliding packet evicts.
        p.process_packet(&PacketRecord::tcp(g, ts + 1, 0, 100, TcpFlags::ACK));
        p.process_packet(&PacketRecord::tcp(g, ts + 2, 100, 100, TcpFlags::ACK));
        assert_eq!(p.stats().evictions, 1);
        assert_eq!(p.cms().query(&f), FlowCounts::new(10, 2));
        let e = *p.heavy().lookup(&g).unwrap();
        assert_eq!((e.packet_count, e.kick_flag), (1, true));
        assert!(p.stats().is_balanced());
    }

    #[test]
    fn reconstruction_merges_sketch_minimum() {
        let mut p = Pipeline::new(small(1)).unwrap();
        let (a, b) = (udp(1), udp(2));
        p.process_packet(&PacketRecord::udp(a, 0, 1));
        // b evicts a at the first vote.
        p.process_packet(&PacketRecord::udp(b, 1, 1));
        for t in 0..59 {
            p.process_packet(&PacketRecord::udp(b, 2 + t, 1));
        }
        let report = p.reconstruct_flow(&b).unwrap();
        assert_eq!(report.source, ReportSource::HeavyCms);
        assert_eq!(report.packet_count, 60 + p.cms().query(&b).packet_count);
        assert!(p.reconstruct_flow(&a).is_none());
        assert!(p.reconstruct_flow(&udp(99)).is_none());
    }

    #[test]
    fn unkicked_report_is_plain_heavy_count() {
        let mut p = Pipeline::new(small(4096)).unwrap();
        for t in 0..100 {
            p.process_packet(&PacketRecord::udp(udp(5), t, 1));
        }
        let r = p.reconstruct_flow(&udp(5)).unwrap();
        assert_eq!(
            (r.packet_count, r.source, r.kick_flag),
            (100, ReportSource::Heavy, false)
        );
    }

    #[test]
    fn top_k_orders_by_count_then_key() {
        let mut p = Pipeline::new(small(4096)).unwrap();
        assert!(p.top_k(5).is_empty());
        let keys: Vec<FlowKey> = (0..50).map(udp).collect();
        let slots: std::collections::HashSet<_> =
            keys.iter().map(|k| p.heavy().slot_of(k)).collect();
        assert_eq!(slots.len(), keys.len(), "test keys must not collide");
        for (i, n) in [(0usize, 10u64), (1, 20), (2, 30)] {
            for t in 0..n {
                p.process_packet(&PacketRecord::udp(keys[i], t, 1));
            }
        }
        let top: Vec<u64> = p.top_k(2).iter().map(|r| r.packet_count).collect();
        assert_eq!(top, vec![30, 20]);

        let mut q = Pipeline::new(small(4096)).unwrap();
        for k in keys.iter().rev().take(5) {
            q.process_packet(&PacketRecord::udp(*k, 0, 1));
        }
        let order: Vec<[u8; 13]> = q.top_k(5).iter().map(|r| r.key.encode()).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
    }

    #[test]
    fn cardinality_without_forwarding() {
        let mut p = Pipeline::new(small(4096)).unwrap();
        assert_eq!(
            p.cardinality_estimate().unwrap(),
            CardinalityEstimate {
                sketch_path: 0.0,
                combined: 0.0
            }
        );
        let keys: Vec<FlowKey> = (0..10).map(udp).collect();
        for k in &keys {
            for t in 0..3 {
                p.process_packet(&PacketRecord::udp(*k, t, 1));
            }
        }
        assert_eq!(p.stats().forwarded + p.stats().evictions, 0);
        assert_eq!(
            p.cardinality_estimate().unwrap(),
            CardinalityEstimate {
                sketch_path: 0.0,
                combined: 10.0
            }
        );
    }

    #[test]
    fn cardinality_through_single_slot() {
        let mut p = Pipeline::new(small(1)).unwrap();
        for i in 0..100 {
            p.process_packet(&PacketRecord::udp(udp(i * 31 + 7), i as u64, 1));
        }
        let est = p.cardinality_estimate().unwrap().combined;
        assert!((est - 100.0).abs() / 100.0 <= 0.15, "{est}");
    }

    #[test]
    fn saturation_propagates() {
        let cfg = PipelineConfig {
            heavy_table_size: 1,
            lc_size: 1,
            ..PipelineConfig::default()
        };
        let mut p = Pipeline::new(cfg).unwrap();
        p.process_packet(&PacketRecord::udp(udp(1), 0, 1));
        p.process_packet(&PacketRecord::udp(udp(2), 1, 1));
        assert_eq!(p.cardinality_estimate(), Err(Saturated));
    }

    #[test]
    fn literal_routing_feeds_every_packet_downstream() {
        let mut cfg = small(4096);
        cfg.flags = CompatFlags {
            alg1_literal_routing: true,
            ..CompatFlags::default()
        };
        let mut p = Pipeline::new(cfg).unwrap();
        for t in 0..4 {
            p.process_packet(&PacketRecord::udp(udp(1), t, 1));
        }
        assert_eq!(p.cms().query(&udp(1)).packet_count, 4);
        assert_eq!(p.linear().set_cells(), 1);
    }

    #[test]
    fn stats_balance_after_every_packet() {
        let mut p = Pipeline::new(small(8)).unwrap();
        p.register_priority(udp(0)).unwrap();
        for i in 0..2000u32 {
            p.process_packet(&PacketRecord::udp(udp(i % 37), i as u64, 1));
            assert!(p.stats().is_balanced());
        }
    }
}
