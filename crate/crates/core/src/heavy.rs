//! Hash-indexed table of candidate elephant flows.
//!
//! Each flow maps to exactly one slot. A packet that collides with a different
//! occupant casts a negative vote against it; once the votes scaled by the
//! vote threshold reach the occupant's packet count, the occupant is evicted
//! and the colliding flow takes the slot with its kick flag set.

use serde::Serialize;

use crate::flow::{table_index, FlowCounts, FlowKey, PacketRecord, TcpTrackState};

pub const DEFAULT_HEAVY_SIZE: usize = 4096;
pub const DEFAULT_VOTE_THRESHOLD: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct HeavyEntry {
    pub occupied: bool,
    pub key: FlowKey,
    pub packet_count: u64,
    pub retrans_count: u64,
    pub tcp: Option<TcpTrackState>,
    pub negative_count: u64,
    pub kick_flag: bool,
}

impl HeavyEntry {
    pub const EMPTY: HeavyEntry = HeavyEntry {
        occupied: false,
        key: FlowKey {
            src_ip: std::net::Ipv4Addr::UNSPECIFIED,
            dst_ip: std::net::Ipv4Addr::UNSPECIFIED,
            src_port: 0,
            dst_port: 0,
            protocol: 0,
        },
        packet_count: 0,
        retrans_count: 0,
        tcp: None,
        negative_count: 0,
        kick_flag: false,
    };

    fn install(p: &PacketRecord, kicked: bool) -> Self {
        HeavyEntry {
            occupied: true,
            key: p.key,
            packet_count: 1,
            retrans_count: 0,
            tcp: p.key.is_tcp().then(|| TcpTrackState::start(p)),
            negative_count: 0,
            kick_flag: kicked,
        }
    }

    pub fn counts(&self) -> FlowCounts {
        FlowCounts::new(self.packet_count, self.retrans_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeavyOutcome {
    Matched,
    Installed,
    Forwarded,
    Evicted {
        old_key: FlowKey,
        old_stats: FlowCounts,
    },
}

/// Tunables for [`HeavyTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeavyParams {
    pub size: usize,
    pub seed: u32,
    pub vote_threshold: u64,
    pub retrans_threshold_ns: u64,
    pub literal_update: bool,
    pub reset_votes_on_match: bool,
}

/// The eviction rule: votes times threshold reach the occupant's count.
#[inline]
pub fn eviction_due(negative_count: u64, vote_threshold: u64, packet_count: u64) -> bool {
    negative_count.saturating_mul(vote_threshold) >= packet_count
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeavyTable {
    slots: Vec<HeavyEntry>,
    params: HeavyParams,
}

impl HeavyTable {
    pub fn new(params: HeavyParams) -> Self {
        assert!(params.size >= 1, "heavy table needs at least one slot");
        HeavyTable {
            slots: vec![HeavyEntry::EMPTY; params.size],
            params,
        }
    }

    pub fn params(&self) -> &HeavyParams {
        &self.params
    }

    pub fn size(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    pub fn slot_of(&self, key: &FlowKey) -> usize {
        table_index(key, self.params.seed, self.slots.len())
    }

    pub fn slot(&self, index: usize) -> &HeavyEntry {
        &self.slots[index]
    }

    /// Raw slot array, occupied or not.
    pub fn slots(&self) -> &[HeavyEntry] {
        &self.slots
    }

    /// Entry currently holding `key`, if any.
    pub fn lookup(&self, key: &FlowKey) -> Option<&HeavyEntry> {
        let e = &self.slots[self.slot_of(key)];
        (e.occupied && e.key == *key).then_some(e)
    }

    pub fn process(&mut self, p: &PacketRecord) -> HeavyOutcome {
        let idx = self.slot_of(&p.key);
        let params = self.params;
        let entry = &mut self.slots[idx];

        if !entry.occupied {
            *entry = HeavyEntry::install(p, false);
            return HeavyOutcome::Installed;
        }

        if entry.key == p.key {
            entry.packet_count += 1;
            if let Some(state) = entry.tcp.as_mut() {
                if state.observe(p, params.retrans_threshold_ns, params.literal_update) {
                    entry.retrans_count += 1;
                }
            }
            if params.reset_votes_on_match {
                entry.negative_count = 0;
            }
            return HeavyOutcome::Matched;
        }

        entry.negative_count += 1;
        if eviction_due(
            entry.negative_count,
            params.vote_threshold,
            entry.packet_count,
        ) {
            let old_key = entry.key;
            let old_stats = entry.counts();
            *entry = HeavyEntry::install(p, true);
            HeavyOutcome::Evicted { old_key, old_stats }
        } else {
            HeavyOutcome::Forwarded
        }
    }

    /// Occupied slots with their indices.
    pub fn snapshot(&self) -> Vec<(usize, HeavyEntry)> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, e)| e.occupied)
            .map(|(i, e)| (i, *e))
            .collect()
    }

    pub fn occupied(&self) -> impl Iterator<Item = &HeavyEntry> {
        self.slots.iter().filter(|e| e.occupied)
    }
}
