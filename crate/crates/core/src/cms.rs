//! Three-layer Count-Min sketch over packet and retransmission counts.

use serde::Serialize;

use crate::flow::{table_index, FlowCounts, FlowKey};

pub const CMS_DEPTH: usize = 3;
pub const DEFAULT_CMS_WIDTH: usize = 500;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct CmsCell {
    pub packet_count: u64,
    pub retrans_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CmsLayers {
    layers: [Vec<CmsCell>; CMS_DEPTH],
    seeds: [u32; CMS_DEPTH],
    width: usize,
}

impl CmsLayers {
    pub fn new(width: usize, seeds: [u32; CMS_DEPTH]) -> Self {
        assert!(width >= 1, "sketch width must be at least 1");
        assert!(
            seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2],
            "sketch layers need distinct seeds"
        );
        CmsLayers {
            layers: std::array::from_fn(|_| vec![CmsCell::default(); width]),
            seeds,
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seeds(&self) -> [u32; CMS_DEPTH] {
        self.seeds
    }

    pub fn layer(&self, i: usize) -> &[CmsCell] {
        &self.layers[i]
    }

    #[inline]
    pub fn indices(&self, key: &FlowKey) -> [usize; CMS_DEPTH] {
        std::array::from_fn(|i| table_index(key, self.seeds[i], self.width))
    }

    #[inline]
    pub fn update_packet(&mut self, key: &FlowKey) {
        let indices = self.indices(key);
        for (layer, idx) in self.layers.iter_mut().zip(indices) {
            layer[idx].packet_count += 1;
        }
    }

    /// Adds `stats` at the cells of `key`.
    #[inline]
    pub fn absorb(&mut self, key: &FlowKey, stats: FlowCounts) {
        let indices = self.indices(key);
        for (layer, idx) in self.layers.iter_mut().zip(indices) {
            layer[idx].packet_count += stats.packet_count;
            layer[idx].retrans_count += stats.retrans_count;
        }
    }

    /// Per-field minimum across the three layers.
    pub fn query(&self, key: &FlowKey) -> FlowCounts {
        let cells = self
            .layers
            .iter()
            .zip(self.indices(key))
            .map(|(layer, idx)| layer[idx]);
        let mut out = FlowCounts::new(u64::MAX, u64::MAX);
        for c in cells {
            out.packet_count = out.packet_count.min(c.packet_count);
            out.retrans_count = out.retrans_count.min(c.retrans_count);
        }
        out
    }

    pub fn total_packets(&self) -> u64 {
        self.layers[0].iter().map(|c| c.packet_count).sum()
    }
}
