//! Packet sources: classic pcap captures and synthetic traces.

use std::path::PathBuf;

use crate::flow::PacketRecord;

pub mod pcap;
pub mod synth;

pub use pcap::{read_pcap, read_pcap_bytes, write_pcap, write_pcap_bytes, PcapReader, PcapWriter};
pub use synth::{generate, zipf_budgets, SynthConfig, SyntheticTrace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceOrigin {
    Pcap(PathBuf),
    Synthetic,
    Memory,
}

/// An ordered packet stream plus ingestion bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub origin: TraceOrigin,
    pub packets: Vec<PacketRecord>,
    /// Frames that were not IPv4 TCP/UDP.
    pub skipped: u64,
    /// Byte offset of a record cut short by end of file.
    pub truncated_at: Option<u64>,
}
