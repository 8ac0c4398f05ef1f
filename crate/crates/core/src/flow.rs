//! Flow and packet data model shared by every table.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::FlowError;
use crate::hash::jenkins_hash;

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Length of [`FlowKey::encode`] output.
pub const KEY_LEN: usize = 13;

/// Default reordering guard for retransmission detection: 3 ms.
pub const DEFAULT_RETRANS_THRESHOLD_NS: u64 = 3_000_000;

/// IPv4 5-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(
        src_ip: impl Into<Ipv4Addr>,
        dst_ip: impl Into<Ipv4Addr>,
        src_port: u16,
        dst_port: u16,
        protocol: u8,
    ) -> Self {
        FlowKey {
            src_ip: src_ip.into(),
            dst_ip: dst_ip.into(),
            src_port,
            dst_port,
            protocol,
        }
    }

    /// Canonical encoding: addresses and ports big-endian, then the protocol byte.
    pub fn encode(&self) -> [u8; KEY_LEN] {
        let mut out = [0u8; KEY_LEN];
        out[0..4].copy_from_slice(&self.src_ip.octets());
        out[4..8].copy_from_slice(&self.dst_ip.octets());
        out[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        out[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        out[12] = self.protocol;
        out
    }

    pub fn is_tcp(&self) -> bool {
        self.protocol == PROTO_TCP
    }

    /// Only TCP and UDP keys are admitted to the pipeline.
    pub fn is_admissible(&self) -> bool {
        self.protocol == PROTO_TCP || self.protocol == PROTO_UDP
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.protocol {
            PROTO_TCP => "tcp".to_string(),
            PROTO_UDP => "udp".to_string(),
            other => other.to_string(),
        };
        write!(
            f,
            "{}:{} -> {}:{}/{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, proto
        )
    }
}

/// Free-function form of [`FlowKey::encode`].
pub fn encode_key(key: &FlowKey) -> [u8; KEY_LEN] {
    key.encode()
}

/// Slot of `key` in a table of `size` cells hashed with `seed`.
#[inline]
pub fn table_index(key: &FlowKey, seed: u32, size: usize) -> usize {
    debug_assert!(size >= 1);
    jenkins_hash(&key.encode(), seed) as usize % size
}

/// TCP flag bits, using the on-wire bit positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const NONE: TcpFlags = TcpFlags(0);

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    /// Keeps only SYN, FIN, RST and ACK.
    pub fn tracked(self) -> TcpFlags {
        TcpFlags(self.0 & (Self::FIN.0 | Self::SYN.0 | Self::RST.0 | Self::ACK.0))
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

/// One packet as seen by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketRecord {
    pub key: FlowKey,
    pub ts_ns: u64,
    /// Meaningful only for TCP.
    pub seq: u32,
    pub payload_len: u32,
    /// Meaningful only for TCP.
    pub tcp_flags: TcpFlags,
}

impl PacketRecord {
    pub fn udp(key: FlowKey, ts_ns: u64, payload_len: u32) -> Self {
        PacketRecord {
            key,
            ts_ns,
            seq: 0,
            payload_len,
            tcp_flags: TcpFlags::NONE,
        }
    }

    pub fn tcp(key: FlowKey, ts_ns: u64, seq: u32, payload_len: u32, flags: TcpFlags) -> Self {
        PacketRecord {
            key,
            ts_ns,
            seq,
            payload_len,
            tcp_flags: flags,
        }
    }

    /// Sequence-space length: payload plus one each for SYN and FIN.
    #[inline]
    pub fn seq_len(&self) -> u32 {
        self.payload_len
            .wrapping_add(self.tcp_flags.contains(TcpFlags::SYN) as u32)
            .wrapping_add(self.tcp_flags.contains(TcpFlags::FIN) as u32)
    }

    #[inline]
    pub(crate) fn seq_end(&self) -> u32 {
        self.seq.wrapping_add(self.seq_len())
    }
}

/// Next expected sequence number after `p`, modulo 2^32.
pub fn next_expected_seq(p: &PacketRecord) -> Result<u32, FlowError> {
    if !p.key.is_tcp() {
        return Err(FlowError::NotTcp(p.key.protocol));
    }
    Ok(p.seq_end())
}

/// Serial-number comparison: `a` precedes `b` iff `a - b` is negative as i32.
#[inline]
pub fn seq_before(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

/// Packet and retransmission totals for one flow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowCounts {
    pub packet_count: u64,
    pub retrans_count: u64,
}

impl FlowCounts {
    pub fn new(packet_count: u64, retrans_count: u64) -> Self {
        FlowCounts {
            packet_count,
            retrans_count,
        }
    }
}

impl std::ops::Add for FlowCounts {
    type Output = FlowCounts;
    fn add(self, rhs: FlowCounts) -> FlowCounts {
        FlowCounts::new(
            self.packet_count + rhs.packet_count,
            self.retrans_count + rhs.retrans_count,
        )
    }
}

/// Per-flow TCP tracking state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpTrackState {
    pub expected_seq: u32,
    pub last_ts_ns: u64,
}

impl TcpTrackState {
    /// State after the first packet of a flow.
    pub fn start(p: &PacketRecord) -> Self {
        TcpTrackState {
            expected_seq: p.seq_end(),
            last_ts_ns: p.ts_ns,
        }
    }

    /// Applies `p` and returns whether it was classified as a retransmission.
    ///
    /// A detected retransmission never moves `expected_seq` backwards unless
    /// `literal_update` is set, in which case `expected_seq` always takes the
    /// packet's end sequence. `last_ts_ns` always advances to the packet.
    #[inline]
    pub fn observe(&mut self, p: &PacketRecord, threshold_ns: u64, literal_update: bool) -> bool {
        let retrans = check_retransmission(self, p, threshold_ns);
        let end = p.seq_end();
        if !retrans || literal_update || seq_before(self.expected_seq, end) {
            self.expected_seq = end;
        }
        self.last_ts_ns = p.ts_ns;
        retrans
    }
}

/// Stale sequence number and a quiet gap of at least `threshold_ns`.
///
/// Out-of-order timestamps count as a zero gap.
#[inline]
pub fn check_retransmission(state: &TcpTrackState, p: &PacketRecord, threshold_ns: u64) -> bool {
    seq_before(p.seq, state.expected_seq)
        && p.ts_ns.saturating_sub(state.last_ts_ns) >= threshold_ns
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(a: [u8; 4], b: [u8; 4], sp: u16, dp: u16, proto: u8) -> FlowKey {
        FlowKey::new(a, b, sp, dp, proto)
    }

    fn tcp_pkt(seq: u32, len: u32, ts_ns: u64, flags: TcpFlags) -> PacketRecord {
        PacketRecord::tcp(
            key([10, 0, 0, 1], [10, 0, 0, 2], 1, 2, PROTO_TCP),
            ts_ns,
            seq,
            len,
            flags,
        )
    }

    #[test]
    fn encode_all_zero() {
        let mut want = [0u8; 13];
        want[12] = 6;
        assert_eq!(encode_key(&key([0; 4], [0; 4], 0, 0, 6)), want);
    }

    #[test]
    fn encode_hand_layout() {
        let got = key([10, 0, 0, 1], [10, 0, 0, 2], 80, 443, 6).encode();
        assert_eq!(
            got,
            [0x0a, 0, 0, 1, 0x0a, 0, 0, 2, 0x00, 0x50, 0x01, 0xbb, 0x06]
        );
    }

    #[test]
    fn encode_protocol_is_last_byte() {
        let a = key([1, 2, 3, 4], [5, 6, 7, 8], 9, 10, 6).encode();
        let b = key([1, 2, 3, 4], [5, 6, 7, 8], 9, 10, 17).encode();
        let diff: Vec<usize> = (0..13).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diff, vec![12]);
    }

    #[test]
    fn table_index_size_one() {
        for i in 0..100u32 {
            let k = FlowKey::new(Ipv4Addr::from(i), Ipv4Addr::from(!i), 1, 2, 17);
            assert_eq!(table_index(&k, 1234, 1), 0);
        }
    }

    #[test]
    fn table_index_is_hash_mod_size() {
        let k = key([10, 0, 0, 1], [10, 0, 0, 2], 80, 443, 6);
        // 0x54b22666 % 500, computed offline
        assert_eq!(table_index(&k, 0, 500), 382);
        assert_eq!(table_index(&k, 0, 500), table_index(&k, 0, 500));
    }

    #[test]
    fn table_index_spread() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut buckets = vec![0u32; 500];
        let n = 10_000;
        for _ in 0..n {
            let k = FlowKey::new(
                Ipv4Addr::from(rng.random::<u32>()),
                Ipv4Addr::from(rng.random::<u32>()),
                rng.random(),
                rng.random(),
                6,
            );
            buckets[table_index(&k, 0x9e37_79b9, 500)] += 1;
        }
        let mean = n as f64 / 500.0;
        let max = *buckets.iter().max().unwrap() as f64;
        assert!(max <= 4.0 * mean, "max bucket {max} vs mean {mean}");
    }

    #[test]
    fn next_expected_examples() {
        assert_eq!(
            next_expected_seq(&tcp_pkt(1000, 100, 0, TcpFlags::NONE)).unwrap(),
            1100
        );
        assert_eq!(
            next_expected_seq(&tcp_pkt(0, 0, 0, TcpFlags::SYN)).unwrap(),
            1
        );
        assert_eq!(
            next_expected_seq(&tcp_pkt(u32::MAX - 9, 20, 0, TcpFlags::NONE)).unwrap(),
            10
        );
        assert_eq!(
            next_expected_seq(&tcp_pkt(7, 3, 0, TcpFlags::SYN | TcpFlags::FIN)).unwrap(),
            12
        );
    }

    #[test]
    fn next_expected_rejects_udp() {
        let p = PacketRecord::udp(key([1, 1, 1, 1], [2, 2, 2, 2], 5, 6, PROTO_UDP), 0, 10);
        assert!(matches!(next_expected_seq(&p), Err(FlowError::NotTcp(17))));
    }

    #[test]
    fn seq_before_examples() {
        assert!(seq_before(500, 1000));
        assert!(!seq_before(1000, 1000));
        assert!(seq_before(0xFFFF_FF00, 0x0000_0100));
        assert!(!seq_before(0x0000_0100, 0xFFFF_FF00));
    }

    #[test]
    fn seq_before_matches_signed_offset_oracle() {
        // b = a + d for small signed d: a precedes b exactly when d > 0.
        for a in [0u32, 1, 0x7fff_ffff, 0x8000_0000, 0xffff_ff00, u32::MAX] {
            for d in -512i64..=512 {
                let b = (a as i64 + d).rem_euclid(1 << 32) as u32;
                assert_eq!(seq_before(a, b), d > 0, "a={a:#x} d={d}");
            }
        }
    }

    #[test]
    fn retransmission_examples() {
        let st = TcpTrackState {
            expected_seq: 1000,
            last_ts_ns: 0,
        };
        assert!(check_retransmission(
            &st,
            &tcp_pkt(500, 100, 5_000_000, TcpFlags::NONE),
            3_000_000
        ));
        assert!(!check_retransmission(
            &st,
            &tcp_pkt(500, 100, 1_000_000, TcpFlags::NONE),
            3_000_000
        ));
        for dt in [0, 1_000_000, 10_000_000_000] {
            assert!(!check_retransmission(
                &st,
                &tcp_pkt(1000, 100, dt, TcpFlags::NONE),
                3_000_000
            ));
        }
    }

    #[test]
    fn observe_keeps_expected_on_retransmission() {
        let mut st = TcpTrackState::start(&tcp_pkt(0, 100, 0, TcpFlags::NONE));
        assert!(!st.observe(&tcp_pkt(100, 100, 10, TcpFlags::NONE), 3_000_000, false));
        assert!(!st.observe(&tcp_pkt(200, 100, 20, TcpFlags::NONE), 3_000_000, false));
        assert_eq!(st.expected_seq, 300);
        assert!(st.observe(
            &tcp_pkt(100, 100, 5_000_020, TcpFlags::NONE),
            3_000_000,
            false
        ));
        assert_eq!(st.expected_seq, 300);
        assert_eq!(st.last_ts_ns, 5_000_020);

        let mut literal = TcpTrackState {
            expected_seq: 300,
            last_ts_ns: 20,
        };
        assert!(literal.observe(
            &tcp_pkt(100, 100, 5_000_020, TcpFlags::NONE),
            3_000_000,
            true
        ));
        assert_eq!(literal.expected_seq, 200);
    }

    proptest! {
        #[test]
        fn encode_injective(a in any::<(u32, u32, u16, u16, u8)>(), b in any::<(u32, u32, u16, u16, u8)>()) {
            let ka = FlowKey::new(Ipv4Addr::from(a.0), Ipv4Addr::from(a.1), a.2, a.3, a.4);
            let kb = FlowKey::new(Ipv4Addr::from(b.0), Ipv4Addr::from(b.1), b.2, b.3, b.4);
            prop_assert_eq!(ka == kb, ka.encode() == kb.encode());
        }

        #[test]
        fn seq_before_irreflexive_antisymmetric(a in any::<u32>(), d in 1u32..(1 << 31)) {
            let b = a.wrapping_add(d);
            prop_assert!(!seq_before(a, a));
            prop_assert!(seq_before(a, b));
            prop_assert!(!seq_before(b, a));
        }

        #[test]
        fn retransmission_monotone_in_gap(
            expected in any::<u32>(),
            seq in any::<u32>(),
            dt in 0u64..10_000_000,
            extra in 0u64..10_000_000,
            threshold in 0u64..10_000_000,
        ) {
            let st = TcpTrackState { expected_seq: expected, last_ts_ns: 1_000 };
            let early = tcp_pkt(seq, 10, 1_000 + dt, TcpFlags::NONE);
            let late = tcp_pkt(seq, 10, 1_000 + dt + extra, TcpFlags::NONE);
            if check_retransmission(&st, &early, threshold) {
                prop_assert!(check_retransmission(&st, &late, threshold));
            }
        }
    }

    #[test]
    fn encode_injective_on_random_distinct_keys() {
        use rand::{Rng, SeedableRng};
        use std::collections::HashSet;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut keys = HashSet::new();
        while keys.len() < 100_000 {
            keys.insert(FlowKey::new(
                Ipv4Addr::from(rng.random::<u32>()),
                Ipv4Addr::from(rng.random::<u32>() & 0xff),
                rng.random::<u16>() & 0xf,
                rng.random(),
                if rng.random() { 6 } else { 17 },
            ));
        }
        let encoded: HashSet<[u8; 13]> = keys.iter().map(FlowKey::encode).collect();
        assert_eq!(encoded.len(), keys.len());
    }

    #[test]
    fn hash_seed_sensitivity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut differ = 0;
        for _ in 0..10_000 {
            let k = FlowKey::new(
                Ipv4Addr::from(rng.random::<u32>()),
                Ipv4Addr::from(rng.random::<u32>()),
                rng.random(),
                rng.random(),
                6,
            );
            if jenkins_hash(&k.encode(), 0) != jenkins_hash(&k.encode(), 1) {
                differ += 1;
            }
        }
        assert!(differ >= 9_900, "{differ}");
    }
}
