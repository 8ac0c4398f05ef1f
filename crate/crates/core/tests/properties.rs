use std::collections::HashMap;

use etherparse::{Ipv4Header, TcpHeader, UdpHeader};
use proptest::prelude::*;

use psketch::flow::{PROTO_TCP, PROTO_UDP};
use psketch::trace::{generate, read_pcap_bytes, write_pcap_bytes, SynthConfig};
use psketch::{
    oracle, CompatFlags, FlowKey, PacketRecord, Pipeline, PipelineConfig, ReportSource, TcpFlags,
};

const MAX_TS: u64 = (u32::MAX as u64) * 1_000_000_000;

fn arb_key() -> impl Strategy<Value = FlowKey> {
    (
        any::<[u8; 4]>(),
        any::<[u8; 4]>(),
        any::<u16>(),
        any::<u16>(),
        prop_oneof![Just(PROTO_TCP), Just(PROTO_UDP)],
    )
        .prop_map(|(s, d, sp, dp, proto)| FlowKey::new(s, d, sp, dp, proto))
}

fn arb_record() -> impl Strategy<Value = PacketRecord> {
    (
        arb_key(),
        0..MAX_TS,
        any::<u32>(),
        0u32..=65_495,
        any::<u8>(),
    )
        .prop_map(|(key, ts, seq, len, flags)| {
            if key.protocol == PROTO_TCP {
                PacketRecord::tcp(key, ts, seq, len, TcpFlags(flags).tracked())
            } else {
                PacketRecord::udp(key, ts, len)
            }
        })
}

/// Streams over a small key pool so flows repeat and collide.
fn arb_stream(max_len: usize) -> impl Strategy<Value = (Vec<FlowKey>, Vec<PacketRecord>)> {
    prop::collection::vec(arb_key(), 2..40)
        .prop_flat_map(move |keys| {
            let n = keys.len();
            let packet = (0..n, 0u64..6_000_000, any::<u32>(), 0u32..1500, any::<u8>());
            (Just(keys), prop::collection::vec(packet, 1..max_len))
        })
        .prop_map(|(keys, raw)| {
            let mut ts = 0;
            let packets = raw
                .into_iter()
                .map(|(i, gap, seq, len, flags)| {
                    ts += gap;
                    let key = keys[i];
                    if key.protocol == PROTO_TCP {
                        PacketRecord::tcp(key, ts, seq % 20_000, len, TcpFlags(flags).tracked())
                    } else {
                        PacketRecord::udp(key, ts, len)
                    }
                })
                .collect();
            (keys, packets)
        })
}

fn small_config(flags: CompatFlags) -> PipelineConfig {
    PipelineConfig {
        heavy_table_size: 8,
        vote_threshold: 2,
        lc_size: 1024,
        cms_width: 16,
        flags,
        ..PipelineConfig::default()
    }
}

fn arb_flags() -> impl Strategy<Value = CompatFlags> {
    (0usize..16).prop_map(|i| CompatFlags::all_combinations().nth(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pcap_round_trip(packets in prop::collection::vec(arb_record(), 0..60)) {
        let back = read_pcap_bytes(&write_pcap_bytes(&packets)).unwrap();
        prop_assert_eq!(back.packets, packets);
        prop_assert_eq!(back.skipped, 0);
        prop_assert_eq!(back.truncated_at, None);
    }

    #[test]
    fn written_frames_decode_with_reference_parser(p in arb_record()) {
        let bytes = write_pcap_bytes(&[p]);
        let frame = &bytes[24 + 16..];
        prop_assert_eq!(&frame[12..14], &[0x08, 0x00]);
        let (ip, rest) = Ipv4Header::from_slice(&frame[14..]).unwrap();
        prop_assert_eq!(ip.header_checksum, ip.calc_header_checksum());
        prop_assert_eq!(ip.source, p.key.src_ip.octets());
        prop_assert_eq!(ip.destination, p.key.dst_ip.octets());
        prop_assert_eq!(ip.protocol.0, p.key.protocol);
        let l4 = if p.key.protocol == PROTO_TCP { 20 } else { 8 };
        prop_assert_eq!(ip.total_len as u32, 20 + l4 + p.payload_len);
        if p.key.protocol == PROTO_TCP {
            let (tcp, _) = TcpHeader::from_slice(rest).unwrap();
            prop_assert_eq!(tcp.source_port, p.key.src_port);
            prop_assert_eq!(tcp.destination_port, p.key.dst_port);
            prop_assert_eq!(tcp.sequence_number, p.seq);
            prop_assert_eq!(tcp.syn, p.tcp_flags.contains(TcpFlags::SYN));
            prop_assert_eq!(tcp.fin, p.tcp_flags.contains(TcpFlags::FIN));
            prop_assert_eq!(tcp.rst, p.tcp_flags.contains(TcpFlags::RST));
            prop_assert_eq!(tcp.ack, p.tcp_flags.contains(TcpFlags::ACK));
        } else {
            let (udp, _) = UdpHeader::from_slice(rest).unwrap();
            prop_assert_eq!(udp.source_port, p.key.src_port);
            prop_assert_eq!(udp.destination_port, p.key.dst_port);
            prop_assert_eq!(udp.length as u32, 8 + p.payload_len);
        }
    }

    #[test]
    fn every_packet_is_accounted_for((keys, packets) in arb_stream(400), flags in arb_flags()) {
        let mut pipeline = Pipeline::new(small_config(flags)).unwrap();
        for k in keys.iter().take(3) {
            pipeline.register_priority(*k).unwrap();
        }
        pipeline.process_all(&packets);
        let stats = *pipeline.stats();
        prop_assert!(stats.is_balanced());
        prop_assert_eq!(stats.packets_processed, packets.len() as u64);

        let priority: u64 = pipeline.priority_reports().iter().map(|r| r.packet_count).sum();
        prop_assert_eq!(priority, stats.priority_hits);
        if !flags.alg1_literal_routing {
            let heavy: u64 = pipeline.heavy().occupied().map(|e| e.packet_count).sum();
            for layer in 0..3 {
                let sketch: u64 = pipeline.cms().layer(layer).iter().map(|c| c.packet_count).sum();
                prop_assert_eq!(priority + heavy + sketch, stats.packets_processed);
            }
        }
    }

    #[test]
    fn priority_counts_are_exact((keys, packets) in arb_stream(400), flags in arb_flags()) {
        let truth = oracle(&packets);
        let mut pipeline = Pipeline::new(small_config(flags)).unwrap();
        for k in keys.iter().step_by(2) {
            pipeline.register_priority(*k).unwrap();
        }
        pipeline.process_all(&packets);
        for r in pipeline.priority_reports() {
            prop_assert_eq!(r.packet_count, truth.get(&r.key).packet_count);
            prop_assert_eq!(r.source, ReportSource::Priority);
        }
    }

    #[test]
    fn reconstruction_never_undercounts((_keys, packets) in arb_stream(600)) {
        let truth = oracle(&packets);
        let mut pipeline = Pipeline::new(small_config(CompatFlags::default())).unwrap();
        pipeline.process_all(&packets);
        for r in pipeline.heavy_reports() {
            let t = truth.get(&r.key).packet_count;
            prop_assert!(r.packet_count >= t, "{} reported {} < {}", r.key, r.packet_count, t);
            if !r.kick_flag {
                prop_assert_eq!(r.packet_count, t);
                prop_assert_eq!(r.source, ReportSource::Heavy);
            } else {
                prop_assert_eq!(r.source, ReportSource::HeavyCms);
            }
        }
    }

    #[test]
    fn top_k_is_sorted_prefix((_keys, packets) in arb_stream(300), k in 1usize..10) {
        let mut pipeline = Pipeline::new(small_config(CompatFlags::default())).unwrap();
        pipeline.process_all(&packets);
        let all = pipeline.heavy_reports();
        let top = pipeline.top_k(k);
        prop_assert_eq!(&all[..top.len()], &top[..]);
        prop_assert!(top.len() == k.min(all.len()));
        for w in all.windows(2) {
            prop_assert!(
                w[0].packet_count > w[1].packet_count
                    || (w[0].packet_count == w[1].packet_count && w[0].key.encode() < w[1].key.encode())
            );
        }
    }

    #[test]
    fn config_text_round_trips(
        heavy in 1usize..100_000,
        vote in 1u64..64,
        thr in 0u64..10_000_000_000,
        lc in 1usize..1_000_000,
        width in 1usize..10_000,
        seed in any::<u32>(),
        flags in arb_flags(),
    ) {
        let cfg = PipelineConfig {
            heavy_table_size: heavy,
            vote_threshold: vote,
            retrans_threshold_ns: thr,
            lc_size: lc,
            cms_width: width,
            seed_heavy: seed,
            seed_lc: seed.wrapping_add(1),
            seed_cms: [seed.wrapping_add(2), seed.wrapping_add(3), seed.wrapping_add(4)],
            flags,
            ..PipelineConfig::default()
        };
        prop_assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generator_truth_matches_oracle(
        flows in 1usize..300,
        extra in 0u64..3000,
        alpha in 0.0f64..2.0,
        tcp in 0.0f64..=1.0,
        rate in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let cfg = SynthConfig {
            flow_count: flows,
            total_packets: flows as u64 + extra,
            zipf_alpha: alpha,
            tcp_fraction: tcp,
            retrans_rate: rate,
            rng_seed: seed,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        prop_assert_eq!(&a.trace.packets, &b.trace.packets);
        prop_assert_eq!(&a.truth, &oracle(&a.trace.packets));
        prop_assert_eq!(a.truth.distinct_flows, flows);
        prop_assert_eq!(a.truth.total_packets(), cfg.total_packets + a.injected_retrans);
        prop_assert_eq!(a.truth.total_retrans(), a.injected_retrans);
        prop_assert!(a.trace.packets.windows(2).all(|w| w[0].ts_ns < w[1].ts_ns));
    }
}

#[test]
fn default_seeds_spread_keys_evenly() {
    let cfg = PipelineConfig::default();
    let mut pipeline = Pipeline::new(PipelineConfig {
        heavy_table_size: 64,
        ..cfg
    })
    .unwrap();
    let mut per_slot: HashMap<usize, u32> = HashMap::new();
    for i in 0..6400u32 {
        let key = FlowKey::new(i.to_be_bytes(), [10, 0, 0, 1], 1, 2, PROTO_UDP);
        *per_slot.entry(pipeline.heavy().slot_of(&key)).or_default() += 1;
        pipeline.process_packet(&PacketRecord::udp(key, i as u64, 0));
    }
    assert_eq!(per_slot.len(), 64);
    assert!(
        per_slot.values().all(|&c| (50..=150).contains(&c)),
        "{per_slot:?}"
    );
}
