//! Classic libpcap capture files.
//!
//! Reading accepts microsecond and nanosecond captures in either byte order,
//! with Ethernet II (one optional 802.1Q tag) or raw IPv4 link types. Writing
//! always produces little-endian nanosecond Ethernet captures holding only the
//! protocol headers; the original length records the full frame, so payload
//! sizes survive a round trip.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use crate::error::TraceError;
use crate::flow::{FlowKey, PacketRecord, TcpFlags, PROTO_TCP, PROTO_UDP};

use super::{Trace, TraceOrigin};

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;
pub const LINKTYPE_IPV4: u32 = 228;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Format {
    swapped: bool,
    nanos: bool,
    linktype: u32,
}

impl Format {
    fn u32_at(&self, b: &[u8]) -> u32 {
        let raw = [b[0], b[1], b[2], b[3]];
        if self.swapped {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    }
}

/// Streaming reader over the packets of a capture.
///
/// Frames that are not IPv4 TCP/UDP are counted in [`PcapReader::skipped`].
/// A record cut short by end of file ends the stream and its starting byte
/// offset is reported by [`PcapReader::truncated_at`].
pub struct PcapReader<R> {
    inner: R,
    format: Format,
    offset: u64,
    skipped: u64,
    truncated_at: Option<u64>,
    done: bool,
    buf: Vec<u8>,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, TraceError> {
        let mut header = [0u8; GLOBAL_HEADER_LEN];
        if read_full(&mut inner, &mut header)? < GLOBAL_HEADER_LEN {
            return Err(TraceError::ShortHeader);
        }
        let magic = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
        let (swapped, nanos) = match magic {
            MAGIC_MICROS => (false, false),
            MAGIC_NANOS => (false, true),
            m if m.swap_bytes() == MAGIC_MICROS => (true, false),
            m if m.swap_bytes() == MAGIC_NANOS => (true, true),
            other => return Err(TraceError::BadMagic(other)),
        };
        let mut format = Format {
            swapped,
            nanos,
            linktype: 0,
        };
        // Upper bits of the link-type field carry FCS info; only the low 16 name the type.
        format.linktype = format.u32_at(&header[20..24]) & 0xffff;
        if !matches!(
            format.linktype,
            LINKTYPE_ETHERNET | LINKTYPE_RAW | LINKTYPE_IPV4
        ) {
            return Err(TraceError::UnsupportedLinkType(format.linktype));
        }
        Ok(PcapReader {
            inner,
            format,
            offset: GLOBAL_HEADER_LEN as u64,
            skipped: 0,
            truncated_at: None,
            done: false,
            buf: Vec::with_capacity(2048),
        })
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn truncated_at(&self) -> Option<u64> {
        self.truncated_at
    }

    pub fn linktype(&self) -> u32 {
        self.format.linktype
    }

    fn next_record(&mut self) -> io::Result<Option<PacketRecord>> {
        loop {
            let start = self.offset;
            let mut rh = [0u8; RECORD_HEADER_LEN];
            let got = read_full(&mut self.inner, &mut rh)?;
            if got == 0 {
                return Ok(None);
            }
            if got < RECORD_HEADER_LEN {
                self.truncated_at = Some(start);
                return Ok(None);
            }
            let secs = self.format.u32_at(&rh[0..4]) as u64;
            let frac = self.format.u32_at(&rh[4..8]) as u64;
            let incl_len = self.format.u32_at(&rh[8..12]) as usize;
            let ts_ns = secs * 1_000_000_000 + if self.format.nanos { frac } else { frac * 1000 };

            self.buf.resize(incl_len, 0);
            if read_full(&mut self.inner, &mut self.buf)? < incl_len {
                self.truncated_at = Some(start);
                return Ok(None);
            }
            self.offset += (RECORD_HEADER_LEN + incl_len) as u64;

            let ip = match self.format.linktype {
                LINKTYPE_ETHERNET => ethernet_payload(&self.buf),
                _ => Some(&self.buf[..]),
            };
            match ip.and_then(|ip| decode_ipv4(ip, ts_ns)) {
                Some(record) => return Ok(Some(record)),
                None => self.skipped += 1,
            }
        }
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = PacketRecord;

    fn next(&mut self) -> Option<PacketRecord> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(p)) => Some(p),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(_) => {
                // An I/O failure mid-stream is reported like a truncation.
                self.truncated_at.get_or_insert(self.offset);
                self.done = true;
                None
            }
        }
    }
}

/// Reads a whole capture into memory.
pub fn read_pcap(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut reader = PcapReader::new(BufReader::with_capacity(1 << 16, file))?;
    let packets: Vec<PacketRecord> = reader.by_ref().collect();
    Ok(Trace {
        origin: TraceOrigin::Pcap(path.to_path_buf()),
        packets,
        skipped: reader.skipped(),
        truncated_at: reader.truncated_at(),
    })
}

pub fn read_pcap_bytes(bytes: &[u8]) -> Result<Trace, TraceError> {
    let mut reader = PcapReader::new(bytes)?;
    let packets: Vec<PacketRecord> = reader.by_ref().collect();
    Ok(Trace {
        origin: TraceOrigin::Memory,
        packets,
        skipped: reader.skipped(),
        truncated_at: reader.truncated_at(),
    })
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn ethernet_payload(frame: &[u8]) -> Option<&[u8]> {
    if frame.len() < 14 {
        return None;
    }
    let mut ethertype = be16(frame, 12);
    let mut offset = 14;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < 18 {
            return None;
        }
        ethertype = be16(frame, 16);
        offset = 18;
    }
    (ethertype == ETHERTYPE_IPV4).then(|| &frame[offset..])
}

fn decode_ipv4(ip: &[u8], ts_ns: u64) -> Option<PacketRecord> {
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    if ihl < 20 || ip.len() < ihl {
        return None;
    }
    let total_len = be16(ip, 2) as usize;
    // Non-first fragments carry no transport header.
    if be16(ip, 6) & 0x1fff != 0 {
        return None;
    }
    let protocol = ip[9];
    let src = Ipv4Addr::from(be32(ip, 12));
    let dst = Ipv4Addr::from(be32(ip, 16));
    let l4 = &ip[ihl..];
    match protocol {
        PROTO_TCP => {
            if l4.len() < 20 {
                return None;
            }
            let data_off = (l4[12] >> 4) as usize * 4;
            if data_off < 20 {
                return None;
            }
            let key = FlowKey::new(src, dst, be16(l4, 0), be16(l4, 2), PROTO_TCP);
            let payload = total_len.saturating_sub(ihl + data_off) as u32;
            let flags = TcpFlags(l4[13]).tracked();
            Some(PacketRecord::tcp(key, ts_ns, be32(l4, 4), payload, flags))
        }
        PROTO_UDP => {
            if l4.len() < 8 {
                return None;
            }
            let key = FlowKey::new(src, dst, be16(l4, 0), be16(l4, 2), PROTO_UDP);
            let payload = total_len.saturating_sub(ihl + 8) as u32;
            Some(PacketRecord::udp(key, ts_ns, payload))
        }
        _ => None,
    }
}

/// Writes header-only Ethernet/IPv4 frames with nanosecond timestamps.
pub struct PcapWriter<W: Write> {
    inner: W,
    frame: Vec<u8>,
}

impl<W: Write> PcapWriter<W> {
    pub const SNAPLEN: u32 = 96;

    pub fn new(mut inner: W) -> io::Result<Self> {
        let mut header = Vec::with_capacity(GLOBAL_HEADER_LEN);
        header.extend_from_slice(&MAGIC_NANOS.to_le_bytes());
        header.extend_from_slice(&2u16.to_le_bytes());
        header.extend_from_slice(&4u16.to_le_bytes());
        header.extend_from_slice(&0i32.to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        header.extend_from_slice(&Self::SNAPLEN.to_le_bytes());
        header.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        inner.write_all(&header)?;
        Ok(PcapWriter {
            inner,
            frame: Vec::with_capacity(64),
        })
    }

    pub fn write_packet(&mut self, p: &PacketRecord) -> io::Result<()> {
        let orig_len = encode_headers(p, &mut self.frame);
        let secs = (p.ts_ns / 1_000_000_000) as u32;
        let nanos = (p.ts_ns % 1_000_000_000) as u32;
        let mut rh = [0u8; RECORD_HEADER_LEN];
        rh[0..4].copy_from_slice(&secs.to_le_bytes());
        rh[4..8].copy_from_slice(&nanos.to_le_bytes());
        rh[8..12].copy_from_slice(&(self.frame.len() as u32).to_le_bytes());
        rh[12..16].copy_from_slice(&orig_len.to_le_bytes());
        self.inner.write_all(&rh)?;
        self.inner.write_all(&self.frame)
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_pcap(path: impl AsRef<Path>, packets: &[PacketRecord]) -> io::Result<()> {
    let file = File::create(path)?;
    let mut w = PcapWriter::new(BufWriter::with_capacity(1 << 16, file))?;
    for p in packets {
        w.write_packet(p)?;
    }
    w.into_inner()?.flush()
}

pub fn write_pcap_bytes(packets: &[PacketRecord]) -> Vec<u8> {
    let mut w = PcapWriter::new(Vec::new()).expect("writing to a Vec cannot fail");
    for p in packets {
        w.write_packet(p).expect("writing to a Vec cannot fail");
    }
    w.into_inner().expect("writing to a Vec cannot fail")
}

/// Fills `out` with Ethernet + IPv4 + TCP/UDP headers for `p` and returns the
/// length the full frame would have with its payload.
fn encode_headers(p: &PacketRecord, out: &mut Vec<u8>) -> u32 {
    out.clear();
    out.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01]);
    out.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let l4_len = if p.key.is_tcp() { 20 } else { 8 };
    let total_len = (20 + l4_len + p.payload_len as usize).min(u16::MAX as usize) as u16;
    let ip_start = out.len();
    out.extend_from_slice(&[0x45, 0]);
    out.extend_from_slice(&total_len.to_be_bytes());
    out.extend_from_slice(&[0, 0, 0x40, 0, 64, p.key.protocol, 0, 0]);
    out.extend_from_slice(&p.key.src_ip.octets());
    out.extend_from_slice(&p.key.dst_ip.octets());
    let csum = ipv4_checksum(&out[ip_start..ip_start + 20]);
    out[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

    out.extend_from_slice(&p.key.src_port.to_be_bytes());
    out.extend_from_slice(&p.key.dst_port.to_be_bytes());
    if p.key.is_tcp() {
        out.extend_from_slice(&p.seq.to_be_bytes());
        out.extend_from_slice(&0u32.to_be_bytes());
        out.extend_from_slice(&[5 << 4, p.tcp_flags.0]);
        out.extend_from_slice(&u16::MAX.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
    } else {
        let udp_len = (8 + p.payload_len as usize).min(u16::MAX as usize) as u16;
        out.extend_from_slice(&udp_len.to_be_bytes());
        out.extend_from_slice(&[0, 0]);
    }
    14 + total_len as u32
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
