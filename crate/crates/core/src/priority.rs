//! Exact tracking for operator-designated flows.
//!
//! Registered flows bypass every approximate structure. Counting is lossless
//! for any flow registered before its first packet.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::error::{LineError, PriorityError};
use crate::flow::{FlowKey, PacketRecord, TcpTrackState, PROTO_TCP, PROTO_UDP};

pub const DEFAULT_PRIORITY_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct PriorityEntry {
    pub packet_count: u64,
    pub retrans_count: u64,
    pub tcp: Option<TcpTrackState>,
    pub initialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registered {
    New,
    AlreadyPresent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityTable {
    entries: HashMap<FlowKey, PriorityEntry>,
    capacity: usize,
}

impl Default for PriorityTable {
    fn default() -> Self {
        PriorityTable::with_capacity(DEFAULT_PRIORITY_CAPACITY)
    }
}

impl PriorityTable {
    pub fn with_capacity(capacity: usize) -> Self {
        PriorityTable {
            entries: HashMap::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &FlowKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &FlowKey) -> Option<&PriorityEntry> {
        self.entries.get(key)
    }

    /// Registering an existing key is a no-op and leaves its counters alone.
    pub fn register(&mut self, key: FlowKey) -> Result<Registered, PriorityError> {
        if self.entries.contains_key(&key) {
            return Ok(Registered::AlreadyPresent);
        }
        if self.entries.len() >= self.capacity {
            return Err(PriorityError::AtCapacity(self.capacity));
        }
        self.entries.insert(key, PriorityEntry::default());
        Ok(Registered::New)
    }

    pub fn deregister(&mut self, key: &FlowKey) -> Option<PriorityEntry> {
        self.entries.remove(key)
    }

    #[inline]
    pub fn process(&mut self, p: &PacketRecord, threshold_ns: u64, literal_update: bool) -> Lookup {
        let Some(entry) = self.entries.get_mut(&p.key) else {
            return Lookup::Miss;
        };
        entry.packet_count += 1;
        if p.key.is_tcp() {
            match entry.tcp.as_mut() {
                Some(state) if entry.initialized => {
                    if state.observe(p, threshold_ns, literal_update) {
                        entry.retrans_count += 1;
                    }
                }
                _ => entry.tcp = Some(TcpTrackState::start(p)),
            }
        }
        entry.initialized = true;
        Lookup::Hit
    }

    /// All entries, ordered by canonical key encoding.
    pub fn snapshot(&self) -> Vec<(FlowKey, PriorityEntry)> {
        let mut out: Vec<_> = self.entries.iter().map(|(k, e)| (*k, *e)).collect();
        out.sort_by_key(|(k, _)| k.encode());
        out
    }
}

/// Parses a priority key list: `src_ip,dst_ip,src_port,dst_port,proto` per
/// line, `#` starts a comment. Protocol is `6`/`17` or `tcp`/`udp`.
pub fn parse_priority_keys(text: &str) -> Result<Vec<FlowKey>, LineError> {
    let mut keys = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        keys.push(parse_key_fields(line, idx + 1)?);
    }
    Ok(keys)
}

pub(crate) fn parse_key_fields(line: &str, lineno: usize) -> Result<FlowKey, LineError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 5 {
        return Err(LineError::new(
            lineno,
            format!("expected 5 comma-separated fields, found {}", fields.len()),
        ));
    }
    let ip = |s: &str, what: &str| {
        s.parse::<Ipv4Addr>()
            .map_err(|_| LineError::new(lineno, format!("bad {what} address {s:?}")))
    };
    let port = |s: &str, what: &str| {
        s.parse::<u16>()
            .map_err(|_| LineError::new(lineno, format!("bad {what} port {s:?}")))
    };
    let protocol = match fields[4].to_ascii_lowercase().as_str() {
        "tcp" => PROTO_TCP,
        "udp" => PROTO_UDP,
        other => other
            .parse::<u8>()
            .map_err(|_| LineError::new(lineno, format!("bad protocol {other:?}")))?,
    };
    let key = FlowKey::new(
        ip(fields[0], "source")?,
        ip(fields[1], "destination")?,
        port(fields[2], "source")?,
        port(fields[3], "destination")?,
        protocol,
    );
    if !key.is_admissible() {
        return Err(LineError::new(
            lineno,
            format!("protocol {protocol} is neither TCP (6) nor UDP (17)"),
        ));
    }
    Ok(key)
}
