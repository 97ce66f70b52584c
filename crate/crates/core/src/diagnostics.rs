//! Diagnostic payloads for the three readout use cases and the NFC interface
//! planning rules for common BMS topologies.
//!
//! Packet layout (all integers big-endian):
//!
//! ```text
//! header:  use_case(1) origin(1) sequence_no(4) report_count(2)
//! report:  pack_id(8) timestamp(8) soc(2) soh(2) flags(2)
//!          n_cells(1) n_cells * voltage_mv(2)
//!          n_temps(1) n_temps * temperature_dk(2, signed)
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MAX_PERMILLE: u16 = 1000;
pub const MAX_CELLS: usize = 32;
pub const MAX_CELL_MV: u16 = 5000;
pub const MAX_TEMPS: usize = u8::MAX as usize;
const HEADER_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiagError {
    #[error("truncated diagnostic packet at offset {offset}")]
    Truncated { offset: usize },
    #[error("value out of range: {0}")]
    RangeViolation(String),
    #[error("unknown {field} code 0x{value:02x}")]
    UnknownCode { field: &'static str, value: u8 },
    #[error("{0} trailing bytes after packet")]
    TrailingBytes(usize),
    #[error("duplicate pack id {0}")]
    DuplicatePackId(PackId),
    #[error("no reports supplied")]
    EmptyInput,
}

/// Eight-byte battery pack identifier; hex-encoded in JSON.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackId(pub [u8; 8]);

impl PackId {
    pub fn from_hex(s: &str) -> Option<Self> {
        let v = hex::decode(s).ok()?;
        Some(Self(v.try_into().ok()?))
    }
}

impl fmt::Display for PackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PackId({self})")
    }
}

impl Serialize for PackId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PackId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PackId::from_hex(&s)
            .ok_or_else(|| serde::de::Error::custom("pack_id must be 16 hex characters"))
    }
}

/// Status bitfield carried by every report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatusFlags(pub u16);

impl StatusFlags {
    pub const FAULT: u16 = 1 << 0;
    pub const OVERTEMP: u16 = 1 << 1;
    pub const UNDERVOLT: u16 = 1 << 2;
    pub const BALANCING: u16 = 1 << 3;
    pub const STORED: u16 = 1 << 4;

    pub fn contains(self, bit: u16) -> bool {
        self.0 & bit == bit
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpcReport {
    pub pack_id: PackId,
    pub timestamp: u64,
    pub soc_permille: u16,
    pub soh_permille: u16,
    pub cell_voltages_mv: Vec<u16>,
    pub temperatures_dk: Vec<i16>,
    #[serde(default)]
    pub status_flags: StatusFlags,
}

impl BpcReport {
    pub fn validate(&self) -> Result<(), DiagError> {
        let range = |m: String| Err(DiagError::RangeViolation(m));
        if self.soc_permille > MAX_PERMILLE {
            return range(format!("soc_permille {} > 1000", self.soc_permille));
        }
        if self.soh_permille > MAX_PERMILLE {
            return range(format!("soh_permille {} > 1000", self.soh_permille));
        }
        let n = self.cell_voltages_mv.len();
        if n == 0 || n > MAX_CELLS {
            return range(format!("cell count {n} outside 1..=32"));
        }
        if let Some(v) = self.cell_voltages_mv.iter().find(|&&v| v > MAX_CELL_MV) {
            return range(format!("cell voltage {v} mV > 5000"));
        }
        if self.temperatures_dk.len() > MAX_TEMPS {
            return range(format!("{} temperatures > 255", self.temperatures_dk.len()));
        }
        Ok(())
    }

    fn encoded_len(&self) -> usize {
        8 + 8 + 2 + 2 + 2 + 1 + 2 * self.cell_voltages_mv.len() + 1 + 2 * self.temperatures_dk.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UseCase {
    ActiveSensor,
    IdleDiag,
    ActiveDiag,
}

impl UseCase {
    fn code(self) -> u8 {
        match self {
            Self::ActiveSensor => 0x01,
            Self::IdleDiag => 0x02,
            Self::ActiveDiag => 0x03,
        }
    }

    fn from_code(value: u8) -> Result<Self, DiagError> {
        match value {
            0x01 => Ok(Self::ActiveSensor),
            0x02 => Ok(Self::IdleDiag),
            0x03 => Ok(Self::ActiveDiag),
            _ => Err(DiagError::UnknownCode {
                field: "use_case",
                value,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Bpc,
    BmsController,
}

impl Origin {
    fn code(self) -> u8 {
        match self {
            Self::Bpc => 0x01,
            Self::BmsController => 0x02,
        }
    }

    fn from_code(value: u8) -> Result<Self, DiagError> {
        match value {
            0x01 => Ok(Self::Bpc),
            0x02 => Ok(Self::BmsController),
            _ => Err(DiagError::UnknownCode {
                field: "origin",
                value,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagPacket {
    pub use_case: UseCase,
    pub origin: Origin,
    pub reports: Vec<BpcReport>,
    pub sequence_no: u32,
}

impl DiagPacket {
    pub fn validate(&self) -> Result<(), DiagError> {
        match (self.use_case, self.reports.len()) {
            (_, 0) => return Err(DiagError::EmptyInput),
            (UseCase::IdleDiag, n) if n != 1 => {
                return Err(DiagError::RangeViolation(format!(
                    "idle diagnostic carries exactly one report, got {n}"
                )))
            }
            (_, n) if n > u16::MAX as usize => {
                return Err(DiagError::RangeViolation(format!("{n} reports")))
            }
            _ => {}
        }
        self.reports.iter().try_for_each(BpcReport::validate)
    }
}

/// Aggregates per-BPC reports into one active-diagnostic packet.
pub fn collect_from_bpcs(reports: Vec<BpcReport>, seq: u32) -> Result<DiagPacket, DiagError> {
    if reports.is_empty() {
        return Err(DiagError::EmptyInput);
    }
    let mut seen = HashSet::new();
    for r in &reports {
        if !seen.insert(r.pack_id) {
            return Err(DiagError::DuplicatePackId(r.pack_id));
        }
    }
    let packet = DiagPacket {
        use_case: UseCase::ActiveDiag,
        origin: Origin::BmsController,
        reports,
        sequence_no: seq,
    };
    packet.validate()?;
    Ok(packet)
}

/// Wraps the single stored pack's report into an idle-diagnostic packet.
pub fn idle_packet(report: BpcReport, seq: u32) -> Result<DiagPacket, DiagError> {
    let packet = DiagPacket {
        use_case: UseCase::IdleDiag,
        origin: Origin::Bpc,
        reports: vec![report],
        sequence_no: seq,
    };
    packet.validate()?;
    Ok(packet)
}

pub fn encode_diag(p: &DiagPacket) -> Result<Vec<u8>, DiagError> {
    p.validate()?;
    let body: usize = p.reports.iter().map(BpcReport::encoded_len).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + body);
    out.push(p.use_case.code());
    out.push(p.origin.code());
    out.extend_from_slice(&p.sequence_no.to_be_bytes());
    out.extend_from_slice(&(p.reports.len() as u16).to_be_bytes());
    for r in &p.reports {
        out.extend_from_slice(&r.pack_id.0);
        out.extend_from_slice(&r.timestamp.to_be_bytes());
        out.extend_from_slice(&r.soc_permille.to_be_bytes());
        out.extend_from_slice(&r.soh_permille.to_be_bytes());
        out.extend_from_slice(&r.status_flags.0.to_be_bytes());
        out.push(r.cell_voltages_mv.len() as u8);
        for v in &r.cell_voltages_mv {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.push(r.temperatures_dk.len() as u8);
        for t in &r.temperatures_dk {
            out.extend_from_slice(&t.to_be_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiagError> {
        if self.buf.len() - self.pos < n {
            return Err(DiagError::Truncated { offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DiagError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, DiagError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DiagError> {
        self.array().map(u16::from_be_bytes)
    }

    fn i16(&mut self) -> Result<i16, DiagError> {
        self.array().map(i16::from_be_bytes)
    }

    fn u32(&mut self) -> Result<u32, DiagError> {
        self.array().map(u32::from_be_bytes)
    }

    fn u64(&mut self) -> Result<u64, DiagError> {
        self.array().map(u64::from_be_bytes)
    }
}

pub fn decode_diag(raw: &[u8]) -> Result<DiagPacket, DiagError> {
    let mut r = Reader { buf: raw, pos: 0 };
    let use_case = UseCase::from_code(r.u8()?)?;
    let origin = Origin::from_code(r.u8()?)?;
    let sequence_no = r.u32()?;
    let count = r.u16()? as usize;
    // Each report needs at least 24 bytes; refuse counts the input cannot hold.
    if count * 24 > raw.len() - r.pos {
        return Err(DiagError::Truncated { offset: r.pos });
    }
    let mut reports = Vec::with_capacity(count);
    for _ in 0..count {
        let pack_id = PackId(r.array()?);
        let timestamp = r.u64()?;
        let soc_permille = r.u16()?;
        let soh_permille = r.u16()?;
        let status_flags = StatusFlags(r.u16()?);
        let n_cells = r.u8()? as usize;
        let cell_voltages_mv = (0..n_cells).map(|_| r.u16()).collect::<Result<_, _>>()?;
        let n_temps = r.u8()? as usize;
        let temperatures_dk = (0..n_temps).map(|_| r.i16()).collect::<Result<_, _>>()?;
        reports.push(BpcReport {
            pack_id,
            timestamp,
            soc_permille,
            soh_permille,
            cell_voltages_mv,
            temperatures_dk,
            status_flags,
        });
    }
    if r.pos != raw.len() {
        return Err(DiagError::TrailingBytes(raw.len() - r.pos));
    }
    let packet = DiagPacket {
        use_case,
        origin,
        reports,
        sequence_no,
    };
    packet.validate()?;
    Ok(packet)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Centralized,
    Modulated,
    Distributed,
    /// Independent subsystems, each with its own topology and module count.
    Decentralized {
        subsystems: Vec<(Topology, usize)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InterfacePlan {
    pub ntag_count: usize,
    pub reader_count: usize,
    /// Whether the idle (stored-pack) readout works without extra measures.
    pub idle_feasible: bool,
}

/// NFC interfaces needed for a topology with `module_count` modules.
///
/// Centralized systems need one tag and one reader regardless of size and only
/// support idle readout if the controller itself is stored. Modulated and
/// distributed systems need a tag per module plus the main module's tag, and
/// an internal reader per module plus the external one. Decentralized systems
/// sum their subsystems; `module_count` is ignored for them because each
/// subsystem carries its own count.
pub fn topology_plan(topology: &Topology, module_count: usize) -> Result<InterfacePlan, DiagError> {
    if module_count == 0 {
        return Err(DiagError::RangeViolation(
            "module count must be at least 1".into(),
        ));
    }
    Ok(match topology {
        Topology::Centralized => InterfacePlan {
            ntag_count: 1,
            reader_count: 1,
            idle_feasible: false,
        },
        Topology::Modulated | Topology::Distributed => InterfacePlan {
            ntag_count: module_count + 1,
            reader_count: module_count + 1,
            idle_feasible: true,
        },
        Topology::Decentralized { subsystems } => {
            if subsystems.is_empty() {
                return Err(DiagError::RangeViolation(
                    "decentralized topology needs at least one subsystem".into(),
                ));
            }
            let mut total = InterfacePlan {
                ntag_count: 0,
                reader_count: 0,
                idle_feasible: true,
            };
            for (t, n) in subsystems {
                let p = topology_plan(t, *n)?;
                total.ntag_count += p.ntag_count;
                total.reader_count += p.reader_count;
                total.idle_feasible &= p.idle_feasible;
            }
            total
        }
    })
}
