//! Compact NDEF-style framing for the simulated NFC link.
//!
//! Record: `type(1) | flags(1) | payload_len(4, BE) | payload`.
//! Secure payload: `iv(16) | tag(16) | add_len(2, BE) | add_data | sec_data`.

use thiserror::Error;

use crate::secure_channel::{SecureRecord, IV_LEN, TAG_LEN};

pub const RECORD_HEADER_LEN: usize = 6;
pub const SECURE_HEADER_LEN: usize = IV_LEN + TAG_LEN + 2;
pub const DEFAULT_MESSAGE_LIMIT: usize = 8 * 1024;

pub const FLAG_MB: u8 = 0x80;
pub const FLAG_ME: u8 = 0x40;
const KNOWN_FLAGS: u8 = FLAG_MB | FLAG_ME;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("input truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("inconsistent begin/end flags on record {index}")]
    BadFlags { index: usize },
    #[error("unknown or unexpected record type 0x{0:02x}")]
    UnknownType(u8),
    #[error("message of {size} bytes exceeds the {limit}-byte limit")]
    OversizeMessage { size: usize, limit: usize },
    #[error("message has no records")]
    EmptyMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RecordType {
    Handshake = 0x01,
    SndefSecure = 0x02,
    DiagPlain = 0x03,
}

impl RecordType {
    pub fn from_code(code: u8) -> Result<Self, CodecError> {
        match code {
            0x01 => Ok(Self::Handshake),
            0x02 => Ok(Self::SndefSecure),
            0x03 => Ok(Self::DiagPlain),
            other => Err(CodecError::UnknownType(other)),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdefRecord {
    pub type_code: RecordType,
    pub flags: u8,
    pub payload: Vec<u8>,
}

impl NdefRecord {
    pub fn new(type_code: RecordType, payload: Vec<u8>) -> Self {
        Self {
            type_code,
            flags: 0,
            payload,
        }
    }

    pub fn is_begin(&self) -> bool {
        self.flags & FLAG_MB != 0
    }

    pub fn is_end(&self) -> bool {
        self.flags & FLAG_ME != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdefMessage {
    pub records: Vec<NdefRecord>,
}

impl NdefMessage {
    /// Builds a message and sets MB on the first record and ME on the last.
    pub fn from_records(mut records: Vec<NdefRecord>) -> Self {
        let n = records.len();
        for (i, r) in records.iter_mut().enumerate() {
            r.flags = 0;
            if i == 0 {
                r.flags |= FLAG_MB;
            }
            if i + 1 == n {
                r.flags |= FLAG_ME;
            }
        }
        Self { records }
    }

    pub fn single(record: NdefRecord) -> Self {
        Self::from_records(vec![record])
    }

    pub fn encoded_len(&self) -> usize {
        self.records
            .iter()
            .map(|r| RECORD_HEADER_LEN + r.payload.len())
            .sum()
    }
}

fn expected_flags(index: usize, count: usize) -> u8 {
    let mut f = 0;
    if index == 0 {
        f |= FLAG_MB;
    }
    if index + 1 == count {
        f |= FLAG_ME;
    }
    f
}

pub fn encode_message(msg: &NdefMessage) -> Result<Vec<u8>, CodecError> {
    encode_message_with_limit(msg, DEFAULT_MESSAGE_LIMIT)
}

pub fn encode_message_with_limit(msg: &NdefMessage, limit: usize) -> Result<Vec<u8>, CodecError> {
    let count = msg.records.len();
    if count == 0 {
        return Err(CodecError::EmptyMessage);
    }
    for (index, r) in msg.records.iter().enumerate() {
        if r.flags != expected_flags(index, count) {
            return Err(CodecError::BadFlags { index });
        }
    }
    let size = msg.encoded_len();
    if size > limit {
        return Err(CodecError::OversizeMessage { size, limit });
    }
    let mut out = Vec::with_capacity(size);
    for r in &msg.records {
        out.push(r.type_code.code());
        out.push(r.flags);
        out.extend_from_slice(&(r.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&r.payload);
    }
    Ok(out)
}

pub fn decode_message(raw: &[u8]) -> Result<NdefMessage, CodecError> {
    decode_message_with_limit(raw, DEFAULT_MESSAGE_LIMIT)
}

pub fn decode_message_with_limit(raw: &[u8], limit: usize) -> Result<NdefMessage, CodecError> {
    if raw.len() > limit {
        return Err(CodecError::OversizeMessage {
            size: raw.len(),
            limit,
        });
    }
    if raw.is_empty() {
        return Err(CodecError::Truncated {
            needed: RECORD_HEADER_LEN,
            available: 0,
        });
    }
    let mut records = Vec::new();
    let mut rest = raw;
    loop {
        let index = records.len();
        if rest.len() < RECORD_HEADER_LEN {
            return Err(CodecError::Truncated {
                needed: RECORD_HEADER_LEN,
                available: rest.len(),
            });
        }
        let type_code = RecordType::from_code(rest[0])?;
        let flags = rest[1];
        if flags & !KNOWN_FLAGS != 0 || ((flags & FLAG_MB != 0) != (index == 0)) {
            return Err(CodecError::BadFlags { index });
        }
        let len = u32::from_be_bytes([rest[2], rest[3], rest[4], rest[5]]) as usize;
        let body = &rest[RECORD_HEADER_LEN..];
        if body.len() < len {
            return Err(CodecError::Truncated {
                needed: len,
                available: body.len(),
            });
        }
        records.push(NdefRecord {
            type_code,
            flags,
            payload: body[..len].to_vec(),
        });
        rest = &body[len..];
        if flags & FLAG_ME != 0 {
            if !rest.is_empty() {
                // Bytes after the end-marked record.
                return Err(CodecError::BadFlags { index });
            }
            return Ok(NdefMessage { records });
        }
        if rest.is_empty() {
            return Err(CodecError::BadFlags { index });
        }
    }
}

/// Serializes a secure record into an SNDEF payload.
pub fn encode_secure_payload(record: &SecureRecord) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(SECURE_HEADER_LEN + record.add_data.len() + record.sec_data.len());
    out.extend_from_slice(&record.iv);
    out.extend_from_slice(&record.tag);
    out.extend_from_slice(&(record.add_data.len() as u16).to_be_bytes());
    out.extend_from_slice(&record.add_data);
    out.extend_from_slice(&record.sec_data);
    out
}

pub fn decode_secure_payload(payload: &[u8]) -> Result<SecureRecord, CodecError> {
    if payload.len() < SECURE_HEADER_LEN {
        return Err(CodecError::Truncated {
            needed: SECURE_HEADER_LEN,
            available: payload.len(),
        });
    }
    let mut iv = [0u8; IV_LEN];
    iv.copy_from_slice(&payload[..IV_LEN]);
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&payload[IV_LEN..IV_LEN + TAG_LEN]);
    let add_len = u16::from_be_bytes([payload[32], payload[33]]) as usize;
    let rest = &payload[SECURE_HEADER_LEN..];
    if rest.len() < add_len {
        return Err(CodecError::Truncated {
            needed: add_len,
            available: rest.len(),
        });
    }
    let (add_data, sec_data) = rest.split_at(add_len);
    Ok(SecureRecord {
        iv,
        sec_data: sec_data.to_vec(),
        add_data: add_data.to_vec(),
        tag,
    })
}

pub fn wrap_secure(record: &SecureRecord) -> NdefRecord {
    NdefRecord::new(RecordType::SndefSecure, encode_secure_payload(record))
}

pub fn unwrap_secure(rec: &NdefRecord) -> Result<SecureRecord, CodecError> {
    if rec.type_code != RecordType::SndefSecure {
        return Err(CodecError::UnknownType(rec.type_code.code()));
    }
    decode_secure_payload(&rec.payload)
}
