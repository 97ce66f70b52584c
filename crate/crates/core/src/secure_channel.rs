//! Symmetric core of the readout protocol: session-key derivation from the
//! pre-shared master key, the double-encryption challenge transform, and the
//! tag-chained AES-CBC Encrypt-then-MAC record channel.

use std::fmt;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::block::{self, Block, BLOCK_LEN};

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;
pub const IV_LEN: usize = 16;

const ENC_LABEL: &[u8] = b"SKEYENC";
const MAC_LABEL: &[u8] = b"SKEYMAC";
// Output length in bits, big-endian.
const KDF_OUT_BITS: [u8; 2] = [0x00, 0x80];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("nonce is all-zero or repeats the peer nonce")]
    InvalidNonce,
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("bad length for {what}: {len} bytes")]
    BadLength { what: &'static str, len: usize },
    #[error("derived encryption and MAC keys collide")]
    KeyCollision,
    #[error("channel has no session keys")]
    ChannelNotEstablished,
    #[error("record tag does not verify at the current chain position")]
    TagMismatch,
    #[error("record padding is invalid")]
    PaddingError,
}

/// Pre-embedded 128-bit master key. Not serializable and redacted in `Debug`.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey([u8; KEY_LEN]);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, ChannelError> {
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| ChannelError::BadLength {
            what: "master key",
            len: bytes.len(),
        })?;
        Ok(Self(arr))
    }

    pub fn from_hex(s: &str) -> Result<Self, ChannelError> {
        let bytes = hex::decode(s.trim()).map_err(|_| ChannelError::BadLength {
            what: "master key hex",
            len: s.trim().len(),
        })?;
        Self::from_slice(&bytes)
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        Self(k)
    }

    pub(crate) fn bytes(&self) -> &Block {
        &self.0
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(<redacted>)")
    }
}

/// Encryption and MAC halves of the session key. The halves always differ.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    k_enc: Block,
    k_mac: Block,
}

impl SessionKeys {
    pub fn from_parts(k_enc: Block, k_mac: Block) -> Result<Self, ChannelError> {
        if k_enc == k_mac {
            return Err(ChannelError::KeyCollision);
        }
        Ok(Self { k_enc, k_mac })
    }

    pub fn enc_key(&self) -> &Block {
        &self.k_enc
    }

    pub fn mac_key(&self) -> &Block {
        &self.k_mac
    }
}

impl fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKeys(<redacted>)")
    }
}

/// 128-bit challenge nonce. Never all-zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Nonce([u8; NONCE_LEN]);

impl Nonce {
    pub fn new(bytes: [u8; NONCE_LEN]) -> Result<Self, ChannelError> {
        if bytes.iter().all(|&b| b == 0) {
            return Err(ChannelError::InvalidNonce);
        }
        Ok(Self(bytes))
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, ChannelError> {
        let arr: [u8; NONCE_LEN] = bytes.try_into().map_err(|_| ChannelError::BadLength {
            what: "nonce",
            len: bytes.len(),
        })?;
        Self::new(arr)
    }

    /// Draws a fresh nonce, redrawing on the all-zero value.
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let mut b = [0u8; NONCE_LEN];
            rng.fill_bytes(&mut b);
            if let Ok(n) = Self::new(b) {
                return n;
            }
        }
    }

    /// Draws a fresh nonce distinct from `other`.
    pub fn random_distinct<R: RngCore + CryptoRng>(rng: &mut R, other: &Nonce) -> Self {
        loop {
            let n = Self::random(rng);
            if n != *other {
                return n;
            }
        }
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

fn kdf_input(counter: u8, label: &[u8], ch_r: &Nonce, ch_t: &Nonce) -> Vec<u8> {
    let mut buf = Vec::with_capacity(1 + label.len() + 2 * NONCE_LEN + 2);
    buf.push(counter);
    buf.extend_from_slice(label);
    buf.extend_from_slice(&ch_r.0);
    buf.extend_from_slice(&ch_t.0);
    buf.extend_from_slice(&KDF_OUT_BITS);
    buf
}

/// Counter-mode CMAC PRF over both nonces with distinct labels for the
/// encryption and MAC halves.
pub fn derive_session_keys(
    master: &MasterKey,
    ch_r: &Nonce,
    ch_t: &Nonce,
) -> Result<SessionKeys, ChannelError> {
    if ch_r == ch_t {
        return Err(ChannelError::InvalidNonce);
    }
    let k_enc = block::cmac(master.bytes(), &kdf_input(0x01, ENC_LABEL, ch_r, ch_t));
    let k_mac = block::cmac(master.bytes(), &kdf_input(0x02, MAC_LABEL, ch_r, ch_t));
    SessionKeys::from_parts(k_enc, k_mac)
}

const ZERO_IV: Block = [0u8; BLOCK_LEN];

/// Pads `payload` and applies AES-CBC encryption twice under `key`, zero IV on
/// both passes.
pub fn double_encrypt(key: &MasterKey, payload: &[u8]) -> Result<Vec<u8>, ChannelError> {
    if payload.is_empty() {
        return Err(ChannelError::EmptyPayload);
    }
    double_encrypt_blocks(key, &block::pad(payload))
}

/// Unpadded double encryption over block-aligned input (the challenge
/// transform used by the controller).
pub fn double_encrypt_blocks(key: &MasterKey, data: &[u8]) -> Result<Vec<u8>, ChannelError> {
    let bad = |len| ChannelError::BadLength {
        what: "double-encrypt input",
        len,
    };
    let once = block::cbc_encrypt(key.bytes(), &ZERO_IV, data).map_err(|e| bad(e.0))?;
    block::cbc_encrypt(key.bytes(), &ZERO_IV, &once).map_err(|e| bad(e.0))
}

/// D(D(data)) with zero IVs. No padding is removed; see [`strip_padding`].
pub fn double_decrypt(key: &MasterKey, data: &[u8]) -> Result<Vec<u8>, ChannelError> {
    let bad = |len| ChannelError::BadLength {
        what: "double-decrypt input",
        len,
    };
    let once = block::cbc_decrypt(key.bytes(), &ZERO_IV, data).map_err(|e| bad(e.0))?;
    block::cbc_decrypt(key.bytes(), &ZERO_IV, &once).map_err(|e| bad(e.0))
}

pub fn strip_padding(data: &[u8]) -> Result<&[u8], ChannelError> {
    block::unpad(data).map_err(|_| ChannelError::PaddingError)
}

/// CMAC over `sec_data | iv | add_data | previous_tag`.
pub fn compute_chained_tag(
    k_mac: &Block,
    sec_data: &[u8],
    iv: &[u8],
    add_data: &[u8],
    previous_tag: &[u8],
) -> Result<[u8; TAG_LEN], ChannelError> {
    if iv.len() != IV_LEN {
        return Err(ChannelError::BadLength {
            what: "iv",
            len: iv.len(),
        });
    }
    if previous_tag.len() != TAG_LEN {
        return Err(ChannelError::BadLength {
            what: "previous tag",
            len: previous_tag.len(),
        });
    }
    let mut buf = Vec::with_capacity(sec_data.len() + IV_LEN + add_data.len() + TAG_LEN);
    buf.extend_from_slice(sec_data);
    buf.extend_from_slice(iv);
    buf.extend_from_slice(add_data);
    buf.extend_from_slice(previous_tag);
    Ok(block::cmac(k_mac, &buf))
}

/// One secured record: ciphertext plus the chained tag that authenticates it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureRecord {
    pub iv: [u8; IV_LEN],
    pub sec_data: Vec<u8>,
    pub add_data: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

/// Per-endpoint channel state. Send and receive chains are independent and
/// both start at the all-zero sentinel.
#[derive(Debug, Clone, Default)]
pub struct ChannelState {
    keys: Option<SessionKeys>,
    last_tag_sent: [u8; TAG_LEN],
    last_tag_received: [u8; TAG_LEN],
    records_sealed: u64,
    records_opened: u64,
}

impl ChannelState {
    pub fn new(keys: SessionKeys) -> Self {
        Self {
            keys: Some(keys),
            ..Self::default()
        }
    }

    pub fn is_established(&self) -> bool {
        self.keys.is_some()
    }

    pub fn keys(&self) -> Option<&SessionKeys> {
        self.keys.as_ref()
    }

    pub fn last_tag_sent(&self) -> &[u8; TAG_LEN] {
        &self.last_tag_sent
    }

    pub fn last_tag_received(&self) -> &[u8; TAG_LEN] {
        &self.last_tag_received
    }

    pub fn records_sealed(&self) -> u64 {
        self.records_sealed
    }

    pub fn records_opened(&self) -> u64 {
        self.records_opened
    }

    pub fn seal_record<R: RngCore + CryptoRng>(
        &mut self,
        plaintext: &[u8],
        add_data: &[u8],
        rng: &mut R,
    ) -> Result<SecureRecord, ChannelError> {
        let keys = self
            .keys
            .as_ref()
            .ok_or(ChannelError::ChannelNotEstablished)?;
        let mut iv = [0u8; IV_LEN];
        rng.fill_bytes(&mut iv);
        let sec_data = block::cbc_encrypt(keys.enc_key(), &iv, &block::pad(plaintext))
            .expect("padded input is block aligned");
        let tag = compute_chained_tag(
            keys.mac_key(),
            &sec_data,
            &iv,
            add_data,
            &self.last_tag_sent,
        )?;
        self.last_tag_sent = tag;
        self.records_sealed += 1;
        Ok(SecureRecord {
            iv,
            sec_data,
            add_data: add_data.to_vec(),
            tag,
        })
    }

    /// Verifies the chained tag, then decrypts. Nothing is decrypted for a
    /// record whose tag fails, and chain state only advances on success.
    pub fn open_record(&mut self, record: &SecureRecord) -> Result<Vec<u8>, ChannelError> {
        let keys = self
            .keys
            .as_ref()
            .ok_or(ChannelError::ChannelNotEstablished)?;
        let expected = compute_chained_tag(
            keys.mac_key(),
            &record.sec_data,
            &record.iv,
            &record.add_data,
            &self.last_tag_received,
        )?;
        if !block::ct_eq(&expected, &record.tag) {
            return Err(ChannelError::TagMismatch);
        }
        let padded = block::cbc_decrypt(keys.enc_key(), &record.iv, &record.sec_data)
            .map_err(|_| ChannelError::PaddingError)?;
        let plaintext = strip_padding(&padded)?.to_vec();
        self.last_tag_received = record.tag;
        self.records_opened += 1;
        Ok(plaintext)
    }
}

/// Free-function form of [`ChannelState::seal_record`].
pub fn seal_record<R: RngCore + CryptoRng>(
    state: &mut ChannelState,
    plaintext: &[u8],
    add_data: &[u8],
    rng: &mut R,
) -> Result<SecureRecord, ChannelError> {
    state.seal_record(plaintext, add_data, rng)
}

/// Free-function form of [`ChannelState::open_record`].
pub fn open_record(
    state: &mut ChannelState,
    record: &SecureRecord,
) -> Result<Vec<u8>, ChannelError> {
    state.open_record(record)
}
