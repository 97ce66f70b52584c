//! Five-message mutual authentication with session-key confirmation.
//!
//! ```text
//! 1) R -> C : N_R, ch_r
//! 2) C -> R : M_N, ch_t, E(E(M_N | ch_r))
//! 3) R -> C : D(D(N_R | ch_t))
//! 4) C -> R : seal_KS(M_N | msg1 | msg3)
//! 5) R -> C : seal_KS(N_R | msg2 | msg4)
//! ```
//!
//! The controller only ever runs the encryption direction over challenge
//! material and the reader only the decryption direction, so neither side can
//! be used as an oracle for the other's response.
//!
//! Wire layout of every message: `msg_no(1) | sender_id(4) | body_len(2, BE) | body`.

use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::Serialize;
use thiserror::Error;

use crate::secure_channel::{
    derive_session_keys, double_decrypt, double_encrypt_blocks, ChannelError, ChannelState,
    MasterKey, Nonce, SessionKeys, NONCE_LEN,
};
use crate::sndef::{decode_secure_payload, encode_secure_payload};

pub const ID_LEN: usize = 4;
pub const HEADER_LEN: usize = 1 + ID_LEN + 2;
pub const CHALLENGE_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("operation not allowed in phase {found:?} for role {role:?}")]
    WrongPhase { role: Role, found: Phase },
    #[error("nonce is all-zero or equal to the other nonce")]
    InvalidNonce,
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("challenge response does not verify")]
    AuthFailure,
    #[error("session key confirmation failed: {0}")]
    KeyConfirmFailure(String),
    #[error("channel error: {0}")]
    Channel(#[from] ChannelError),
}

impl HandshakeError {
    /// Short stable name used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::WrongPhase { .. } => "WrongPhase",
            Self::InvalidNonce => "InvalidNonce",
            Self::MalformedMessage(_) => "MalformedMessage",
            Self::AuthFailure => "AuthFailure",
            Self::KeyConfirmFailure(_) => "KeyConfirmFailure",
            Self::Channel(_) => "ChannelError",
        }
    }
}

fn malformed(why: impl Into<String>) -> HandshakeError {
    HandshakeError::MalformedMessage(why.into())
}

/// Four-byte principal identifier (`N_R` or `M_N`). Never zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrincipalId([u8; ID_LEN]);

impl PrincipalId {
    pub fn new(bytes: [u8; ID_LEN]) -> Option<Self> {
        (bytes != [0; ID_LEN]).then_some(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; ID_LEN] {
        &self.0
    }
}

impl fmt::Debug for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrincipalId({})", hex::encode(self.0))
    }
}

impl fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Reader,
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Phase {
    Init,
    Challenged,
    Authenticated,
    KeyConfirmSent,
    Established,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeMessage {
    pub msg_no: u8,
    pub sender_id: PrincipalId,
    pub body: Vec<u8>,
}

impl HandshakeMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.push(self.msg_no);
        out.extend_from_slice(&self.sender_id.0);
        out.extend_from_slice(&(self.body.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(raw: &[u8]) -> Result<Self, HandshakeError> {
        if raw.len() < HEADER_LEN {
            return Err(malformed(format!(
                "{} bytes is shorter than a header",
                raw.len()
            )));
        }
        let msg_no = raw[0];
        if !(1..=5).contains(&msg_no) {
            return Err(malformed(format!("message number {msg_no}")));
        }
        let sender_id = PrincipalId::new([raw[1], raw[2], raw[3], raw[4]])
            .ok_or_else(|| malformed("zero sender id"))?;
        let body_len = u16::from_be_bytes([raw[5], raw[6]]) as usize;
        let body = &raw[HEADER_LEN..];
        if body.len() != body_len {
            return Err(malformed(format!(
                "declared body length {body_len}, got {}",
                body.len()
            )));
        }
        Ok(Self {
            msg_no,
            sender_id,
            body: body.to_vec(),
        })
    }
}

/// `id | nonce` zero-extended to two cipher blocks.
fn challenge_block(id: &PrincipalId, nonce: &Nonce) -> [u8; CHALLENGE_LEN] {
    let mut out = [0u8; CHALLENGE_LEN];
    out[..ID_LEN].copy_from_slice(&id.0);
    out[ID_LEN..ID_LEN + NONCE_LEN].copy_from_slice(nonce.as_bytes());
    out
}

/// Controller-side challenge response: `E(E(M_N | ch_r))`.
pub fn controller_challenge_response(
    master: &MasterKey,
    controller: &PrincipalId,
    ch_r: &Nonce,
) -> Vec<u8> {
    double_encrypt_blocks(master, &challenge_block(controller, ch_r))
        .expect("challenge block is two cipher blocks")
}

/// Reader-side challenge response: `D(D(N_R | ch_t))`.
pub fn reader_challenge_response(
    master: &MasterKey,
    reader: &PrincipalId,
    ch_t: &Nonce,
) -> Vec<u8> {
    double_decrypt(master, &challenge_block(reader, ch_t))
        .expect("challenge block is two cipher blocks")
}

/// Protocol state for one endpoint of one session.
#[derive(Debug)]
pub struct HandshakeState {
    role: Role,
    self_id: PrincipalId,
    peer_id: Option<PrincipalId>,
    master: MasterKey,
    ch_r: Option<Nonce>,
    ch_t: Option<Nonce>,
    transcript: Vec<Vec<u8>>,
    sent: Vec<Vec<u8>>,
    phase: Phase,
    channel: Option<ChannelState>,
}

impl HandshakeState {
    pub fn reader(self_id: PrincipalId, master: MasterKey) -> Self {
        Self::new(Role::Reader, self_id, master)
    }

    pub fn controller(self_id: PrincipalId, master: MasterKey) -> Self {
        Self::new(Role::Controller, self_id, master)
    }

    fn new(role: Role, self_id: PrincipalId, master: MasterKey) -> Self {
        Self {
            role,
            self_id,
            peer_id: None,
            master,
            ch_r: None,
            ch_t: None,
            transcript: Vec::new(),
            sent: Vec::new(),
            phase: Phase::Init,
            channel: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn self_id(&self) -> PrincipalId {
        self.self_id
    }

    pub fn peer_id(&self) -> Option<PrincipalId> {
        self.peer_id
    }

    pub fn ch_r(&self) -> Option<&Nonce> {
        self.ch_r.as_ref()
    }

    pub fn ch_t(&self) -> Option<&Nonce> {
        self.ch_t.as_ref()
    }

    /// Raw bytes of every message received, in order.
    pub fn transcript(&self) -> &[Vec<u8>] {
        &self.transcript
    }

    pub fn session_keys(&self) -> Option<&SessionKeys> {
        self.channel.as_ref().and_then(ChannelState::keys)
    }

    /// Live record channel; available once the session is established.
    pub fn channel_mut(&mut self) -> Option<&mut ChannelState> {
        if self.phase == Phase::Established {
            self.channel.as_mut()
        } else {
            None
        }
    }

    pub fn into_channel(self) -> Option<ChannelState> {
        if self.phase == Phase::Established {
            self.channel
        } else {
            None
        }
    }

    fn expect(&self, role: Role, phase: Phase) -> Result<(), HandshakeError> {
        if self.role != role || self.phase != phase {
            return Err(HandshakeError::WrongPhase {
                role: self.role,
                found: self.phase,
            });
        }
        Ok(())
    }

    // Any protocol failure is terminal for the session.
    fn guard<T>(&mut self, r: Result<T, HandshakeError>) -> Result<T, HandshakeError> {
        if r.is_err() {
            self.phase = Phase::Failed;
        }
        r
    }

    fn parse(
        &self,
        raw: &[u8],
        msg_no: u8,
        body_len: Option<usize>,
    ) -> Result<HandshakeMessage, HandshakeError> {
        let msg = HandshakeMessage::decode(raw)?;
        if msg.msg_no != msg_no {
            return Err(malformed(format!(
                "expected message {msg_no}, got {}",
                msg.msg_no
            )));
        }
        if let Some(len) = body_len {
            if msg.body.len() != len {
                return Err(malformed(format!(
                    "message {msg_no} body is {} bytes, expected {len}",
                    msg.body.len()
                )));
            }
        }
        if msg.sender_id == self.self_id {
            return Err(malformed("sender id equals own id"));
        }
        if let Some(peer) = self.peer_id {
            if msg.sender_id != peer {
                return Err(malformed("sender id does not match peer"));
            }
        }
        Ok(msg)
    }

    fn emit(&mut self, msg_no: u8, body: Vec<u8>) -> HandshakeMessage {
        let msg = HandshakeMessage {
            msg_no,
            sender_id: self.self_id,
            body,
        };
        self.sent.push(msg.encode());
        msg
    }

    /// Message 1: `N_R, ch_r` in the clear.
    pub fn reader_start<R: RngCore + CryptoRng>(
        &mut self,
        rng: &mut R,
    ) -> Result<HandshakeMessage, HandshakeError> {
        self.expect(Role::Reader, Phase::Init)?;
        let ch_r = Nonce::random(rng);
        self.ch_r = Some(ch_r);
        self.phase = Phase::Challenged;
        Ok(self.emit(1, ch_r.as_bytes().to_vec()))
    }

    /// Message 2: validates `ch_r`, draws `ch_t`, answers with `E(E(M_N | ch_r))`.
    pub fn controller_respond<R: RngCore + CryptoRng>(
        &mut self,
        msg1: &[u8],
        rng: &mut R,
    ) -> Result<HandshakeMessage, HandshakeError> {
        self.expect(Role::Controller, Phase::Init)?;
        let r = self.respond_inner(msg1, rng);
        self.guard(r)
    }

    fn respond_inner<R: RngCore + CryptoRng>(
        &mut self,
        raw: &[u8],
        rng: &mut R,
    ) -> Result<HandshakeMessage, HandshakeError> {
        let msg = self.parse(raw, 1, Some(NONCE_LEN))?;
        let ch_r = Nonce::from_slice(&msg.body).map_err(|_| HandshakeError::InvalidNonce)?;
        let ch_t = Nonce::random_distinct(rng, &ch_r);
        self.peer_id = Some(msg.sender_id);
        self.transcript.push(raw.to_vec());
        self.ch_r = Some(ch_r);
        self.ch_t = Some(ch_t);

        let mut body = Vec::with_capacity(NONCE_LEN + CHALLENGE_LEN);
        body.extend_from_slice(ch_t.as_bytes());
        body.extend_from_slice(&controller_challenge_response(
            &self.master,
            &self.self_id,
            &ch_r,
        ));
        self.phase = Phase::Challenged;
        Ok(self.emit(2, body))
    }

    /// Message 3: authenticates the controller, then answers `D(D(N_R | ch_t))`.
    pub fn reader_answer(&mut self, msg2: &[u8]) -> Result<HandshakeMessage, HandshakeError> {
        self.expect(Role::Reader, Phase::Challenged)?;
        let r = self.answer_inner(msg2);
        self.guard(r)
    }

    fn answer_inner(&mut self, raw: &[u8]) -> Result<HandshakeMessage, HandshakeError> {
        let msg = self.parse(raw, 2, Some(NONCE_LEN + CHALLENGE_LEN))?;
        let ch_r = self.ch_r.expect("set by reader_start");
        let ch_t =
            Nonce::from_slice(&msg.body[..NONCE_LEN]).map_err(|_| HandshakeError::InvalidNonce)?;
        if ch_t == ch_r {
            return Err(HandshakeError::InvalidNonce);
        }
        let opened = double_decrypt(&self.master, &msg.body[NONCE_LEN..])?;
        if !crate::block::ct_eq(&opened, &challenge_block(&msg.sender_id, &ch_r)) {
            return Err(HandshakeError::AuthFailure);
        }
        self.peer_id = Some(msg.sender_id);
        self.ch_t = Some(ch_t);
        self.transcript.push(raw.to_vec());

        let keys = derive_session_keys(&self.master, &ch_r, &ch_t)?;
        self.channel = Some(ChannelState::new(keys));
        let body = reader_challenge_response(&self.master, &self.self_id, &ch_t);
        self.phase = Phase::Authenticated;
        Ok(self.emit(3, body))
    }

    /// Message 4: authenticates the reader, derives the session keys and seals
    /// `M_N | msg1 | msg3` as the first record of the new channel.
    pub fn controller_key_confirm<R: RngCore + CryptoRng>(
        &mut self,
        msg3: &[u8],
        rng: &mut R,
    ) -> Result<HandshakeMessage, HandshakeError> {
        self.expect(Role::Controller, Phase::Challenged)?;
        let r = self.key_confirm_inner(msg3, rng);
        self.guard(r)
    }

    fn key_confirm_inner<R: RngCore + CryptoRng>(
        &mut self,
        raw: &[u8],
        rng: &mut R,
    ) -> Result<HandshakeMessage, HandshakeError> {
        let msg = self.parse(raw, 3, Some(CHALLENGE_LEN))?;
        let reader = self.peer_id.expect("set by controller_respond");
        let ch_r = self.ch_r.expect("set by controller_respond");
        let ch_t = self.ch_t.expect("set by controller_respond");
        let reencrypted = double_encrypt_blocks(&self.master, &msg.body)?;
        if !crate::block::ct_eq(&reencrypted, &challenge_block(&reader, &ch_t)) {
            return Err(HandshakeError::AuthFailure);
        }
        self.transcript.push(raw.to_vec());

        let keys = derive_session_keys(&self.master, &ch_r, &ch_t)?;
        let mut channel = ChannelState::new(keys);
        let mut plaintext = self.self_id.0.to_vec();
        for m in &self.transcript {
            plaintext.extend_from_slice(m);
        }
        let record = channel.seal_record(&plaintext, &[], rng)?;
        self.channel = Some(channel);
        self.phase = Phase::KeyConfirmSent;
        Ok(self.emit(4, encode_secure_payload(&record)))
    }

    fn open_confirmation(
        &mut self,
        msg: &HandshakeMessage,
        expected_x: &[u8],
    ) -> Result<(), HandshakeError> {
        let record = decode_secure_payload(&msg.body).map_err(|e| malformed(e.to_string()))?;
        let channel = self
            .channel
            .as_mut()
            .expect("keys derived before confirmation");
        let plaintext = channel
            .open_record(&record)
            .map_err(|e| HandshakeError::KeyConfirmFailure(e.to_string()))?;
        if plaintext.len() < ID_LEN || plaintext[..ID_LEN] != msg.sender_id.0 {
            return Err(HandshakeError::KeyConfirmFailure(
                "inner sender id does not match header".into(),
            ));
        }
        if !crate::block::ct_eq(&plaintext[ID_LEN..], expected_x) {
            return Err(HandshakeError::KeyConfirmFailure(
                "confirmed transcript differs from local view".into(),
            ));
        }
        Ok(())
    }

    /// Message 5: checks that message 4 confirms exactly what this reader sent,
    /// then seals `N_R | msg2 | msg4`.
    pub fn reader_key_confirm<R: RngCore + CryptoRng>(
        &mut self,
        msg4: &[u8],
        rng: &mut R,
    ) -> Result<HandshakeMessage, HandshakeError> {
        self.expect(Role::Reader, Phase::Authenticated)?;
        let r = self.reader_confirm_inner(msg4, rng);
        self.guard(r)
    }

    fn reader_confirm_inner<R: RngCore + CryptoRng>(
        &mut self,
        raw: &[u8],
        rng: &mut R,
    ) -> Result<HandshakeMessage, HandshakeError> {
        let msg = self.parse(raw, 4, None)?;
        let x: Vec<u8> = self.sent.concat();
        self.open_confirmation(&msg, &x)?;
        self.transcript.push(raw.to_vec());

        let mut plaintext = self.self_id.0.to_vec();
        for m in &self.transcript {
            plaintext.extend_from_slice(m);
        }
        let channel = self
            .channel
            .as_mut()
            .expect("keys derived in reader_answer");
        let record = channel.seal_record(&plaintext, &[], rng)?;
        self.phase = Phase::Established;
        Ok(self.emit(5, encode_secure_payload(&record)))
    }

    /// Receipt of message 5: the controller checks `X' = msg2 | msg4`.
    pub fn controller_finalize(&mut self, msg5: &[u8]) -> Result<(), HandshakeError> {
        self.expect(Role::Controller, Phase::KeyConfirmSent)?;
        let r = self.finalize_inner(msg5);
        self.guard(r)
    }

    fn finalize_inner(&mut self, raw: &[u8]) -> Result<(), HandshakeError> {
        let msg = self.parse(raw, 5, None)?;
        let x_prime: Vec<u8> = self.sent.concat();
        self.open_confirmation(&msg, &x_prime)?;
        self.transcript.push(raw.to_vec());
        self.phase = Phase::Established;
        Ok(())
    }
}
