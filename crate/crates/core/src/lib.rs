//! Secure NFC readout for wireless battery management systems: handshake,
//! tag-chained record channel, NDEF-style framing, diagnostics payloads,
//! wake-up power simulation, an adversary harness and a BAN-logic verifier.

pub mod adversary;
pub mod ban;
pub mod block;
pub mod diagnostics;
pub mod handshake;
pub mod secure_channel;
pub mod sndef;
pub mod wakeup;
