//! Simulated NFC link between a reader and a pack controller, with a
//! Dolev-Yao adversary sitting on it. The adversary sees, drops, rewrites and
//! injects frames but never holds the master key.
//!
//! Frames are NDEF messages. Handshake frames are indexed 0..=4 in session
//! order, sealed diagnostic records follow from index 5.
//!
//! A failure is reported as the protocol step that stopped the session: step
//! `n` covers the receiver's checks before it sends message `n`, and the
//! controller's check of message 5 counts as step 5.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::block::cbc_encrypt;
use crate::diagnostics::{
    collect_from_bpcs, decode_diag, encode_diag, idle_packet, BpcReport, DiagPacket, PackId,
    StatusFlags,
};
use crate::handshake::{
    HandshakeError, HandshakeMessage, HandshakeState, Phase, PrincipalId, Role,
};
use crate::secure_channel::{ChannelState, MasterKey, NONCE_LEN};
use crate::sndef::{
    decode_message, encode_message, unwrap_secure, wrap_secure, NdefMessage, NdefRecord, RecordType,
};

pub const HANDSHAKE_FRAMES: usize = 5;
pub const DEFAULT_SEEDS_PER_STRATEGY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    #[serde(rename = "R->C")]
    ReaderToController,
    #[serde(rename = "C->R")]
    ControllerToReader,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryStrategy {
    /// Passive recording only.
    Eavesdrop,
    /// Substitutes frame `frame` with the frame at the same position of an
    /// earlier session under the same key.
    Replay { frame: usize },
    /// Bounces the controller's challenge from message 2 back to it as
    /// message 3.
    Reflect,
    /// Impersonates the reader and asks the controller to answer chosen
    /// `ch_r` values, one fresh controller session per probe.
    ChosenChallenge { probes: Vec<[u8; NONCE_LEN]> },
    /// Flips bit `bit` (counted from the first byte) of frame `frame`.
    BitFlip { frame: usize, bit: usize },
}

impl AdversaryStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Self::Eavesdrop => StrategyKind::Eavesdrop,
            Self::Replay { .. } => StrategyKind::Replay,
            Self::Reflect => StrategyKind::Reflect,
            Self::ChosenChallenge { .. } => StrategyKind::ChosenChallenge,
            Self::BitFlip { .. } => StrategyKind::BitFlip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryPolicy {
    Honest,
    Adversarial(AdversaryStrategy),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoggedFrame {
    pub index: usize,
    pub direction: Direction,
    /// What the sending endpoint emitted; empty for injected frames.
    #[serde(with = "hex_bytes")]
    pub sent: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub delivered: Vec<u8>,
}

impl LoggedFrame {
    pub fn altered(&self) -> bool {
        self.sent != self.delivered
    }
}

mod hex_bytes {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }
}

/// One in-flight frame at a time in practice; the queue keeps delivery
/// order explicit.
#[derive(Debug, Clone)]
pub struct LinkChannel {
    policy: DeliveryPolicy,
    queue: VecDeque<(Direction, Vec<u8>)>,
    log: Vec<LoggedFrame>,
    recorded: Vec<Vec<u8>>,
}

impl LinkChannel {
    pub fn new(policy: DeliveryPolicy) -> Self {
        Self {
            policy,
            queue: VecDeque::new(),
            log: Vec::new(),
            recorded: Vec::new(),
        }
    }

    /// Gives the adversary frames captured from an earlier session.
    pub fn with_recording(mut self, frames: Vec<Vec<u8>>) -> Self {
        self.recorded = frames;
        self
    }

    pub fn policy(&self) -> &DeliveryPolicy {
        &self.policy
    }

    pub fn log(&self) -> &[LoggedFrame] {
        &self.log
    }

    pub fn delivered_frames(&self) -> Vec<Vec<u8>> {
        self.log.iter().map(|f| f.delivered.clone()).collect()
    }

    pub fn send(&mut self, direction: Direction, frame: Vec<u8>) {
        self.queue.push_back((direction, frame));
    }

    /// Pops the next frame, lets the adversary act on it, logs and returns
    /// the delivered bytes and whether they differ from what was sent.
    pub fn deliver(&mut self) -> Option<(Direction, Vec<u8>, bool)> {
        let (direction, sent) = self.queue.pop_front()?;
        let index = self.log.len();
        let delivered = match &self.policy {
            DeliveryPolicy::Honest | DeliveryPolicy::Adversarial(AdversaryStrategy::Eavesdrop) => {
                sent.clone()
            }
            DeliveryPolicy::Adversarial(AdversaryStrategy::Replay { frame }) if *frame == index => {
                self.recorded
                    .get(index)
                    .cloned()
                    .unwrap_or_else(|| sent.clone())
            }
            DeliveryPolicy::Adversarial(AdversaryStrategy::BitFlip { frame, bit })
                if *frame == index =>
            {
                let mut f = sent.clone();
                if !f.is_empty() {
                    let byte = (bit / 8) % f.len();
                    f[byte] ^= 1 << (bit % 8);
                }
                f
            }
            DeliveryPolicy::Adversarial(AdversaryStrategy::Reflect) if index == 2 => {
                reflect_challenge(&self.log[1].delivered, &sent).unwrap_or_else(|| sent.clone())
            }
            _ => sent.clone(),
        };
        let altered = delivered != sent;
        self.log.push(LoggedFrame {
            index,
            direction,
            sent,
            delivered: delivered.clone(),
        });
        Some((direction, delivered, altered))
    }

    /// Logs and returns a frame the adversary fabricated.
    pub fn inject(&mut self, direction: Direction, frame: Vec<u8>) -> Vec<u8> {
        self.log.push(LoggedFrame {
            index: self.log.len(),
            direction,
            sent: Vec::new(),
            delivered: frame.clone(),
        });
        frame
    }

    /// One line per frame: index, direction, length, delivered bytes in hex.
    pub fn hex_dump(&self) -> String {
        let mut out = String::new();
        for f in &self.log {
            let dir = match f.direction {
                Direction::ReaderToController => "R->C",
                Direction::ControllerToReader => "C->R",
            };
            let mark = if f.sent.is_empty() {
                " injected"
            } else if f.altered() {
                " altered"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "#{:<2} {dir} {:>4}B{mark} {}",
                f.index,
                f.delivered.len(),
                hex::encode(&f.delivered)
            );
        }
        out
    }
}

fn handshake_frame(msg: &HandshakeMessage) -> Vec<u8> {
    let rec = NdefRecord::new(RecordType::Handshake, msg.encode());
    encode_message(&NdefMessage::single(rec)).expect("handshake frames are small")
}

fn handshake_payload(frame: &[u8]) -> Result<Vec<u8>, HandshakeError> {
    let msg = decode_message(frame).map_err(|e| HandshakeError::MalformedMessage(e.to_string()))?;
    match msg.records.as_slice() {
        [r] if r.type_code == RecordType::Handshake => Ok(r.payload.clone()),
        _ => Err(HandshakeError::MalformedMessage(
            "expected a single handshake record".into(),
        )),
    }
}

// Message 3 carrying the challenge of message 2, keeping message 3's header.
fn reflect_challenge(msg2_frame: &[u8], msg3_frame: &[u8]) -> Option<Vec<u8>> {
    let m2 = HandshakeMessage::decode(&handshake_payload(msg2_frame).ok()?).ok()?;
    let m3 = HandshakeMessage::decode(&handshake_payload(msg3_frame).ok()?).ok()?;
    let forged = HandshakeMessage {
        msg_no: 3,
        sender_id: m3.sender_id,
        body: m2.body.get(NONCE_LEN..)?.to_vec(),
    };
    Some(handshake_frame(&forged))
}

/// `hex(ch_r[..4] | ch_t[..4])`, read from the first two delivered frames.
pub fn session_id(log: &[LoggedFrame]) -> Option<String> {
    let body = |i: usize| -> Option<Vec<u8>> {
        let raw = handshake_payload(&log.get(i)?.delivered).ok()?;
        Some(HandshakeMessage::decode(&raw).ok()?.body)
    };
    let (m1, m2) = (body(0)?, body(1)?);
    let mut id = m1.get(..4)?.to_vec();
    id.extend_from_slice(m2.get(..4)?);
    Some(hex::encode(id))
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub id: PrincipalId,
    pub key: MasterKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailurePoint {
    /// Handshake step that stopped the session.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<u8>,
    /// Index of the rejected diagnostic record.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<usize>,
    pub endpoint: Role,
    pub error: String,
    pub detail: String,
}

impl FailurePoint {
    fn handshake(message: u8, endpoint: Role, e: &HandshakeError) -> Self {
        Self {
            message: Some(message),
            record: None,
            endpoint,
            error: e.kind().to_string(),
            detail: e.to_string(),
        }
    }

    fn data(record: usize, error: &str, detail: String) -> Self {
        Self {
            message: None,
            record: Some(record),
            endpoint: Role::Reader,
            error: error.to_string(),
            detail,
        }
    }

    pub fn blocked_at(&self) -> String {
        match (self.message, self.record) {
            (Some(m), _) => format!("message {m}"),
            (_, Some(r)) => format!("data record {r}"),
            _ => "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecrecyHit {
    pub packet: usize,
    pub offset: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionOutcome {
    pub reader_phase: Phase,
    pub controller_phase: Phase,
    pub established: bool,
    pub messages_exchanged: usize,
    pub records_delivered: usize,
    pub failure: Option<FailurePoint>,
    /// Workload substrings of 8+ bytes visible on the link.
    pub secrecy: Vec<SecrecyHit>,
    /// An endpoint accepted altered or injected traffic and moved on.
    pub forged_accepted: bool,
    /// A chosen-challenge response equalled single-pass encryption or the
    /// plaintext of the challenge.
    pub oracle_exposed: bool,
    #[serde(skip)]
    pub session_keys_match: bool,
}

impl SessionOutcome {
    pub fn adversary_succeeded(&self) -> bool {
        self.forged_accepted || self.oracle_exposed || !self.secrecy.is_empty()
    }
}

pub const SECRECY_WINDOW: usize = 8;

/// Every `SECRECY_WINDOW`-byte slice of a workload plaintext that appears
/// verbatim in any frame. A proxy for confidentiality, not a proof.
pub fn secrecy_scan(plaintexts: &[Vec<u8>], frames: &[LoggedFrame]) -> Vec<SecrecyHit> {
    let mut hits = Vec::new();
    for f in frames {
        let mut windows: HashSet<&[u8]> = HashSet::new();
        for bytes in [&f.sent, &f.delivered] {
            windows.extend(bytes.windows(SECRECY_WINDOW));
        }
        for (packet, pt) in plaintexts.iter().enumerate() {
            for (offset, w) in pt.windows(SECRECY_WINDOW).enumerate() {
                if windows.contains(w) {
                    hits.push(SecrecyHit {
                        packet,
                        offset,
                        frame: f.index,
                    });
                }
            }
        }
    }
    hits
}

fn session_rngs(seed: u64) -> (ChaCha20Rng, ChaCha20Rng) {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(1);
    let mut c = ChaCha20Rng::seed_from_u64(seed);
    c.set_stream(2);
    (r, c)
}

struct Run {
    reader: HandshakeState,
    controller: HandshakeState,
    reader_forged: bool,
    controller_forged: bool,
    forged_accepted: bool,
    delivered: usize,
    failure: Option<FailurePoint>,
}

/// Runs the handshake, then seals each workload packet on the controller and
/// opens it on the reader. Protocol errors end the session and are recorded.
pub fn run_session(
    channel: &mut LinkChannel,
    reader_cfg: &EndpointConfig,
    controller_cfg: &EndpointConfig,
    workload: &[DiagPacket],
    seed: u64,
) -> SessionOutcome {
    if let DeliveryPolicy::Adversarial(AdversaryStrategy::ChosenChallenge { probes }) =
        channel.policy().clone()
    {
        return chosen_challenge(channel, reader_cfg, controller_cfg, &probes, seed);
    }
    let (mut rr, mut cr) = session_rngs(seed);
    let mut run = Run {
        reader: HandshakeState::reader(reader_cfg.id, reader_cfg.key.clone()),
        controller: HandshakeState::controller(controller_cfg.id, controller_cfg.key.clone()),
        reader_forged: false,
        controller_forged: false,
        forged_accepted: false,
        delivered: 0,
        failure: None,
    };
    let plaintexts: Vec<Vec<u8>> = workload
        .iter()
        .map(|p| encode_diag(p).expect("workload packets are valid"))
        .collect();

    handshake(channel, &mut run, &mut rr, &mut cr);
    let established =
        run.reader.phase() == Phase::Established && run.controller.phase() == Phase::Established;
    if (run.reader_forged && run.reader.phase() == Phase::Established)
        || (run.controller_forged && run.controller.phase() == Phase::Established)
    {
        run.forged_accepted = true;
    }
    let session_keys_match =
        established && run.reader.session_keys() == run.controller.session_keys();
    if established {
        data_phase(channel, &mut run, &plaintexts, workload, &mut cr);
    }
    SessionOutcome {
        reader_phase: run.reader.phase(),
        controller_phase: run.controller.phase(),
        established,
        messages_exchanged: channel.log().len().min(HANDSHAKE_FRAMES),
        records_delivered: run.delivered,
        failure: run.failure,
        secrecy: secrecy_scan(&plaintexts, channel.log()),
        forged_accepted: run.forged_accepted,
        oracle_exposed: false,
        session_keys_match,
    }
}

fn handshake(channel: &mut LinkChannel, run: &mut Run, rr: &mut ChaCha20Rng, cr: &mut ChaCha20Rng) {
    use Direction::*;
    let m1 = run.reader.reader_start(rr).expect("fresh reader starts");
    channel.send(ReaderToController, handshake_frame(&m1));

    let (_, f, altered) = channel.deliver().expect("frame queued");
    run.controller_forged |= altered;
    let m2 = match handshake_payload(&f).and_then(|b| run.controller.controller_respond(&b, cr)) {
        Ok(m) => m,
        Err(e) => return run.fail(2, Role::Controller, &e),
    };
    channel.send(ControllerToReader, handshake_frame(&m2));

    let (_, f, altered) = channel.deliver().expect("frame queued");
    run.reader_forged |= altered;
    let m3 = match handshake_payload(&f).and_then(|b| run.reader.reader_answer(&b)) {
        Ok(m) => m,
        Err(e) => return run.fail(3, Role::Reader, &e),
    };
    channel.send(ReaderToController, handshake_frame(&m3));

    let (_, f, altered) = channel.deliver().expect("frame queued");
    run.controller_forged |= altered;
    let m4 = match handshake_payload(&f).and_then(|b| run.controller.controller_key_confirm(&b, cr))
    {
        Ok(m) => m,
        Err(e) => return run.fail(4, Role::Controller, &e),
    };
    channel.send(ControllerToReader, handshake_frame(&m4));

    let (_, f, altered) = channel.deliver().expect("frame queued");
    run.reader_forged |= altered;
    let m5 = match handshake_payload(&f).and_then(|b| run.reader.reader_key_confirm(&b, rr)) {
        Ok(m) => m,
        Err(e) => return run.fail(5, Role::Reader, &e),
    };
    channel.send(ReaderToController, handshake_frame(&m5));

    let (_, f, altered) = channel.deliver().expect("frame queued");
    run.controller_forged |= altered;
    if let Err(e) = handshake_payload(&f).and_then(|b| run.controller.controller_finalize(&b)) {
        run.fail(5, Role::Controller, &e)
    }
}

impl Run {
    fn fail(&mut self, message: u8, endpoint: Role, e: &HandshakeError) {
        self.failure = Some(FailurePoint::handshake(message, endpoint, e));
    }
}

fn data_phase(
    channel: &mut LinkChannel,
    run: &mut Run,
    plaintexts: &[Vec<u8>],
    workload: &[DiagPacket],
    cr: &mut ChaCha20Rng,
) {
    for (i, (pt, packet)) in plaintexts.iter().zip(workload).enumerate() {
        let sender = run.controller.channel_mut().expect("established");
        let rec = sender
            .seal_record(pt, &(i as u32).to_be_bytes(), cr)
            .expect("non-empty plaintext under established keys");
        let frame = encode_message(&NdefMessage::single(wrap_secure(&rec)))
            .expect("workload packets fit in a frame");
        channel.send(Direction::ControllerToReader, frame);
        let (_, f, altered) = channel.deliver().expect("frame queued");
        let receiver = run.reader.channel_mut().expect("established");
        match open_frame(receiver, &f) {
            Ok(opened) if opened == *packet => {
                run.delivered += 1;
                if altered {
                    run.forged_accepted = true;
                }
            }
            Ok(_) => {
                run.forged_accepted = true;
                run.failure = Some(FailurePoint::data(
                    i,
                    "ContentMismatch",
                    "opened packet differs".into(),
                ));
                return;
            }
            Err((kind, detail)) => {
                run.failure = Some(FailurePoint::data(i, kind, detail));
                return;
            }
        }
    }
}

fn open_frame(ch: &mut ChannelState, frame: &[u8]) -> Result<DiagPacket, (&'static str, String)> {
    let msg = decode_message(frame).map_err(|e| ("CodecError", e.to_string()))?;
    let [rec] = msg.records.as_slice() else {
        return Err(("CodecError", "expected one record".into()));
    };
    let secure = unwrap_secure(rec).map_err(|e| ("CodecError", e.to_string()))?;
    let pt = ch.open_record(&secure).map_err(|e| {
        let kind = match e {
            crate::secure_channel::ChannelError::TagMismatch => "TagMismatch",
            _ => "ChannelError",
        };
        (kind, e.to_string())
    })?;
    decode_diag(&pt).map_err(|e| ("DiagError", e.to_string()))
}

fn chosen_challenge(
    channel: &mut LinkChannel,
    reader_cfg: &EndpointConfig,
    controller_cfg: &EndpointConfig,
    probes: &[[u8; NONCE_LEN]],
    seed: u64,
) -> SessionOutcome {
    let (_, mut cr) = session_rngs(seed);
    let mut exposed = false;
    let mut last: Option<(HandshakeState, HandshakeMessage)> = None;
    let mut failure = None;
    let mut controller_phase = Phase::Init;
    for probe in probes {
        let mut ctrl = HandshakeState::controller(controller_cfg.id, controller_cfg.key.clone());
        // The reader's id is public: it travels in every header.
        let m1 = HandshakeMessage {
            msg_no: 1,
            sender_id: reader_cfg.id,
            body: probe.to_vec(),
        };
        let f = channel.inject(Direction::ReaderToController, handshake_frame(&m1));
        match handshake_payload(&f).and_then(|b| ctrl.controller_respond(&b, &mut cr)) {
            Ok(m2) => {
                channel.send(Direction::ControllerToReader, handshake_frame(&m2));
                channel.deliver();
                exposed |= single_pass_exposed(
                    &controller_cfg.key,
                    &controller_cfg.id,
                    probe,
                    &m2.body[NONCE_LEN..],
                );
                last = Some((ctrl, m2));
            }
            Err(e) => {
                failure = Some(FailurePoint::handshake(2, Role::Controller, &e));
                controller_phase = ctrl.phase();
            }
        }
    }
    // Without the key the best available message 3 is the controller's own
    // challenge.
    if let Some((mut ctrl, m2)) = last {
        let m3 = HandshakeMessage {
            msg_no: 3,
            sender_id: reader_cfg.id,
            body: m2.body[NONCE_LEN..].to_vec(),
        };
        let f = channel.inject(Direction::ReaderToController, handshake_frame(&m3));
        failure = match handshake_payload(&f).and_then(|b| ctrl.controller_key_confirm(&b, &mut cr))
        {
            Ok(_) => None,
            Err(e) => Some(FailurePoint::handshake(4, Role::Controller, &e)),
        };
        controller_phase = ctrl.phase();
    }
    let forged_accepted = failure.is_none() && !probes.is_empty();
    SessionOutcome {
        reader_phase: Phase::Init,
        controller_phase,
        established: false,
        messages_exchanged: channel.log().len(),
        records_delivered: 0,
        failure,
        secrecy: Vec::new(),
        forged_accepted,
        oracle_exposed: exposed,
        session_keys_match: false,
    }
}

/// Whether `response` is what a single-layer (or no-layer) encryption of the
/// controller's answer to `probe` would be, i.e. the controller acted as an
/// encryption oracle.
pub fn single_pass_exposed(
    key: &MasterKey,
    id: &PrincipalId,
    probe: &[u8; NONCE_LEN],
    response: &[u8],
) -> bool {
    let mut pt = [0u8; 32];
    pt[..4].copy_from_slice(id.as_bytes());
    pt[4..4 + NONCE_LEN].copy_from_slice(probe);
    let once = cbc_encrypt(key.bytes(), &[0u8; 16], &pt).expect("two blocks");
    response == once.as_slice() || response == pt.as_slice()
}

/// A plausible diagnostic workload: one idle packet and one packet
/// aggregated from three pack controllers.
pub fn sample_workload<R: Rng>(rng: &mut R) -> Vec<DiagPacket> {
    let report = |rng: &mut R| BpcReport {
        pack_id: PackId(rng.gen()),
        timestamp: 1_700_000_000 + rng.gen_range(0..10_000_000),
        soc_permille: rng.gen_range(0..=1000),
        soh_permille: rng.gen_range(600..=1000),
        cell_voltages_mv: (0..rng.gen_range(4..=16))
            .map(|_| rng.gen_range(3000..=4200))
            .collect(),
        temperatures_dk: (0..rng.gen_range(1..=4))
            .map(|_| rng.gen_range(-200..=600))
            .collect(),
        status_flags: StatusFlags(rng.gen_range(0..32)),
    };
    let idle = idle_packet(report(rng), 0).expect("valid report");
    let active =
        collect_from_bpcs((0..3).map(|_| report(rng)).collect(), 1).expect("valid reports");
    vec![idle, active]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Eavesdrop,
    Replay,
    Reflect,
    ChosenChallenge,
    BitFlip,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Eavesdrop,
        StrategyKind::Replay,
        StrategyKind::Reflect,
        StrategyKind::ChosenChallenge,
        StrategyKind::BitFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Eavesdrop => "eavesdrop",
            Self::Replay => "replay",
            Self::Reflect => "reflect",
            Self::ChosenChallenge => "chosen_challenge",
            Self::BitFlip => "bit_flip",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
    }
}

/// Identities used by the harness endpoints.
pub const READER_ID: [u8; 4] = *b"RDR\x01";
pub const CONTROLLER_ID: [u8; 4] = *b"BMS\x01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub strategy: AdversaryStrategy,
    pub blocked_at: Option<String>,
    pub error: Option<String>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrategyReport {
    pub strategy: StrategyKind,
    pub runs: usize,
    pub successes: usize,
    pub blocked: usize,
    pub leaks: usize,
    /// `"blocked at message 3 (AuthFailure)"` style keys with run counts.
    pub failure_points: BTreeMap<String, usize>,
    pub details: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackReport {
    pub seed: u64,
    pub seeds_per_strategy: usize,
    pub total_runs: usize,
    pub total_successes: usize,
    pub strategies: Vec<StrategyReport>,
}

fn session_seed(seed: u64, kind: StrategyKind, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((kind as u64) << 40)
        .wrapping_add(i as u64)
}

/// Concrete strategy for run `i`; parameters cycle through every frame.
fn instantiate(
    kind: StrategyKind,
    i: usize,
    rng: &mut ChaCha20Rng,
    frame_lens: &[usize],
) -> AdversaryStrategy {
    let frames = frame_lens.len();
    match kind {
        StrategyKind::Eavesdrop => AdversaryStrategy::Eavesdrop,
        StrategyKind::Replay => AdversaryStrategy::Replay { frame: i % frames },
        StrategyKind::Reflect => AdversaryStrategy::Reflect,
        StrategyKind::ChosenChallenge => {
            let mut probes: Vec<[u8; NONCE_LEN]> = (0..3).map(|_| rng.gen()).collect();
            let mut structured = [0u8; NONCE_LEN];
            structured[NONCE_LEN - 1] = (i as u8) | 1;
            probes.push(structured);
            AdversaryStrategy::ChosenChallenge { probes }
        }
        StrategyKind::BitFlip => {
            let frame = i % frames;
            AdversaryStrategy::BitFlip {
                frame,
                bit: rng.gen_range(0..frame_lens[frame] * 8),
            }
        }
    }
}

/// Runs one strategy instance against a fresh honest pair keyed from
/// `session_seed`. Also used by the CLI.
pub fn run_attack(
    kind: StrategyKind,
    seed: u64,
    i: usize,
) -> (RunRecord, SessionOutcome, LinkChannel) {
    let s = session_seed(seed, kind, i);
    let mut rng = ChaCha20Rng::seed_from_u64(s);
    let key = MasterKey::random(&mut rng);
    let reader = EndpointConfig {
        id: PrincipalId::new(READER_ID).expect("nonzero"),
        key: key.clone(),
    };
    let controller = EndpointConfig {
        id: PrincipalId::new(CONTROLLER_ID).expect("nonzero"),
        key,
    };
    let workload = sample_workload(&mut rng);

    // An earlier honest session the adversary recorded.
    let mut prior = LinkChannel::new(DeliveryPolicy::Honest);
    let prior_workload = sample_workload(&mut rng);
    run_session(
        &mut prior,
        &reader,
        &controller,
        &prior_workload,
        s ^ 0xA5A5,
    );
    let recorded = prior.delivered_frames();
    let frame_lens: Vec<usize> = recorded.iter().map(Vec::len).collect();

    let strategy = instantiate(kind, i, &mut rng, &frame_lens);
    let mut channel =
        LinkChannel::new(DeliveryPolicy::Adversarial(strategy.clone())).with_recording(recorded);
    let outcome = run_session(&mut channel, &reader, &controller, &workload, s);
    let record = RunRecord {
        seed: s,
        strategy,
        blocked_at: outcome.failure.as_ref().map(FailurePoint::blocked_at),
        error: outcome.failure.as_ref().map(|f| f.error.clone()),
        success: outcome.adversary_succeeded(),
    };
    (record, outcome, channel)
}

pub fn run_attack_suite(seed: u64) -> AttackReport {
    run_attack_suite_with(seed, &StrategyKind::ALL, DEFAULT_SEEDS_PER_STRATEGY)
}

pub fn run_attack_suite_with(
    seed: u64,
    kinds: &[StrategyKind],
    seeds_per_strategy: usize,
) -> AttackReport {
    let jobs: Vec<(StrategyKind, usize)> = kinds
        .iter()
        .flat_map(|&k| (0..seeds_per_strategy).map(move |i| (k, i)))
        .collect();
    let results: Vec<(StrategyKind, RunRecord, SessionOutcome)> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let (rec, out, _) = run_attack(k, seed, i);
            (k, rec, out)
        })
        .collect();

    let strategies: Vec<StrategyReport> = kinds
        .iter()
        .map(|&kind| {
            let mine: Vec<&(StrategyKind, RunRecord, SessionOutcome)> =
                results.iter().filter(|r| r.0 == kind).collect();
            let mut failure_points = BTreeMap::new();
            for (_, rec, _) in &mine {
                if let (Some(at), Some(err)) = (&rec.blocked_at, &rec.error) {
                    *failure_points
                        .entry(format!("blocked at {at} ({err})"))
                        .or_insert(0) += 1;
                }
            }
            StrategyReport {
                strategy: kind,
                runs: mine.len(),
                successes: mine.iter().filter(|r| r.1.success).count(),
                blocked: mine.iter().filter(|r| r.2.failure.is_some()).count(),
                leaks: mine.iter().filter(|r| !r.2.secrecy.is_empty()).count(),
                failure_points,
                details: mine.iter().map(|r| r.1.clone()).collect(),
            }
        })
        .collect();
    AttackReport {
        seed,
        seeds_per_strategy,
        total_runs: results.len(),
        total_successes: strategies.iter().map(|s| s.successes).sum(),
        strategies,
    }
}
