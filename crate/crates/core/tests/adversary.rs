use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use wbms_core::adversary::*;
use wbms_core::block::cbc_encrypt;
use wbms_core::diagnostics::DiagPacket;
use wbms_core::handshake::{Phase, PrincipalId, Role};
use wbms_core::secure_channel::MasterKey;

fn pair(seed: u64) -> (EndpointConfig, EndpointConfig, Vec<DiagPacket>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let key = MasterKey::random(&mut rng);
    (
        EndpointConfig {
            id: PrincipalId::new(READER_ID).unwrap(),
            key: key.clone(),
        },
        EndpointConfig {
            id: PrincipalId::new(CONTROLLER_ID).unwrap(),
            key,
        },
        sample_workload(&mut rng),
    )
}

#[test]
fn honest_session_delivers_everything() {
    let (r, c, w) = pair(1);
    let mut ch = LinkChannel::new(DeliveryPolicy::Honest);
    let out = run_session(&mut ch, &r, &c, &w, 1);
    assert!(out.established);
    assert!(out.session_keys_match);
    assert_eq!(out.messages_exchanged, 5);
    assert_eq!(out.records_delivered, w.len());
    assert!(out.failure.is_none());
    assert!(out.secrecy.is_empty());
    assert!(!out.adversary_succeeded());
    assert_eq!(ch.log().len(), 5 + w.len());
    assert!(ch.log().iter().all(|f| !f.altered()));
}

#[test]
fn session_id_from_nonces() {
    let (r, c, w) = pair(2);
    let mut ch = LinkChannel::new(DeliveryPolicy::Honest);
    run_session(&mut ch, &r, &c, &w, 2);
    let id = session_id(ch.log()).unwrap();
    assert_eq!(id.len(), 16);
    // msg1 body starts after the 6-byte record and 7-byte message headers.
    assert_eq!(&id[..8], &hex::encode(&ch.log()[0].delivered[13..17]));
    assert_eq!(session_id(&ch.log()[..1]), None);
}

#[test]
fn secrecy_scan_finds_plaintext() {
    let frame = LoggedFrame {
        index: 0,
        direction: Direction::ControllerToReader,
        sent: b"xx0123456789yy".to_vec(),
        delivered: b"xx0123456789yy".to_vec(),
    };
    let hits = secrecy_scan(&[b"__01234567__".to_vec()], &[frame]);
    assert_eq!(
        hits,
        vec![SecrecyHit {
            packet: 0,
            offset: 2,
            frame: 0
        }]
    );
}

#[test]
fn replay_of_message_two_blocked_at_three() {
    let (rec, out, _) = run_attack(StrategyKind::Replay, 5, 1);
    assert_eq!(rec.strategy, AdversaryStrategy::Replay { frame: 1 });
    let f = out.failure.unwrap();
    assert_eq!(f.blocked_at(), "message 3");
    assert_eq!(f.error, "AuthFailure");
    assert_eq!(f.endpoint, Role::Reader);
}

#[test]
fn reflection_blocked_at_four() {
    let (_, out, ch) = run_attack(StrategyKind::Reflect, 5, 0);
    let f = out.failure.unwrap();
    assert_eq!((f.message, f.error.as_str()), (Some(4), "AuthFailure"));
    assert!(ch.log()[2].altered());
    assert_eq!(out.controller_phase, Phase::Failed);
}

#[test]
fn bit_flip_on_record_is_tag_mismatch() {
    let (r, c, w) = pair(3);
    // Bit inside the sealed data, past NDEF and secure headers.
    let strategy = AdversaryStrategy::BitFlip {
        frame: 5,
        bit: (6 + 34 + 4 + 3) * 8,
    };
    let mut ch = LinkChannel::new(DeliveryPolicy::Adversarial(strategy));
    let out = run_session(&mut ch, &r, &c, &w, 3);
    assert!(out.established);
    let f = out.failure.clone().unwrap();
    assert_eq!((f.record, f.error.as_str()), (Some(0), "TagMismatch"));
    assert_eq!(out.records_delivered, 0);
    assert!(!out.adversary_succeeded());
}

#[test]
fn chosen_challenge_never_single_pass() {
    let (r, c, _) = pair(4);
    let probes = vec![[0x11; 16], [0x22; 16]];
    let mut ch = LinkChannel::new(DeliveryPolicy::Adversarial(
        AdversaryStrategy::ChosenChallenge { probes },
    ));
    let out = run_session(&mut ch, &r, &c, &[], 4);
    assert!(!out.oracle_exposed);
    assert_eq!(out.failure.unwrap().message, Some(4));
    // Two probes, two answers, one forged message 3.
    assert_eq!(ch.log().len(), 5);
}

#[test]
fn zero_probe_rejected_at_two() {
    let (r, c, _) = pair(4);
    let mut ch = LinkChannel::new(DeliveryPolicy::Adversarial(
        AdversaryStrategy::ChosenChallenge {
            probes: vec![[0; 16]],
        },
    ));
    let out = run_session(&mut ch, &r, &c, &[], 4);
    let f = out.failure.unwrap();
    assert_eq!((f.message, f.error.as_str()), (Some(2), "InvalidNonce"));
}

#[test]
fn exposure_check_detects_single_layer() {
    let raw = [7u8; 16];
    let key = MasterKey::from_bytes(raw);
    let id = PrincipalId::new(CONTROLLER_ID).unwrap();
    let probe = [9u8; 16];
    let mut pt = [0u8; 32];
    pt[..4].copy_from_slice(&CONTROLLER_ID);
    pt[4..20].copy_from_slice(&probe);
    let once = cbc_encrypt(&raw, &[0; 16], &pt).unwrap();
    assert!(single_pass_exposed(&key, &id, &probe, &once));
    assert!(single_pass_exposed(&key, &id, &probe, &pt));
    let honest = wbms_core::handshake::controller_challenge_response(
        &key,
        &id,
        &wbms_core::secure_channel::Nonce::new(probe).unwrap(),
    );
    assert!(!single_pass_exposed(&key, &id, &probe, &honest));
}

#[test]
fn hex_dump_marks_altered_frames() {
    let (_, _, ch) = run_attack(StrategyKind::BitFlip, 9, 0);
    let dump = ch.hex_dump();
    assert!(dump.lines().next().unwrap().contains("altered"));
}

#[test]
fn small_suite_zero_success_and_deterministic() {
    let a = run_attack_suite_with(42, &StrategyKind::ALL, 8);
    let b = run_attack_suite_with(42, &StrategyKind::ALL, 8);
    assert_eq!(a, b);
    assert_eq!(a.total_runs, 40);
    assert_eq!(a.total_successes, 0);
    for s in &a.strategies {
        if s.strategy != StrategyKind::Eavesdrop {
            assert_eq!(s.blocked, s.runs, "{:?}", s.strategy);
        }
        assert_eq!(s.leaks, 0);
    }
}
