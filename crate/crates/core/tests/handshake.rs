use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use wbms_core::handshake::*;
use wbms_core::secure_channel::{
    derive_session_keys, double_decrypt, double_encrypt_blocks, ChannelState, MasterKey, Nonce,
};
use wbms_core::sndef::{decode_secure_payload, encode_secure_payload};

const NR: [u8; 4] = *b"RDR\x01";
const MN: [u8; 4] = *b"BMS\x01";

fn ids() -> (PrincipalId, PrincipalId) {
    (PrincipalId::new(NR).unwrap(), PrincipalId::new(MN).unwrap())
}

fn endpoints(rk: [u8; 16], ck: [u8; 16]) -> (HandshakeState, HandshakeState) {
    let (nr, mn) = ids();
    (
        HandshakeState::reader(nr, MasterKey::from_bytes(rk)),
        HandshakeState::controller(mn, MasterKey::from_bytes(ck)),
    )
}

struct Run {
    reader: HandshakeState,
    controller: HandshakeState,
    msgs: Vec<Vec<u8>>,
}

fn honest(seed: u64) -> Run {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let m3 = reader.reader_answer(&m2).unwrap().encode();
    let m4 = controller
        .controller_key_confirm(&m3, &mut rng)
        .unwrap()
        .encode();
    let m5 = reader.reader_key_confirm(&m4, &mut rng).unwrap().encode();
    controller.controller_finalize(&m5).unwrap();
    Run {
        reader,
        controller,
        msgs: vec![m1, m2, m3, m4, m5],
    }
}

#[test]
fn message_one_layout() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (mut reader, _) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap();
    assert_eq!(m1.sender_id.as_bytes().len() + m1.body.len(), 20);
    assert_eq!(m1.encode().len(), HEADER_LEN + 16);
    assert_eq!(reader.phase(), Phase::Challenged);
}

#[test]
fn nonces_never_zero_and_vary_by_seed() {
    let mut seen = std::collections::HashSet::new();
    for seed in 0..1000 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (mut reader, _) = endpoints([7; 16], [7; 16]);
        let m1 = reader.reader_start(&mut rng).unwrap();
        assert!(m1.body.iter().any(|&b| b != 0));
        seen.insert(m1.body);
    }
    assert_eq!(seen.len(), 1000);
}

#[test]
fn honest_run_establishes_both_sides() {
    let mut run = honest(3);
    assert_eq!(run.reader.phase(), Phase::Established);
    assert_eq!(run.controller.phase(), Phase::Established);
    assert_eq!(run.reader.session_keys(), run.controller.session_keys());
    assert_eq!(run.msgs.len(), 5);

    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let rec = run
        .controller
        .channel_mut()
        .unwrap()
        .seal_record(b"diag", b"", &mut rng)
        .unwrap();
    assert_eq!(
        run.reader.channel_mut().unwrap().open_record(&rec).unwrap(),
        b"diag"
    );
    let back = run
        .reader
        .channel_mut()
        .unwrap()
        .seal_record(b"ack", b"", &mut rng)
        .unwrap();
    assert_eq!(
        run.controller
            .channel_mut()
            .unwrap()
            .open_record(&back)
            .unwrap(),
        b"ack"
    );
}

#[test]
fn zero_ch_r_rejected() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (_, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = HandshakeMessage {
        msg_no: 1,
        sender_id: ids().0,
        body: vec![0; 16],
    };
    assert_eq!(
        controller.controller_respond(&m1.encode(), &mut rng),
        Err(HandshakeError::InvalidNonce)
    );
    assert_eq!(controller.phase(), Phase::Failed);
}

#[test]
fn controller_challenge_opens_to_id_and_nonce() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap();
    let m2 = controller
        .controller_respond(&m1.encode(), &mut rng)
        .unwrap();
    let opened = double_decrypt(&MasterKey::from_bytes([7; 16]), &m2.body[16..]).unwrap();
    assert_eq!(&opened[..4], &MN);
    assert_eq!(&opened[4..20], m1.body.as_slice());
    assert_eq!(&opened[20..], &[0; 12]);
}

// Zero key, ch_r = 0x01.., M_N = "BMS\x01"; expected bytes from the
// independent AES-CBC oracle.
#[test]
fn golden_message_two_challenge() {
    let k = MasterKey::from_bytes([0; 16]);
    let resp = controller_challenge_response(&k, &ids().1, &Nonce::new([1; 16]).unwrap());
    assert_eq!(
        hex::encode(resp),
        "41b84451f4e76a2808d0353429afb03e7da7338e5faad000a129cd35be98b40e"
    );
}

#[test]
fn wrong_master_key_fails_at_reader() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let (mut reader, mut controller) = endpoints([7; 16], [8; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    assert_eq!(reader.reader_answer(&m2), Err(HandshakeError::AuthFailure));
    assert_eq!(reader.phase(), Phase::Failed);
    assert!(reader.session_keys().is_none());
}

#[test]
fn equal_nonces_rejected_by_reader() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let (mut reader, _) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap();
    let k = MasterKey::from_bytes([7; 16]);
    let ch_r = Nonce::from_slice(&m1.body).unwrap();
    let mut body = m1.body.clone();
    body.extend(controller_challenge_response(&k, &ids().1, &ch_r));
    let m2 = HandshakeMessage {
        msg_no: 2,
        sender_id: ids().1,
        body,
    };
    assert_eq!(
        reader.reader_answer(&m2.encode()),
        Err(HandshakeError::InvalidNonce)
    );
}

#[test]
fn message_three_reverses_under_encryption() {
    let run = honest(10);
    let m3 = HandshakeMessage::decode(&run.msgs[2]).unwrap();
    let enc = double_encrypt_blocks(&MasterKey::from_bytes([7; 16]), &m3.body).unwrap();
    assert_eq!(&enc[..4], &NR);
    assert_eq!(&enc[4..20], run.reader.ch_t().unwrap().as_bytes());
}

#[test]
fn reflected_challenge_rejected_by_controller() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller.controller_respond(&m1, &mut rng).unwrap();
    let reflected = HandshakeMessage {
        msg_no: 3,
        sender_id: ids().0,
        body: m2.body[16..].to_vec(),
    };
    assert_eq!(
        controller.controller_key_confirm(&reflected.encode(), &mut rng),
        Err(HandshakeError::AuthFailure)
    );
}

#[test]
fn short_message_three_is_malformed() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let mut m3 = reader.reader_answer(&m2).unwrap();
    m3.body.truncate(31);
    assert!(matches!(
        controller.controller_key_confirm(&m3.encode(), &mut rng),
        Err(HandshakeError::MalformedMessage(_))
    ));
}

#[test]
fn reader_opens_message_four_to_x() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let m3 = reader.reader_answer(&m2).unwrap().encode();
    let m4 = controller.controller_key_confirm(&m3, &mut rng).unwrap();
    let keys = reader.session_keys().unwrap().clone();
    let mut peer = ChannelState::new(keys);
    let rec = decode_secure_payload(&m4.body).unwrap();
    let pt = peer.open_record(&rec).unwrap();
    assert_eq!(pt, [MN.as_slice(), &m1, &m3].concat());
}

#[test]
fn modified_message_one_fails_before_message_five() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let mut forged = m1.clone();
    forged[HEADER_LEN] ^= 0x01;
    let m2 = controller
        .controller_respond(&forged, &mut rng)
        .unwrap()
        .encode();
    assert_eq!(reader.reader_answer(&m2), Err(HandshakeError::AuthFailure));

    // Rewritten sender id: the challenge still verifies, the id check does not.
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let mut forged = m1.clone();
    forged[1] ^= 0x01;
    let m2 = controller
        .controller_respond(&forged, &mut rng)
        .unwrap()
        .encode();
    let m3 = reader.reader_answer(&m2).unwrap().encode();
    assert!(controller.controller_key_confirm(&m3, &mut rng).is_err());
}

#[test]
fn transcript_mismatch_in_message_four_rejected() {
    // A key holder confirming a different msg1 than the reader sent.
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let m3 = reader.reader_answer(&m2).unwrap().encode();
    let mut channel = ChannelState::new(reader.session_keys().unwrap().clone());
    let mut altered = m1.clone();
    altered[HEADER_LEN + 3] ^= 0x10;
    let pt = [MN.as_slice(), &altered, &m3].concat();
    let rec = channel.seal_record(&pt, &[], &mut rng).unwrap();
    let m4 = HandshakeMessage {
        msg_no: 4,
        sender_id: ids().1,
        body: encode_secure_payload(&rec),
    };
    assert!(matches!(
        reader.reader_key_confirm(&m4.encode(), &mut rng),
        Err(HandshakeError::KeyConfirmFailure(_))
    ));
}

#[test]
fn confirmation_under_other_session_key_fails() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let m3 = reader.reader_answer(&m2).unwrap().encode();
    let _ = controller.controller_key_confirm(&m3, &mut rng).unwrap();

    let other = derive_session_keys(
        &MasterKey::from_bytes([1; 16]),
        &Nonce::new([1; 16]).unwrap(),
        &Nonce::new([2; 16]).unwrap(),
    )
    .unwrap();
    let mut wrong = ChannelState::new(other);
    let mut pt = MN.to_vec();
    pt.extend_from_slice(&m1);
    pt.extend_from_slice(&m3);
    let rec = wrong.seal_record(&pt, &[], &mut rng).unwrap();
    let m4 = HandshakeMessage {
        msg_no: 4,
        sender_id: ids().1,
        body: encode_secure_payload(&rec),
    };
    assert!(matches!(
        reader.reader_key_confirm(&m4.encode(), &mut rng),
        Err(HandshakeError::KeyConfirmFailure(_))
    ));
}

#[test]
fn stale_message_five_rejected() {
    let old = honest(16);
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let m3 = reader.reader_answer(&m2).unwrap().encode();
    controller.controller_key_confirm(&m3, &mut rng).unwrap();
    assert!(matches!(
        controller.controller_finalize(&old.msgs[4]),
        Err(HandshakeError::KeyConfirmFailure(_))
    ));
}

#[test]
fn truncated_message_five_is_malformed() {
    let mut rng = ChaCha20Rng::seed_from_u64(18);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let m3 = reader.reader_answer(&m2).unwrap().encode();
    let m4 = controller
        .controller_key_confirm(&m3, &mut rng)
        .unwrap()
        .encode();
    let m5 = reader.reader_key_confirm(&m4, &mut rng).unwrap().encode();
    assert!(matches!(
        controller.controller_finalize(&m5[..m5.len() - 3]),
        Err(HandshakeError::MalformedMessage(_))
    ));
}

#[test]
fn operations_out_of_order_fail() {
    let mut rng = ChaCha20Rng::seed_from_u64(19);
    let (mut reader, mut controller) = endpoints([7; 16], [7; 16]);
    assert!(matches!(
        reader.reader_answer(&[0; 10]),
        Err(HandshakeError::WrongPhase { .. })
    ));
    assert!(matches!(
        controller.reader_start(&mut rng),
        Err(HandshakeError::WrongPhase { .. })
    ));
    assert!(matches!(
        controller.controller_finalize(&[]),
        Err(HandshakeError::WrongPhase { .. })
    ));
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    assert!(matches!(
        reader.reader_start(&mut rng),
        Err(HandshakeError::WrongPhase { .. })
    ));
    assert!(matches!(
        controller.controller_key_confirm(&m1, &mut rng),
        Err(HandshakeError::WrongPhase { .. })
    ));
    assert!(reader.channel_mut().is_none());
}

#[test]
fn failed_state_is_terminal() {
    let mut rng = ChaCha20Rng::seed_from_u64(20);
    let (mut reader, mut controller) = endpoints([7; 16], [8; 16]);
    let m1 = reader.reader_start(&mut rng).unwrap().encode();
    let m2 = controller
        .controller_respond(&m1, &mut rng)
        .unwrap()
        .encode();
    let _ = reader.reader_answer(&m2);
    assert!(matches!(
        reader.reader_answer(&m2),
        Err(HandshakeError::WrongPhase {
            found: Phase::Failed,
            ..
        })
    ));
}

#[test]
fn wire_decode_rejects_bad_headers() {
    assert!(HandshakeMessage::decode(&[1, 0, 0, 0]).is_err());
    assert!(HandshakeMessage::decode(&[9, 1, 1, 1, 1, 0, 0]).is_err());
    assert!(HandshakeMessage::decode(&[1, 0, 0, 0, 0, 0, 0]).is_err());
    assert!(HandshakeMessage::decode(&[1, 1, 1, 1, 1, 0, 2, 5]).is_err());
    let ok = HandshakeMessage::decode(&[1, 1, 1, 1, 1, 0, 1, 5]).unwrap();
    assert_eq!(ok.body, vec![5]);
}
