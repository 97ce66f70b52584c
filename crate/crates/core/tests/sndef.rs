use proptest::prelude::*;
use wbms_core::secure_channel::SecureRecord;
use wbms_core::sndef::*;

fn sample_secure() -> SecureRecord {
    SecureRecord {
        iv: [1; 16],
        sec_data: vec![2; 32],
        add_data: b"seq".to_vec(),
        tag: [3; 16],
    }
}

#[test]
fn single_empty_record_is_six_bytes() {
    let msg = NdefMessage::single(NdefRecord::new(RecordType::DiagPlain, vec![]));
    let raw = encode_message(&msg).unwrap();
    assert_eq!(raw, vec![0x03, FLAG_MB | FLAG_ME, 0, 0, 0, 0]);
    assert_eq!(decode_message(&raw).unwrap(), msg);
}

#[test]
fn length_is_sum_of_headers_and_payloads() {
    let msg = NdefMessage::from_records(vec![
        NdefRecord::new(RecordType::Handshake, vec![9; 10]),
        NdefRecord::new(RecordType::DiagPlain, vec![8; 3]),
        NdefRecord::new(RecordType::SndefSecure, vec![]),
    ]);
    let raw = encode_message(&msg).unwrap();
    assert_eq!(raw.len(), 6 * 3 + 13);
    assert_eq!(decode_message(&raw).unwrap(), msg);
}

#[test]
fn oversize_rejected() {
    let msg = NdefMessage::single(NdefRecord::new(RecordType::DiagPlain, vec![0; 8 * 1024]));
    assert!(matches!(
        encode_message(&msg),
        Err(CodecError::OversizeMessage {
            size: 8198,
            limit: 8192
        })
    ));
    let fits = NdefMessage::single(NdefRecord::new(RecordType::DiagPlain, vec![0; 8186]));
    assert_eq!(encode_message(&fits).unwrap().len(), 8192);
    assert!(encode_message_with_limit(&fits, 100).is_err());
}

#[test]
fn encode_checks_flags_and_emptiness() {
    assert_eq!(
        encode_message(&NdefMessage { records: vec![] }),
        Err(CodecError::EmptyMessage)
    );
    let bad = NdefMessage {
        records: vec![NdefRecord::new(RecordType::DiagPlain, vec![])],
    };
    assert_eq!(encode_message(&bad), Err(CodecError::BadFlags { index: 0 }));
}

#[test]
fn decode_truncated_payload() {
    let raw = [0x03, 0xC0, 0, 0, 0, 5, 1, 2];
    assert_eq!(
        decode_message(&raw),
        Err(CodecError::Truncated {
            needed: 5,
            available: 2
        })
    );
    assert!(matches!(
        decode_message(&[0x03, 0xC0, 0]),
        Err(CodecError::Truncated { .. })
    ));
    assert!(matches!(
        decode_message(&[]),
        Err(CodecError::Truncated { .. })
    ));
}

#[test]
fn decode_missing_me_is_bad_flags() {
    let raw = [0x03, FLAG_MB, 0, 0, 0, 1, 7];
    assert_eq!(decode_message(&raw), Err(CodecError::BadFlags { index: 0 }));
    let trailing = [0x03, FLAG_MB | FLAG_ME, 0, 0, 0, 0, 0x03];
    assert_eq!(
        decode_message(&trailing),
        Err(CodecError::BadFlags { index: 0 })
    );
    let no_mb = [0x03, FLAG_ME, 0, 0, 0, 0];
    assert_eq!(
        decode_message(&no_mb),
        Err(CodecError::BadFlags { index: 0 })
    );
    let reserved = [0x03, FLAG_MB | FLAG_ME | 0x01, 0, 0, 0, 0];
    assert_eq!(
        decode_message(&reserved),
        Err(CodecError::BadFlags { index: 0 })
    );
}

#[test]
fn decode_unknown_type() {
    assert_eq!(
        decode_message(&[0x7f, 0xC0, 0, 0, 0, 0]),
        Err(CodecError::UnknownType(0x7f))
    );
}

#[test]
fn secure_wrap_layout() {
    let mut r = sample_secure();
    r.add_data.clear();
    let rec = wrap_secure(&r);
    assert_eq!(rec.type_code, RecordType::SndefSecure);
    assert_eq!(rec.payload.len(), 34 + r.sec_data.len());
    assert_eq!(&rec.payload[..16], &r.iv);
    assert_eq!(&rec.payload[16..32], &r.tag);
    assert_eq!(&rec.payload[32..34], &[0, 0]);
    assert_eq!(unwrap_secure(&rec).unwrap(), r);
}

#[test]
fn unwrap_wrong_type_or_short() {
    let rec = NdefRecord::new(
        RecordType::DiagPlain,
        encode_secure_payload(&sample_secure()),
    );
    assert_eq!(unwrap_secure(&rec), Err(CodecError::UnknownType(0x03)));
    let short = NdefRecord::new(RecordType::SndefSecure, vec![0; 33]);
    assert!(matches!(
        unwrap_secure(&short),
        Err(CodecError::Truncated { .. })
    ));
    let mut p = encode_secure_payload(&sample_secure());
    p[33] = 0xff;
    let lying = NdefRecord::new(RecordType::SndefSecure, p);
    assert!(matches!(
        unwrap_secure(&lying),
        Err(CodecError::Truncated { .. })
    ));
}

#[test]
fn secure_payload_holds_plaintext_only_in_add_data() {
    use rand::SeedableRng;
    use wbms_core::secure_channel::{derive_session_keys, ChannelState, MasterKey, Nonce};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
    let keys = derive_session_keys(
        &MasterKey::from_bytes([5; 16]),
        &Nonce::new([1; 16]).unwrap(),
        &Nonce::new([2; 16]).unwrap(),
    )
    .unwrap();
    let mut ch = ChannelState::new(keys);
    let secret = b"cell voltage table: 3701 3699 3702 3700";
    let rec = ch.seal_record(secret, b"AD", &mut rng).unwrap();
    let payload = encode_secure_payload(&rec);
    assert!(!payload
        .windows(8)
        .any(|w| secret.windows(8).any(|s| s == w)));
    assert_eq!(&payload[34..36], b"AD");
}

fn arb_record() -> impl Strategy<Value = NdefRecord> {
    (0u8..3, proptest::collection::vec(any::<u8>(), 0..200))
        .prop_map(|(t, payload)| NdefRecord::new(RecordType::from_code(t + 1).unwrap(), payload))
}

proptest! {
    #[test]
    fn message_round_trip(records in proptest::collection::vec(arb_record(), 1..8)) {
        let msg = NdefMessage::from_records(records);
        let raw = encode_message(&msg).unwrap();
        prop_assert_eq!(raw.len(), msg.encoded_len());
        prop_assert_eq!(decode_message(&raw).unwrap(), msg);
    }

    #[test]
    fn secure_round_trip(
        iv in any::<[u8; 16]>(),
        tag in any::<[u8; 16]>(),
        add in proptest::collection::vec(any::<u8>(), 0..64),
        blocks in 1usize..8,
    ) {
        let r = SecureRecord { iv, tag, add_data: add, sec_data: vec![0xa5; blocks * 16] };
        prop_assert_eq!(unwrap_secure(&wrap_secure(&r)).unwrap(), r);
    }

    #[test]
    fn decode_never_panics(raw in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_message(&raw);
    }
}
