use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use trustbridge_core::codec::{decode, encode, DecodeError, EncodeError};
use trustbridge_core::crypto::{keygen, sign};
use trustbridge_core::types::{
    AlarmBody, AlarmMessage, Light, Record, RecordBody, SensorReading, UploadPayload, ViolationKind,
};

fn reading() -> impl Strategy<Value = SensorReading> {
    (any::<bool>(), -60.0..80.0f64, -90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(bright, k, lat, lon)| {
        let light = if bright { Light::Bright } else { Light::Dark };
        SensorReading::new(light, k, lat, lon).unwrap()
    })
}

fn record() -> impl Strategy<Value = Record> {
    (any::<u64>(), reading(), proptest::collection::vec(any::<u8>(), 64)).prop_map(|(t, reading, sig)| Record {
        t,
        reading,
        pi: trustbridge_core::types::Signature(sig),
    })
}

proptest! {
    #[test]
    fn record_body_round_trip(t in any::<u64>(), c in reading()) {
        let body = RecordBody { t_ms: t, reading: c };
        let bytes = encode(&body).unwrap();
        prop_assert_eq!(bytes.len(), 34);
        prop_assert_eq!(decode::<RecordBody>(&bytes).unwrap(), body);
    }

    #[test]
    fn payload_round_trip(records in proptest::collection::vec(record(), 0..8)) {
        let payload = UploadPayload { records };
        let bytes = encode(&payload).unwrap();
        prop_assert_eq!(decode::<UploadPayload>(&bytes).unwrap(), payload);
    }

    #[test]
    fn alarm_round_trip(t in any::<u64>(), kinds in proptest::sample::subsequence(ViolationKind::ALL.to_vec(), 1..=3)) {
        let body = AlarmBody { t_ms: t, messages: kinds.clone() };
        prop_assert_eq!(decode::<AlarmBody>(&encode(&body).unwrap()).unwrap(), body);
        let msg = AlarmMessage { t, messages: kinds, sig: trustbridge_core::types::Signature(vec![7; 64]) };
        prop_assert_eq!(decode::<AlarmMessage>(&encode(&msg).unwrap()).unwrap(), msg);
    }

    #[test]
    fn truncation_never_decodes(t in any::<u64>(), c in reading(), cut in 0usize..34) {
        let bytes = encode(&RecordBody { t_ms: t, reading: c }).unwrap();
        prop_assert!(decode::<RecordBody>(&bytes[..cut]).is_err());
    }

    #[test]
    fn signatures_bind_the_encoding(t in 0u64..1 << 40, c in reading(), dt in 1u64..1000) {
        let keys = keygen([3; 32]);
        let pk = keys.tee_pk;
        let sig = sign(&encode(&RecordBody { t_ms: t, reading: c }).unwrap(), &keys.tee_sk);
        let shifted = encode(&RecordBody { t_ms: t + dt, reading: c }).unwrap();
        prop_assert!(!trustbridge_core::crypto::verify(&shifted, sig.as_bytes(), &pk));
    }
}

#[test]
fn encoding_is_injective_over_many_records() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let mut bodies = BTreeSet::new();
    let mut encodings = BTreeSet::new();
    for i in 0..100_000u64 {
        // small value ranges force plenty of near-collisions
        let light = if rng.gen_bool(0.5) { Light::Bright } else { Light::Dark };
        let k = rng.gen_range(0..40) as f64 * 0.25;
        let lat = rng.gen_range(-3..=3) as f64 * 0.5;
        let lon = if i % 7 == 0 { -0.0 } else { rng.gen_range(-3..=3) as f64 * 0.5 };
        let t = rng.gen_range(0..200u64);
        let reading = SensorReading::new(light, k, lat, lon).unwrap();
        let body = RecordBody { t_ms: t, reading };
        let key = (t, light.bit(), k.to_bits(), lat.to_bits(), lon.to_bits());
        bodies.insert(key);
        encodings.insert(encode(&body).unwrap());
    }
    assert_eq!(bodies.len(), encodings.len());
}

#[test]
fn non_finite_values_are_refused() {
    let mut c = SensorReading::new(Light::Dark, 14.0, 0.0, 0.0).unwrap();
    c.temperature_c = f64::NAN;
    assert!(matches!(encode(&RecordBody { t_ms: 0, reading: c }), Err(EncodeError::NonFinite { .. })));
    c.temperature_c = f64::INFINITY;
    assert!(encode(&RecordBody { t_ms: 0, reading: c }).is_err());
    assert!(matches!(decode::<RecordBody>(&[]), Err(DecodeError::Empty)));
}
