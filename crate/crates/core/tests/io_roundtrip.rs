use atst_core::frames::{
    read_frame_matrix, read_manifest, write_frame_matrix, write_manifest, CorpusManifest,
    LineRecord, Origin,
};
use atst_core::Error;
use atst_testkit::random_instance;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn origin() -> impl Strategy<Value = Origin> {
    prop_oneof![
        Just(Origin::Related),
        Just(Origin::TargetAnnotated),
        Just(Origin::TargetUnannotated),
        Just(Origin::MachineAnnotated),
    ]
}

fn record() -> impl Strategy<Value = LineRecord> {
    (
        origin(),
        proptest::option::of("[a-z ]{0,20}"),
        "[a-z ]{0,20}",
        0.0f64..=1.0,
        proptest::option::of(0.0f64..3.0),
        proptest::option::of(1u32..5),
    )
        .prop_map(|(origin, transcript, hyp, conf, cer, weight)| {
            let mut r = LineRecord::new("", "", origin);
            r.transcript = transcript;
            r.hypothesis = Some(hyp);
            r.confidence = Some(conf);
            r.cer = cer;
            r.weight = weight;
            r
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_matrix_file_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, m) = random_instance(&mut rng, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("random.fpm");
        write_frame_matrix(&m, &path).unwrap();
        let back = read_frame_matrix(&path, &a).unwrap();
        prop_assert_eq!(back.raw(), m.raw());
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 12 + 4 * m.raw().len());
    }

    #[test]
    fn manifest_round_trip(records in proptest::collection::vec(record(), 0..8), iteration in 0u32..5) {
        let mut m = CorpusManifest::new("alphabet.json", iteration);
        m.records = records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.line_id = format!("line{i:04}");
                r.frames_path = format!("frames/line{i:04}.fpm").into();
                r
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&m, &path).unwrap();
        prop_assert_eq!(read_manifest(&path).unwrap(), m);
    }
}

#[test]
fn bad_magic_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, m) = random_instance(&mut rng, 3);
    let mut bytes = m.to_fpm1_bytes();
    bytes[..4].copy_from_slice(b"XXXX");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.fpm");
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        read_frame_matrix(&path, &a),
        Err(Error::BadMagic { .. })
    ));
}
