use hybrid_sysid::lstm::LstmNetwork;
use hybrid_sysid::pipeline::{HybridPredictor, Scheme, WindowingConfig};
use hybrid_sysid::signal::StandardizationStats;
use hybrid_sysid::store::{
    decode_bundle, encode_bundle, load_bundle, parse_config, parse_manifest, save_bundle, ModelBundle, Provenance,
    RunConfig, BUNDLE_MAGIC,
};
use hybrid_sysid::synth::second_order_plant;
use hybrid_sysid::Error;
use proptest::prelude::*;

fn names(prefix: &str) -> Vec<String> {
    (1..=3).map(|i| format!("{prefix}_{i}")).collect()
}

fn hybrid2_bundle(seed: u64) -> ModelBundle {
    let frf = second_order_plant(names("drive"), names("force"), &[12.0, 18.0, 25.0], 0.2, 1.0, 0.1, 200.0, 60.0)
        .unwrap();
    let mut net = LstmNetwork::initialized(6, 3, &[5, 4], seed).unwrap();
    let mut in_names = names("drive");
    in_names.extend(names("frf:force"));
    let input = StandardizationStats::new(in_names, vec![0.1, -0.2, 0.3, 0.0, 1.5, -2.5], vec![1.0, 2.0, 0.5, 3.0, 1.0, 0.25])
        .unwrap();
    let output = StandardizationStats::new(names("force"), vec![0.0; 3], vec![7.0, 8.0, 9.0]).unwrap();
    net.set_stats(input, output).unwrap();
    let predictor = HybridPredictor::new(
        Scheme::Hybrid2,
        Some(frf),
        Some(net),
        WindowingConfig::new(128, 0.5, 8).unwrap(),
        names("drive"),
        names("force"),
    )
    .unwrap();
    ModelBundle {
        predictor,
        provenance: Provenance {
            seed,
            config_hash: "ab".repeat(32),
            manifest_hash: "cd".repeat(32),
        },
    }
}

#[test]
fn bundle_round_trips_bit_for_bit() {
    let b = hybrid2_bundle(3);
    let bytes = encode_bundle(&b);
    assert_eq!(&bytes[..8], BUNDLE_MAGIC);
    let back = decode_bundle(&bytes).unwrap();
    assert_eq!(back, b);
    assert_eq!(back.provenance, b.provenance);
    assert_eq!(encode_bundle(&back), bytes);
}

#[test]
fn save_load_save_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    let b = hybrid2_bundle(9);
    save_bundle(&b, &p1).unwrap();
    save_bundle(&load_bundle(&p1).unwrap(), &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn every_scheme_round_trips() {
    let frf = second_order_plant(names("x"), names("y"), &[5.0, 6.0, 7.0], 0.3, 1.0, 0.0, 100.0, 40.0).unwrap();
    let w = WindowingConfig::default();
    let predictors = [
        HybridPredictor::frf_only(frf.clone(), w).unwrap(),
        HybridPredictor::new(Scheme::Pure, None, Some(LstmNetwork::initialized(3, 3, &[10], 1).unwrap()), w, names("x"), names("y"))
            .unwrap(),
        HybridPredictor::new(Scheme::Hybrid1, Some(frf), Some(LstmNetwork::initialized(3, 3, &[2], 2).unwrap()), w, names("x"), names("y"))
            .unwrap(),
    ];
    for predictor in predictors {
        let b = ModelBundle {
            predictor,
            provenance: Provenance::default(),
        };
        assert_eq!(decode_bundle(&encode_bundle(&b)).unwrap(), b);
    }
}

#[test]
fn small_network_stores_its_parameter_count() {
    let net = LstmNetwork::initialized(3, 3, &[10], 4).unwrap();
    assert_eq!(net.parameter_count(), 593);
    let b = ModelBundle {
        predictor: HybridPredictor::new(Scheme::Pure, None, Some(net.clone()), WindowingConfig::default(), names("x"), names("y"))
            .unwrap(),
        provenance: Provenance::default(),
    };
    let bytes = encode_bundle(&b);
    // Every parameter is stored as 8 bytes.
    assert!(bytes.len() > 593 * 8);
    let back = decode_bundle(&bytes).unwrap();
    assert_eq!(back.predictor, b.predictor);
}

#[test]
fn truncation_is_detected() {
    let bytes = encode_bundle(&hybrid2_bundle(5));
    for cut in [bytes.len() - 1, bytes.len() - 4, bytes.len() / 2, 40] {
        let err = decode_bundle(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }), "cut at {cut}: {err}");
    }
    assert!(matches!(decode_bundle(&bytes[..13]), Err(Error::Corrupt(_))));
}

#[test]
fn corruption_is_detected() {
    let bytes = encode_bundle(&hybrid2_bundle(6));
    for i in [8, 20, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[i] ^= 0x10;
        assert!(matches!(decode_bundle(&bad), Err(Error::Checksum { .. })), "byte {i}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_bundle(&bad), Err(Error::Corrupt(_))));
}

#[test]
fn other_versions_are_refused() {
    let mut bytes = encode_bundle(&hybrid2_bundle(7));
    bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
    let n = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..n]);
    bytes[n..].copy_from_slice(&crc.to_le_bytes());
    assert!(matches!(decode_bundle(&bytes), Err(Error::Version(2))));
}

#[test]
fn missing_bundle_names_the_file() {
    let err = load_bundle("/nonexistent/model.bin").unwrap_err();
    assert!(err.to_string().contains("model.bin"), "{err}");
}

#[test]
fn default_config_round_trips() {
    let c = RunConfig::default();
    assert_eq!(parse_config(&c.to_text()).unwrap(), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode_bundle(&bytes);
        let mut framed = BUNDLE_MAGIC.to_vec();
        framed.extend_from_slice(&bytes);
        let n = framed.len();
        framed.extend_from_slice(&crc32fast::hash(&framed[..n]).to_le_bytes());
        let _ = decode_bundle(&framed);
    }

    #[test]
    fn decoder_survives_bit_flips_with_fixed_checksum(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = encode_bundle(&hybrid2_bundle(1));
        let n = bytes.len() - 4;
        let i = 8 + pos.index(n - 8);
        bytes[i] ^= 1 << bit;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        let _ = decode_bundle(&bytes);
    }

    #[test]
    fn text_parsers_never_panic(text in "[ -~\t\n#]{0,400}") {
        let _ = parse_manifest(&text);
        let _ = parse_config(&text);
        let _ = hybrid_sysid::MultiChannelSignal::parse_csv(&text);
    }
}
