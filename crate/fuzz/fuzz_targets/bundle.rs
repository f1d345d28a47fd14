#![no_main]

use hybrid_sysid::store::{decode_bundle, encode_bundle};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(bundle) = decode_bundle(data) {
        let bytes = encode_bundle(&bundle);
        let again = decode_bundle(&bytes).expect("own output rejected");
        assert_eq!(encode_bundle(&again), bytes);
    }
});
