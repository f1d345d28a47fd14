#![no_main]

use hybrid_sysid::MultiChannelSignal;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(sig) = MultiChannelSignal::parse_csv(text) {
            assert_eq!(sig.channels().len(), sig.names().len());
        }
    }
});
