#![no_main]

use hybrid_sysid::store::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Anything accepted must survive a round trip through its own text form.
        if let Ok(cfg) = parse_config(text) {
            let once = cfg.to_text();
            let again = parse_config(&once).expect("own output rejected");
            assert_eq!(again.to_text(), once);
        }
    }
});
