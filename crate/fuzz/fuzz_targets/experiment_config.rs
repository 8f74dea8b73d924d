#![no_main]

use libfuzzer_sys::fuzz_target;
use svfcl::harness::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = parse_config(text) {
        // Accepted configs are valid and survive a round trip.
        config.validate().unwrap();
        let again = serde_json::to_string(&config).unwrap();
        assert_eq!(parse_config(&again).unwrap(), config);
    }
});
