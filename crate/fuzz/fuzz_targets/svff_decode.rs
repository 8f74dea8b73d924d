#![no_main]

use libfuzzer_sys::fuzz_target;
use svfcl::data::{decode_features, encode_features};

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = decode_features(data) {
        // Anything that decodes re-encodes to the same bytes.
        assert_eq!(encode_features(&set).unwrap(), data);
        assert!(set
            .samples
            .iter()
            .all(|s| s.features.len() == set.dim && s.label < set.n_classes));
    }
});
