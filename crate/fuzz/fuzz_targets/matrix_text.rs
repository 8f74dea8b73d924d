#![no_main]

use libfuzzer_sys::fuzz_target;
use svfcl::linalg::Matrix;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = Matrix::parse_text(text) {
        assert!(m.data().iter().all(|v| v.is_finite()));
        assert_eq!(m.data().len(), m.rows() * m.cols());
        assert_eq!(Matrix::parse_text(&m.to_text()).unwrap(), m);
    }
});
