#![no_main]

use libfuzzer_sys::fuzz_target;
use svfcl::adapters::AdapterCheckpoint;
use svfcl::linalg::Matrix;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = serde_json::from_slice::<AdapterCheckpoint>(data) else {
        return;
    };
    let (m, n) = ckpt.shape();
    // The shape is only a header field; keep the base weight small.
    if m == 0 || n == 0 || m > 32 || n > 32 {
        return;
    }
    let base: Vec<f64> = (0..m * n)
        .map(|i| ((i * 7919) % 23) as f64 - 11.0)
        .collect();
    let base = Matrix::from_vec(m, n, base).unwrap();
    if let Ok(layer) = ckpt.restore(base.clone()) {
        assert_eq!(layer.checkpoint().restore(base).unwrap(), layer);
    }
});
