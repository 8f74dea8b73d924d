#![no_main]

use libfuzzer_sys::fuzz_target;
use svfcl::model::ModelCheckpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = serde_json::from_slice::<ModelCheckpoint>(data) else {
        return;
    };
    if let Ok(model) = ckpt.restore() {
        let back = model.checkpoint().restore().unwrap();
        assert_eq!(back.backbone, model.backbone);
        assert_eq!(back.ncm, model.ncm);
    }
});
