#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = icprobe::backend::TinyRnn::from_checkpoint(data) {
        assert_eq!(model.to_checkpoint(), data);
    }
});
