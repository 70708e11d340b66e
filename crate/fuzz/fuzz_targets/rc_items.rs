#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(items) = icprobe::lexicon::load_rc_items(text) {
        let again = icprobe::lexicon::load_rc_items(&icprobe::lexicon::write_rc_items(&items)).expect("written items parse");
        assert_eq!(again, items);
        let _ = icprobe::stimgen::gen_rc_reading(&items);
        let _ = icprobe::stimgen::gen_completion(&items);
    }
});
