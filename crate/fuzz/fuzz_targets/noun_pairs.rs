#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = icprobe::lexicon::load_noun_pairs(text) {
        let again = icprobe::lexicon::load_noun_pairs(&icprobe::lexicon::write_noun_pairs(&pairs)).expect("written pairs parse");
        assert_eq!(again, pairs);
    }
});
