#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(norms) = icprobe::lexicon::load_verb_norms(text) {
        let again = icprobe::lexicon::load_verb_norms(&icprobe::lexicon::write_verb_norms(&norms)).expect("written norms parse");
        assert_eq!(again, norms);
    }
});
