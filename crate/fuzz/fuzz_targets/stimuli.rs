#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = icprobe::stimgen::StimulusSet::from_jsonl(text) {
        let again = icprobe::stimgen::StimulusSet::from_jsonl(&set.to_jsonl()).expect("written set parses");
        assert_eq!(again, set);
    }
});
