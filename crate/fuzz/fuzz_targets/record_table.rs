#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    use icprobe::report::table::{read_table_str, write_table_string, TableFormat};
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = read_table_str(text) {
        if let Ok(jsonl) = write_table_string(&records, TableFormat::JsonLines) {
            assert_eq!(read_table_str(&jsonl).expect("written table parses"), records);
        }
        if let Ok(tsv) = write_table_string(&records, TableFormat::Tsv) {
            let back = read_table_str(&tsv).expect("written table parses");
            assert_eq!(write_table_string(&back, TableFormat::Tsv).unwrap(), tsv);
        }
    }
});
