//! Any accepted record line re-serializes to an equal record.

#![no_main]

use libfuzzer_sys::fuzz_target;
use ubert::data::parse_record_line;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(record) = parse_record_line(text, 1) {
        let json = record.to_json().expect("accepted records serialize").to_string();
        assert_eq!(parse_record_line(&json, 1).expect("reparse"), record);
        let _ = record.expand();
    }
});
