//! Category keys parse for every task without panicking and round-trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use ubert::schema::{build_instance, CategoryLabel, TaskKind};

fuzz_target!(|data: &[u8]| {
    let Ok(key) = std::str::from_utf8(data) else { return };
    for task in TaskKind::ALL {
        if let Ok(label) = CategoryLabel::parse_key(task, key) {
            assert_eq!(CategoryLabel::parse_key(task, &label.key()).unwrap(), label);
            let _ = build_instance(task, label, "a b");
        }
    }
});
