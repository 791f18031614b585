//! Tokens must be ordered, non-overlapping, and map back to their own text.

#![no_main]

use libfuzzer_sys::fuzz_target;
use ubert::tokenizer::{char_slice, tokenize};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let seq = tokenize(&text);
    let chars = text.chars().count();
    let mut prev_end = 0;
    for (i, t) in seq.tokens.iter().enumerate() {
        assert!(prev_end <= t.char_start && t.char_start < t.char_end && t.char_end <= chars);
        assert_eq!(char_slice(&text, t.char_start, t.char_end), t.text);
        assert_eq!(seq.token_span_of_char_span(t.char_start, t.char_end).unwrap(), (i, i));
        prev_end = t.char_end;
    }
});
