//! Arbitrary bytes never panic the checkpoint readers; accepted tensor
//! sections rewrite to the same bytes and accepted models reload unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use ubert::model::UbertModel;
use ubert::tensor::checkpoint::{read_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok((header, params)) = read_checkpoint(data) {
        let mut out = Vec::new();
        write_checkpoint(&mut out, &header, &params).unwrap();
        assert_eq!(out, data);
    }
    if let Ok(model) = UbertModel::from_bytes(data) {
        let bytes = model.to_bytes().unwrap();
        assert_eq!(UbertModel::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }
});
