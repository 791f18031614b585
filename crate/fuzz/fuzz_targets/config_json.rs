//! Config and spec documents deserialize and validate without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use ubert::data::SyntheticSpec;
use ubert::gradcheck::GradCheckConfig;
use ubert::model::ModelConfig;
use ubert::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = serde_json::from_str::<ModelConfig>(text) {
        let _ = c.validate();
    }
    if let Ok(c) = serde_json::from_str::<TrainConfig>(text) {
        let _ = c.validate();
    }
    let _ = serde_json::from_str::<SyntheticSpec>(text);
    let _ = serde_json::from_str::<GradCheckConfig>(text);
});
