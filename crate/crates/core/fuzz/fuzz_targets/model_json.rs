#![no_main]

use hawkes_fusion::data::{model_from_json, model_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = model_from_json(text) {
        // A parsed model must survive a write/read cycle.
        let again = model_to_json(&model).unwrap();
        model_from_json(&again).unwrap();
    }
});
