#![no_main]

use hawkes_fusion::data::parse_labels;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_labels(data);
});
