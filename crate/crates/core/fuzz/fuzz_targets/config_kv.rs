#![no_main]

use hawkes_fusion::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(kv) = parse_config(text) {
        let _ = kv.sim_config();
        let _ = kv.fit_config();
    }
});
