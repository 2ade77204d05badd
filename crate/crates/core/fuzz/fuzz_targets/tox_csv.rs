#![no_main]

use hawkes_fusion::data::parse_tox;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tox) = parse_tox(data) {
        assert_eq!(tox.values().ncols(), tox.ids().len());
        assert_eq!(tox.values().nrows(), tox.substances().len());
    }
});
