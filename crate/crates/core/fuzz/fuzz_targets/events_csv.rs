#![no_main]

use hawkes_fusion::data::{infer_window, parse_events, Window};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let window = Window::new(-1e6, 1e6, -1e6, 1e6, -1e6, 1e6).unwrap();
    if let Ok(ds) = parse_events(data, window, 4) {
        // Anything accepted must yield a usable window.
        let _ = infer_window(ds.events());
    }
});
