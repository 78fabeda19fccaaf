#![no_main]

use libfuzzer_sys::fuzz_target;
use qkdsim::config::{parse_loss_range, MAX_LOSS_POINTS};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(losses) = parse_loss_range(text) {
        assert!(!losses.is_empty() && losses.len() <= MAX_LOSS_POINTS);
        assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }
});
