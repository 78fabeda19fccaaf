#![no_main]

use libfuzzer_sys::fuzz_target;
use qkdsim::report::read_csv_meta;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = read_csv_meta(text) {
        assert_eq!(read_csv_meta(&meta.header_line()).unwrap(), meta);
    }
});
