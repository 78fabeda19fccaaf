#![no_main]

use libfuzzer_sys::fuzz_target;
use qkdsim::report::{read_sweep_csv, write_sweep_csv, CsvMeta};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_sweep_csv(data) {
        let meta = CsvMeta {
            kind: "sweep".into(),
            schema: 1,
            config_sha256: "0".into(),
            seed: 0,
        };
        let mut out = Vec::new();
        write_sweep_csv(&mut out, &meta, &rows).unwrap();
        assert_eq!(read_sweep_csv(out.as_slice()).unwrap(), rows);
    }
});
