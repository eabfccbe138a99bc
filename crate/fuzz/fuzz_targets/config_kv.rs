#![no_main]
use libfuzzer_sys::fuzz_target;
use tret_core::config::{parse_kv, BuildConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = parse_kv(s) {
        let mut cfg = BuildConfig::default();
        for (k, v) in &pairs {
            if cfg.set(k, v).is_err() {
                return;
            }
        }
        let _ = cfg.validate();
    }
});
