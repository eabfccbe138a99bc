#![no_main]
use libfuzzer_sys::fuzz_target;
use tret_core::store::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<Manifest>(data) {
        let text = serde_json::to_string(&m).unwrap();
        let _ = serde_json::from_str::<Manifest>(&text);
    }
});
