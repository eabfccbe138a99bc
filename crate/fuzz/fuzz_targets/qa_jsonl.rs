#![no_main]
use libfuzzer_sys::fuzz_target;
use tret_core::pipeline::parse_qa_jsonl;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(items) = parse_qa_jsonl(s) {
            assert!(items.iter().all(|i| !i.answers.is_empty()));
        }
    }
});
