#![no_main]
use libfuzzer_sys::fuzz_target;
use tret_core::index::{parse_summaries_jsonl, summaries_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(sums) = parse_summaries_jsonl(s) {
        assert_eq!(parse_summaries_jsonl(&summaries_to_jsonl(&sums)).unwrap(), sums);
    }
});
