#![no_main]
use libfuzzer_sys::fuzz_target;
use tret_core::graph::parse_graph_jsonl;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok((g, _)) = parse_graph_jsonl(s) {
        let (again, report) = parse_graph_jsonl(&g.to_jsonl()).expect("serialized graph parses");
        assert_eq!(again, g);
        assert_eq!(report.duplicate_edges, 0);
    }
});
