#![no_main]
use libfuzzer_sys::fuzz_target;
use tret_core::graph::parse_graph_jsonl;
use tret_core::EncodingTree;

const GRAPH: &str = r#"{"kind":"node","id":"a","text":"a"}
{"kind":"node","id":"b","text":"b"}
{"kind":"node","id":"c","text":"c"}
{"kind":"node","id":"d","text":"d"}
{"kind":"edge","src":"a","dst":"b"}
{"kind":"edge","src":"c","dst":"d"}
{"kind":"edge","src":"b","dst":"c"}
"#;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let (g, _) = parse_graph_jsonl(GRAPH).unwrap();
    if let Ok(t) = EncodingTree::from_json(s, &g) {
        t.validate(&g).expect("parsed tree is valid");
        assert_eq!(EncodingTree::from_json(&t.to_json(&g), &g).unwrap(), t);
    }
});
