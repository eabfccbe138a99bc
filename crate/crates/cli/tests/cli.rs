use std::path::Path;
use std::process::{Command, Output};

const BRIDGE: &str = r#"{"kind":"node","id":"a","text":"text a"}
{"kind":"node","id":"b","text":"text b"}
{"kind":"node","id":"c","text":"text c"}
{"kind":"node","id":"d","text":"text d"}
{"kind":"node","id":"e","text":"text e"}
{"kind":"node","id":"f","text":"text f"}
{"kind":"edge","src":"a","dst":"b"}
{"kind":"edge","src":"b","dst":"c"}
{"kind":"edge","src":"c","dst":"a"}
{"kind":"edge","src":"d","dst":"e"}
{"kind":"edge","src":"e","dst":"f"}
{"kind":"edge","src":"f","dst":"d"}
{"kind":"edge","src":"c","dst":"d"}
"#;

fn tret(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tret"))
        .args(args)
        .env_remove("TRET_API_BASE")
        .env_remove("TRET_API_KEY")
        .env_remove("TRET_EMBED_MODEL")
        .env_remove("TRET_CHAT_MODEL")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Exit code and the single stderr line.
fn failure(out: &Output) -> (i32, String) {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(err.trim_end().lines().count(), 1, "stderr: {err}");
    (out.status.code().unwrap(), err.trim_end().to_string())
}

fn build_bridge(dir: &Path) -> String {
    let graph = dir.join("g.jsonl");
    std::fs::write(&graph, BRIDGE).unwrap();
    let idx = dir.join("idx");
    let report = stdout_json(&tret(&[
        "build",
        "--graph",
        graph.to_str().unwrap(),
        "--out",
        idx.to_str().unwrap(),
        "--levels",
        "2",
        "--lambda",
        "0",
    ]));
    assert_eq!(report["tree"]["nodes"], 9);
    idx.to_str().unwrap().to_string()
}

#[test]
fn build_and_query_json() {
    let tmp = tempfile::tempdir().unwrap();
    let idx = build_bridge(tmp.path());
    for k in ["1", "4", "20"] {
        let v = stdout_json(&tret(&["query", &idx, "text e", "--json", "-k", k]));
        let want = k.parse::<usize>().unwrap().min(9);
        assert_eq!(v["hits"].as_array().unwrap().len(), want);
        assert!(v["answer"].is_null());
        assert!((v["hits"][0]["sim"].as_f64().unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(v["hits"][0]["level"], 2);
        if k == "1" {
            assert_eq!(v["nodes"].as_array().unwrap().len(), 1);
            assert_eq!(v["nodes"][0]["id"], "e");
        }
    }
    let plain = tret(&["query", &idx, "text e", "-k", "1"]);
    assert_eq!(String::from_utf8(plain.stdout).unwrap(), "node e: text e\n");
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let idx = build_bridge(tmp.path());
    let (code, line) = failure(&tret(&["query", &idx, "x", "-k", "0"]));
    assert_eq!(code, 2);
    assert!(line.starts_with("error[usage]: "), "{line}");

    let (code, line) = failure(&tret(&["build", "--graph", "g", "--out", "o", "--lambda", "-1"]));
    assert_eq!(code, 2);
    assert!(line.contains("lambda"), "{line}");

    let (code, line) = failure(&tret(&["frobnicate"]));
    assert_eq!(code, 2);
    assert!(line.starts_with("error[usage]: "), "{line}");

    let (code, _) = failure(&tret(&["query", &idx, "x", "--answer"]));
    assert_eq!(code, 2);
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none");
    let (code, line) = failure(&tret(&["query", missing.to_str().unwrap(), "x"]));
    assert_eq!(code, 3);
    assert!(line.starts_with("error[data]: "), "{line}");

    let idx = build_bridge(tmp.path());
    std::fs::write(Path::new(&idx).join("embeddings.bin"), b"NOPE").unwrap();
    let (code, line) = failure(&tret(&["query", &idx, "x"]));
    assert_eq!(code, 3);
    assert!(line.contains("bad magic"), "{line}");
}

#[test]
fn provider_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("g.jsonl");
    std::fs::write(&graph, BRIDGE).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tret"))
        .args(["build", "--graph", graph.to_str().unwrap(), "--out"])
        .arg(tmp.path().join("idx"))
        .args(["--embedder", "http", "--embed-model", "m"])
        .env_remove("TRET_API_BASE")
        .env_remove("TRET_API_KEY")
        .output()
        .unwrap();
    let (code, line) = failure(&out);
    assert_eq!(code, 4);
    assert!(line.starts_with("error[provider]: embedding: "), "{line}");
    assert!(!tmp.path().join("idx").exists());
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("g.jsonl");
    std::fs::write(&graph, BRIDGE).unwrap();
    let conf = tmp.path().join("tret.conf");
    std::fs::write(
        &conf,
        format!(
            "# bridge\ngraph = {}\nout = {}\nlevels = 3\nlambda = 0\n",
            graph.display(),
            tmp.path().join("idx").display()
        ),
    )
    .unwrap();
    let v = stdout_json(&tret(&["--config", conf.to_str().unwrap(), "build", "--levels", "2"]));
    assert_eq!(v["tree"]["height"], 2);

    std::fs::write(&conf, "lambda = -2\n").unwrap();
    let (code, _) = failure(&tret(&["--config", conf.to_str().unwrap(), "build"]));
    assert_eq!(code, 2);
    std::fs::write(&conf, "colour = blue\n").unwrap();
    let (code, line) = failure(&tret(&["--config", conf.to_str().unwrap(), "build"]));
    assert_eq!(code, 2);
    assert!(line.contains("colour"), "{line}");
}

#[test]
fn gen_build_eval_entropy() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("gen");
    let g = stdout_json(&tret(&[
        "gen",
        "--n",
        "80",
        "--seed",
        "3",
        "--questions",
        "10",
        "--out",
        gen.to_str().unwrap(),
    ]));
    assert_eq!(g["nodes"], 80);
    let idx = tmp.path().join("idx");
    stdout_json(&tret(&[
        "--threads",
        "2",
        "build",
        "--graph",
        gen.join("graph.jsonl").to_str().unwrap(),
        "--node-embeddings",
        gen.join("embeddings.bin").to_str().unwrap(),
        "--out",
        idx.to_str().unwrap(),
        "--ann",
    ]));
    let r = stdout_json(&tret(&[
        "eval",
        idx.to_str().unwrap(),
        gen.join("qa.jsonl").to_str().unwrap(),
        "--mode",
        "strict",
    ]));
    assert_eq!(r["queries"], 10);
    assert_eq!(r["mode"], "strict");
    assert!(r["mean_ratio"].as_f64().unwrap() < 1.0);

    let e = stdout_json(&tret(&["entropy", idx.to_str().unwrap(), "--oracle", "--lambda", "0.5"]));
    let (total, oracle) = (e["total"].as_f64().unwrap(), e["oracle_total"].as_f64().unwrap());
    assert!((total - oracle).abs() < 1e-9);

    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let (code, _) = failure(&tret(&["eval", idx.to_str().unwrap(), empty.to_str().unwrap()]));
    assert_eq!(code, 3);
}
