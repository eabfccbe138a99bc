//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tret_core::config::{Bandwidth, BuildConfig};
use tret_core::embedding::encode_embeddings;
use tret_core::entropy::{select_bandwidth, total_tree_entropy, DEFAULT_BANDWIDTH_GRID};
use tret_core::error::Error;
use tret_core::graph::NodeIx;
use tret_core::pipeline::{build_bundle, cmd_build, parse_qa_jsonl, planted_questions};
use tret_core::providers::HttpSettings;
use tret_core::retriever::Retriever;
use tret_core::store::{load_index, save_index, StoreError};
use tret_core::testkit::{
    adjusted_rand_index, catalytic_sweep, enumerate_bipartitions, gen_planted, level_labels, oracle_total_entropy,
    random_graph, random_tree, random_unit_rows, tree_edges, CatalyticInstance, PlantedKind, PlantedSpec,
    SemanticLayout,
};
use tret_core::tree::{bipartition, prune_delta, regulate};
use tret_core::{build_encoding_tree, EncodingTree, EntropyModel, EntropyParams, SolverConfig, TextualAttributedGraph};

const TOL: f64 = 1e-9;
const LAMBDAS: [f64; 3] = [0.0, 0.5, 1.0];

type Outcome = Result<String, String>;

/// Random graph with at least one edge.
fn connected_enough(n: usize, p: f64, rng: &mut ChaCha8Rng) -> TextualAttributedGraph {
    loop {
        let g = random_graph(n, p, rng);
        if g.edge_count() > 0 {
            return g;
        }
    }
}

fn params(lambda: f64, dim: usize) -> EntropyParams {
    EntropyParams::new(lambda, 0.5, dim).unwrap().exact()
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs()))
    } else {
        Ok(())
    }
}

fn c1_entropy_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let cases = 240;
    for case in 0..cases {
        let n = rng.gen_range(2..=12);
        let g = connected_enough(n, 0.4, &mut rng);
        let height = rng.gen_range(1..=4);
        let tree = random_tree(&g, height, &mut rng);
        let emb = random_unit_rows(n, 4, &mut rng);
        let p = params(LAMBDAS[case % 3], 4);
        let fast = total_tree_entropy(&tree, &g, &emb, &p).map_err(|e| e.to_string())?;
        let oracle = oracle_total_entropy(&tree, &g, &emb, &p).map_err(|e| e.to_string())?;
        let d = (fast - oracle).abs();
        worst = worst.max(d);
        if !(d <= TOL) {
            return Err(format!("case {case}: fast {fast} vs oracle {oracle}"));
        }
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!("{cases} pairs, max |delta| = {worst:.2e}, {:.2}s", start.elapsed().as_secs_f64()))
}

fn c2_exact_partition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SolverConfig {
        exact_threshold: 12,
        seed: 42,
    };
    let mut checked = 0;
    let mut worst = 0.0f64;
    for graph in 0..100 {
        let g = connected_enough(14, 0.35, &mut rng);
        let emb = random_unit_rows(14, 4, &mut rng);
        let p = params(LAMBDAS[graph % 3], 4);
        let model = EntropyModel::new(&g, &emb, p).map_err(|e| e.to_string())?;
        for size in 2..=12 {
            let mut members: Vec<NodeIx> = rand::seq::index::sample(&mut rng, 14, size).into_vec();
            members.sort_unstable();
            let ours = bipartition(&model, &members, &cfg).map_err(|e| e.to_string())?;
            let oracle = enumerate_bipartitions(&g, &members, &emb, &p).map_err(|e| e.to_string())?;
            let d = (ours.best.objective - oracle.objective).abs();
            worst = worst.max(d);
            if !ours.exact || !(d <= TOL) {
                return Err(format!(
                    "graph {graph}, size {size}: solver {} vs oracle {}",
                    ours.best.objective, oracle.objective
                ));
            }
            checked += 1;
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "{checked} clusters on 100 graphs, max |delta| = {worst:.2e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn c3_regulate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let cases = 150;
    for case in 0..cases {
        let n = rng.gen_range(2..=12);
        let g = connected_enough(n, 0.4, &mut rng);
        let mut tree = random_tree(&g, rng.gen_range(1..=4), &mut rng);
        let emb = random_unit_rows(n, 4, &mut rng);
        let p = params(LAMBDAS[case % 3], 4);
        let before = oracle_total_entropy(&tree, &g, &emb, &p).map_err(|e| e.to_string())?;
        let edges = tree_edges(&tree);
        let (alpha, beta) = edges[rng.gen_range(0..edges.len())];
        let gamma = regulate(&mut tree, alpha, beta).map_err(|e| e.to_string())?;
        // The pass-through convention: β now sits under a node with the same
        // member set and contributes nothing.
        let model = EntropyModel::new(&g, &emb, p).map_err(|e| e.to_string())?;
        let (b, gm) = (tree.node(beta), tree.node(gamma));
        if b.members != gm.members || model.term(&b.members, b.cut, b.volume, gm.len(), gm.volume) != 0.0 {
            return Err(format!("case {case}: pass-through term is not zero"));
        }
        let after = oracle_total_entropy(&tree, &g, &emb, &p).map_err(|e| e.to_string())?;
        let fast = total_tree_entropy(&tree, &g, &emb, &p).map_err(|e| e.to_string())?;
        let d = (before - after).abs().max((fast - after).abs());
        worst = worst.max(d);
        if !(d <= TOL) {
            return Err(format!("case {case}: before {before}, after {after}, fast {fast}"));
        }
    }
    Ok(format!("{cases} regulate sites, max |delta| = {worst:.2e}"))
}

fn c4_prune() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases = 0;
    let mut worst = 0.0f64;
    let mut trees = 0;
    while cases < 150 {
        trees += 1;
        let n = rng.gen_range(3..=12);
        let g = connected_enough(n, 0.4, &mut rng);
        let tree = random_tree(&g, rng.gen_range(2..=4), &mut rng);
        let emb = random_unit_rows(n, 4, &mut rng);
        let p = params(LAMBDAS[trees % 3], 4);
        let model = EntropyModel::new(&g, &emb, p).map_err(|e| e.to_string())?;
        let candidates: Vec<_> = tree
            .node_ids()
            .into_iter()
            .filter(|&id| tree.node(id).parent.is_some() && !tree.node(id).is_leaf())
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let before = oracle_total_entropy(&tree, &g, &emb, &p).map_err(|e| e.to_string())?;
        let mut best: Option<(f64, usize)> = None;
        for &alpha in &candidates {
            let predicted = prune_delta(&tree, alpha, &model).map_err(|e| e.to_string())?;
            let mut t = tree.clone();
            t.prune(alpha).map_err(|e| e.to_string())?;
            let scratch = oracle_total_entropy(&t, &g, &emb, &p).map_err(|e| e.to_string())? - before;
            let d = (predicted - scratch).abs();
            worst = worst.max(d);
            if !(d <= TOL) {
                return Err(format!("tree {trees}, node {alpha}: predicted {predicted}, scratch {scratch}"));
            }
            if best.is_none_or(|(b, _)| predicted < b) {
                best = Some((predicted, alpha));
            }
            cases += 1;
        }
        let (delta, alpha) = best.expect("non-empty candidates");
        let mut t = tree.clone();
        t.prune(alpha).map_err(|e| e.to_string())?;
        let total = total_tree_entropy(&t, &g, &emb, &p).map_err(|e| e.to_string())?;
        if !((total - (before + delta)).abs() <= TOL) {
            return Err(format!("tree {trees}: chosen prune gives {total}, predicted {}", before + delta));
        }
    }
    Ok(format!("{cases} prune deltas over {trees} trees, max |delta| = {worst:.2e}"))
}

/// Independent structural check of a built tree.
fn check_levels(tree: &EncodingTree, n: usize, levels: usize) -> Result<(), String> {
    if tree.height() > levels {
        return Err(format!("height {} above {levels}", tree.height()));
    }
    for depth in 0..=levels {
        let mut seen = vec![0usize; n];
        for id in tree.level(depth) {
            for &v in &tree.node(id).members {
                seen[v] += 1;
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(format!("level {depth} is not a partition of V"));
        }
    }
    for id in tree.node_ids() {
        let node = tree.node(id);
        if node.is_leaf() {
            if node.members.len() != 1 || node.depth != levels {
                return Err(format!("leaf {id} has {} members at depth {}", node.members.len(), node.depth));
            }
            continue;
        }
        let mut union: Vec<NodeIx> = node
            .children
            .iter()
            .flat_map(|&c| tree.node(c).members.iter().copied())
            .collect();
        let total = union.len();
        union.sort_unstable();
        union.dedup();
        if union.len() != total || union != node.members {
            return Err(format!("node {id} is not the disjoint union of its children"));
        }
    }
    Ok(())
}

fn c5_tree_validity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut largest = 0;
    for case in 0..50u64 {
        let n = rng.gen_range(2..=200);
        let p = (4.0 / n as f64).min(0.8);
        let g = random_graph(n, p, &mut rng);
        let emb = random_unit_rows(n, 8, &mut rng);
        let levels = rng.gen_range(1..=4);
        let lambda = LAMBDAS[case as usize % 3];
        let params = EntropyParams::new(lambda, 0.4, 8).unwrap();
        let model = EntropyModel::new(&g, &emb, params).map_err(|e| e.to_string())?;
        let cfg = SolverConfig { exact_threshold: 12, seed: case };
        let (tree, _) = build_encoding_tree(&model, levels, &cfg).map_err(|e| e.to_string())?;
        check_levels(&tree, n, levels).map_err(|e| format!("case {case} (n={n}, L={levels}): {e}"))?;
        largest = largest.max(n);
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!("50 builds, n up to {largest}, {:.2}s", start.elapsed().as_secs_f64()))
}

fn c6_catalytic() -> Outcome {
    let inst = CatalyticInstance::shipped();
    inst.check()?;
    let report = catalytic_sweep(&inst, &inst.grid)?;
    let zero = &report.rows[0];
    if zero.lambda != 0.0 || zero.together {
        return Err(format!("lambda = 0 split keeps u and v together: {:?}", zero.u_side));
    }
    let hit = report
        .rows
        .iter()
        .find(|r| r.lambda <= 10.0 && r.together && !r.bridging.is_empty())
        .ok_or("no grid lambda <= 10 co-clusters u and v with a bridging node")?;
    Ok(format!(
        "lambda0 = {:?}; at lambda = {} u's side is {:?} (bridging {:?}); later separations at {:?}",
        report.lambda0, hit.lambda, hit.u_side, hit.bridging, report.violations
    ))
}

fn c7_ablation() -> Outcome {
    let mut per_seed = Vec::new();
    for seed in 0..20u64 {
        let spec = PlantedSpec {
            n: 120,
            blocks: 4,
            p_in: 0.12,
            p_out: 0.04,
            ..PlantedSpec::new(PlantedKind::Sbm, 120, seed, SemanticLayout::Aligned)
        };
        let inst = gen_planted(&spec)?;
        let h = select_bandwidth(&inst.embeddings, &DEFAULT_BANDWIDTH_GRID).map_err(|e| e.to_string())?;
        let mut ari = [0.0; 2];
        for (slot, lambda) in [0.0, 1.0].into_iter().enumerate() {
            let params = EntropyParams::new(lambda, h, spec.dim).unwrap();
            let model = EntropyModel::new(&inst.graph, &inst.embeddings, params).map_err(|e| e.to_string())?;
            let cfg = SolverConfig { exact_threshold: 12, seed };
            let (tree, _) = build_encoding_tree(&model, 3, &cfg).map_err(|e| e.to_string())?;
            ari[slot] = adjusted_rand_index(&level_labels(&tree, 1, spec.n), &inst.blocks);
        }
        println!("  seed {seed:2}: ARI lambda=0 {:.4}  lambda=1 {:.4}", ari[0], ari[1]);
        per_seed.push(ari);
    }
    let mean = |i: usize| per_seed.iter().map(|a| a[i]).sum::<f64>() / per_seed.len() as f64;
    let (s, j) = (mean(0), mean(1));
    let msg = format!("mean level-1 ARI: structural-only {s:.4}, joint {j:.4}");
    if j >= s {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_context_reduction() -> Outcome {
    let spec = PlantedSpec {
        blocks: 20,
        p_in: 0.1,
        p_out: 0.001,
        ..PlantedSpec::new(PlantedKind::Sbm, 1000, 8, SemanticLayout::Aligned)
    };
    let inst = gen_planted(&spec)?;
    let cfg = BuildConfig {
        levels: 3,
        k: 6,
        ..BuildConfig::default()
    };
    let (bundle, _) = build_bundle(&cfg, inst.graph.clone()).map_err(|e| e.to_string())?;
    let embedder = bundle
        .manifest
        .embedder
        .instantiate(&HttpSettings::default())
        .map_err(|e| e.to_string())?;
    let retriever = Retriever::new(&bundle.graph, &bundle.tree, &bundle.index);
    let qa = parse_qa_jsonl(&planted_questions(&bundle.graph, 50, 8)).map_err(|e| e.to_string())?;
    let full = retriever.full_graph_tokens() as f64;
    let mut under = 0;
    let mut ratios = Vec::new();
    for item in &qa {
        let r = retriever.retrieve(&item.q, embedder.as_ref(), 6).map_err(|e| e.to_string())?;
        let ratio = r.tokens.context as f64 / full;
        ratios.push(ratio);
        if ratio < 0.5 {
            under += 1;
        }
    }
    let share = under as f64 / qa.len() as f64;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let msg = format!(
        "{under}/{} queries under 50% of {} full-graph tokens; mean ratio {mean:.4}",
        qa.len(),
        full
    );
    if qa.len() == 50 && share >= 0.9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(e.path()).unwrap();
            if name == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("created_unix");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect();
    out.sort();
    out
}

fn generated_build_config(tmp: &Path, out: &str) -> Result<BuildConfig, String> {
    let spec = PlantedSpec::new(PlantedKind::Sbm, 300, 9, SemanticLayout::Aligned);
    let inst = gen_planted(&spec)?;
    let graph = tmp.join("graph.jsonl");
    let node_emb = tmp.join("nodes.bin");
    std::fs::write(&graph, inst.graph.to_jsonl()).map_err(|e| e.to_string())?;
    std::fs::write(&node_emb, encode_embeddings(&inst.embeddings)).map_err(|e| e.to_string())?;
    Ok(BuildConfig {
        graph: Some(graph),
        out: Some(tmp.join(out)),
        node_embeddings: Some(node_emb),
        bandwidth: Bandwidth::Auto,
        ann: true,
        ..BuildConfig::default()
    })
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = generated_build_config(tmp.path(), "a")?;
    let b = BuildConfig {
        out: Some(tmp.path().join("b")),
        ..a.clone()
    };
    cmd_build(&a).map_err(|e| e.to_string())?;
    // Second build on a single thread, so scheduling differences would show.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| cmd_build(&b)).map_err(|e| e.to_string())?;
    let (fa, fb) = (dir_files(&tmp.path().join("a")), dir_files(&tmp.path().join("b")));
    if fa.len() != 6 {
        return Err(format!("expected 6 index files, found {}", fa.len()));
    }
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        if na != nb || ba != bb {
            return Err(format!("{na} differs between builds"));
        }
    }
    Ok(format!("{} files byte-identical across 2 builds (multi-thread vs 1 thread)", fa.len()))
}

fn expect_store_error(dir: &Path, want: fn(&StoreError) -> bool, what: &str) -> Result<(), String> {
    match load_index(dir) {
        Err(Error::Store(e)) if want(&e) => Ok(()),
        Err(e) => Err(format!("{what}: wrong error `{e}`")),
        Ok(_) => Err(format!("{what}: load succeeded")),
    }
}

fn c10_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = generated_build_config(tmp.path(), "idx")?;
    let (g, _) = tret_core::graph::load_graph(cfg.graph.as_ref().unwrap()).map_err(|e| e.to_string())?;
    let (mut bundle, _) = build_bundle(&cfg, g).map_err(|e| e.to_string())?;
    let dir = tmp.path().join("idx");
    bundle.manifest = save_index(&bundle, &dir).map_err(|e| e.to_string())?;
    let loaded = load_index(&dir).map_err(|e| e.to_string())?;
    if loaded != bundle {
        return Err("loaded bundle differs from the saved one".into());
    }

    let fresh = |name: &str| -> Result<std::path::PathBuf, String> {
        let d = tmp.path().join(name);
        save_index(&bundle, &d).map_err(|e| e.to_string())?;
        Ok(d)
    };
    let edit = |path: std::path::PathBuf, f: &dyn Fn(&mut Vec<u8>)| {
        let mut bytes = std::fs::read(&path).unwrap();
        f(&mut bytes);
        std::fs::write(&path, bytes).unwrap();
    };
    let manifest_edit = |dir: &Path, key: &str, value: serde_json::Value| {
        edit(dir.join("manifest.json"), &|b: &mut Vec<u8>| {
            let mut v: serde_json::Value = serde_json::from_slice(b).unwrap();
            v[key] = value.clone();
            *b = serde_json::to_vec(&v).unwrap();
        });
    };

    let d = fresh("magic")?;
    edit(d.join("embeddings.bin"), &|b: &mut Vec<u8>| b[0] = b'X');
    expect_store_error(&d, |e| matches!(e, StoreError::BadMagic), "bad magic")?;

    let d = fresh("truncated")?;
    edit(d.join("embeddings.bin"), &|b: &mut Vec<u8>| b.truncate(b.len() - 3));
    expect_store_error(&d, |e| matches!(e, StoreError::Truncated { .. }), "truncated")?;

    let d = fresh("dim")?;
    manifest_edit(&d, "dim", serde_json::json!(bundle.manifest.dim + 1));
    expect_store_error(&d, |e| matches!(e, StoreError::DimensionMismatch { .. }), "dimension")?;

    let d = fresh("checksum")?;
    edit(d.join("summaries.jsonl"), &|b: &mut Vec<u8>| {
        let i = b.iter().position(|&c| c == b':').unwrap();
        b[i] = b';';
    });
    expect_store_error(&d, |e| matches!(e, StoreError::Checksum(f) if f == "summaries.jsonl"), "checksum")?;

    let d = fresh("version")?;
    manifest_edit(&d, "format_version", serde_json::json!(99));
    expect_store_error(
        &d,
        |e| matches!(e, StoreError::VersionMismatch { found: 99, .. }),
        "version",
    )?;

    let d = fresh("missing")?;
    std::fs::remove_file(d.join("tree.json")).unwrap();
    expect_store_error(&d, |e| matches!(e, StoreError::Missing(f) if f == "tree.json"), "missing")?;

    Ok("identity on all fields; bad magic, truncation, dimension, checksum, version and missing-file errors fire".into())
}

fn main() {
    let suite_start = Instant::now();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("entropy oracle equivalence", c1_entropy_oracle),
        ("exact partitioning", c2_exact_partition),
        ("regulate preserves entropy", c3_regulate),
        ("prune consistency", c4_prune),
        ("tree validity", c5_tree_validity),
        ("catalytic effect", c6_catalytic),
        ("ablation direction", c7_ablation),
        ("context reduction direction", c8_context_reduction),
        ("determinism", c9_determinism),
        ("round-trip", c10_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {}: {name}: {msg} [{secs:.2}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {msg} [{secs:.2}s]", i + 1)
            }
        }
    }
    let total = suite_start.elapsed();
    if total > Duration::from_secs(600) {
        failed += 1;
        println!("FAIL suite runtime {:.1}s exceeds 600s", total.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed in {:.1}s", 10 - failed.min(10), total.as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
