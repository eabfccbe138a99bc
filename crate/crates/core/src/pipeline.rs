//! End-to-end commands: build, query, eval, entropy and gen.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Bandwidth, BuildConfig};
use crate::embedding::{decode_embeddings, encode_embeddings, EmbeddingMatrix};
use crate::entropy::{select_bandwidth_capped, EntropyModel, EntropyParams, DEFAULT_BANDWIDTH_GRID};
use crate::error::{Error, Result};
use crate::graph::{load_graph, TextualAttributedGraph};
use crate::index::{build_index, embed_tree, summarize_tree, AnnParams};
use crate::providers::{embed_batched, ChatModel, EmbedderSpec, HttpChat, HttpClient, HttpSettings};
use crate::retriever::{answer_query, result_json, Answer, RetrievalResult, Retriever};
use crate::store::{
    load_index, save_index, BuildParams, Counts, EntropyTotals, IndexBundle, Manifest, MANIFEST_FILE,
    MANIFEST_VERSION,
};
use crate::testkit::{gen_planted, oracle_total_entropy, PlantedSpec};
use crate::tree::{build_encoding_tree, EncodingTree};

#[derive(Debug, Clone, Serialize)]
pub struct StageTimes {
    pub embedding_s: f64,
    pub partitioning_s: f64,
    pub indexing_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeStats {
    pub nodes: usize,
    pub height: usize,
    /// Tree nodes per depth, root first.
    pub level_sizes: Vec<usize>,
    pub pass_through: usize,
    pub binary_height: usize,
    pub binary_nodes: usize,
    pub prunes: usize,
    pub regulated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub out: PathBuf,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub duplicate_edges: usize,
    pub bandwidth: f64,
    pub entropy: EntropyTotals,
    pub tree: TreeStats,
    pub ann: Option<AnnParams>,
    pub stages: StageTimes,
}

fn node_embeddings(cfg: &BuildConfig, g: &TextualAttributedGraph) -> Result<EmbeddingMatrix> {
    if let Some(path) = &cfg.node_embeddings {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m = decode_embeddings(&bytes)?;
        if m.len() != g.node_count() {
            return Err(Error::Data(format!(
                "{}: {} rows for {} graph nodes",
                path.display(),
                m.len(),
                g.node_count()
            )));
        }
        return Ok(m);
    }
    let embedder = cfg.embedder_spec().instantiate(&cfg.http_settings())?;
    let texts: Vec<&str> = g.nodes().iter().map(|n| n.text.as_str()).collect();
    Ok(embed_batched(embedder.as_ref(), &texts)?)
}

fn resolve_bandwidth(cfg: &BuildConfig, emb: &EmbeddingMatrix) -> Result<f64> {
    Ok(match cfg.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Auto => select_bandwidth_capped(emb, &DEFAULT_BANDWIDTH_GRID, Some(cfg.subsample_cap), cfg.seed)?,
    })
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Builds the full index bundle in memory.
pub fn build_bundle(cfg: &BuildConfig, g: TextualAttributedGraph) -> Result<(IndexBundle, BuildReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let emb_spec = cfg.embedder_spec();
    let sum_spec = cfg.summarizer_spec();
    let http = cfg.http_settings();

    let node_emb = node_embeddings(cfg, &g).map_err(|e| e.at_stage("embedding"))?;
    let bandwidth = resolve_bandwidth(cfg, &node_emb).map_err(|e| e.at_stage("embedding"))?;
    let embedding_s = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let params = cfg.entropy_params(bandwidth, node_emb.dim());
    let model = EntropyModel::new(&g, &node_emb, params).map_err(|e| Error::from(e).at_stage("partitioning"))?;
    let (tree, stats) =
        build_encoding_tree(&model, cfg.levels, &cfg.solver()).map_err(|e| Error::from(e).at_stage("partitioning"))?;
    let te = model.tree_entropy(&tree);
    let partitioning_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let indexing = || -> Result<_> {
        let summarizer = sum_spec.instantiate(&http)?;
        let summaries = summarize_tree(&tree, &g, summarizer.as_ref())?;
        let embedder = emb_spec.instantiate(&http)?;
        let rows = embed_tree(&summaries, embedder.as_ref())?;
        let mut index = build_index(&tree, &summaries, rows)?;
        let ann = if cfg.ann { Some(index.enable_ann(cfg.seed)?) } else { None };
        Ok((summaries, index, ann, embedder.id(), summarizer.id()))
    };
    let (summaries, index, ann, embedder_id, summarizer_id) = indexing().map_err(|e| e.at_stage("indexing"))?;
    let indexing_s = t.elapsed().as_secs_f64();

    let entropy = EntropyTotals {
        structural: te.structural,
        semantic: te.semantic,
        total: te.total,
    };
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: now_unix(),
        build: BuildParams {
            levels: cfg.levels,
            lambda: cfg.lambda,
            bandwidth,
            bandwidth_auto: cfg.bandwidth == Bandwidth::Auto,
            seed: cfg.seed,
            exact_threshold: cfg.exact_threshold,
            subsample_cap: cfg.subsample_cap,
        },
        embedder: emb_spec,
        embedder_id,
        summarizer: sum_spec,
        summarizer_id,
        dim: index.dim(),
        node_dim: node_emb.dim(),
        counts: Counts {
            graph_nodes: g.node_count(),
            graph_edges: g.edge_count(),
            tree_nodes: tree.len(),
        },
        ann,
        entropy,
        files: Default::default(),
    };
    let report = BuildReport {
        out: cfg.out.clone().unwrap_or_default(),
        graph_nodes: g.node_count(),
        graph_edges: g.edge_count(),
        duplicate_edges: 0,
        bandwidth,
        entropy,
        tree: TreeStats {
            nodes: tree.len(),
            height: tree.height(),
            level_sizes: (0..=tree.height()).map(|d| tree.level(d).len()).collect(),
            pass_through: tree.node_ids().into_iter().filter(|&id| tree.is_pass_through(id)).count(),
            binary_height: stats.binary_height,
            binary_nodes: stats.binary_nodes,
            prunes: stats.prunes,
            regulated: stats.regulated,
        },
        ann,
        stages: StageTimes {
            embedding_s,
            partitioning_s,
            indexing_s,
            total_s: start.elapsed().as_secs_f64(),
        },
    };
    let bundle = IndexBundle {
        manifest,
        graph: g,
        tree,
        summaries,
        index,
        node_embeddings: node_emb,
    };
    Ok((bundle, report))
}

/// Removes a directory on drop unless disarmed.
struct Cleanup(Option<PathBuf>);

impl Drop for Cleanup {
    fn drop(&mut self) {
        if let Some(p) = self.0.take() {
            let _ = std::fs::remove_dir_all(p);
        }
    }
}

fn replace_dir(tmp: &Path, out: &Path) -> Result<()> {
    if out.exists() {
        let is_index = out.join(MANIFEST_FILE).is_file();
        let empty = out.read_dir().map(|mut d| d.next().is_none()).unwrap_or(false);
        if !is_index && !empty {
            return Err(Error::Usage(format!(
                "output directory {} exists and is not an index; refusing to overwrite",
                out.display()
            )));
        }
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    std::fs::rename(tmp, out).map_err(|e| Error::io(out, e))
}

/// Loads the graph, builds the index and writes it to `cfg.out`. Output is
/// staged in a sibling directory and moved into place only on success.
pub fn cmd_build(cfg: &BuildConfig) -> Result<BuildReport> {
    cfg.validate()?;
    let graph_path = cfg.graph.as_ref().ok_or_else(|| Error::Usage("no graph given".into()))?;
    let out = cfg.out.as_ref().ok_or_else(|| Error::Usage("no output directory given".into()))?;
    let (g, load) = load_graph(graph_path).map_err(|e| Error::from(e).at_stage("ingest"))?;
    let (bundle, mut report) = build_bundle(cfg, g)?;
    report.duplicate_edges = load.duplicate_edges;

    let name = out
        .file_name()
        .ok_or_else(|| Error::Usage(format!("invalid output path {}", out.display())))?;
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    let mut guard = Cleanup(Some(tmp.clone()));
    save_index(&bundle, &tmp).map_err(|e| e.at_stage("write"))?;
    replace_dir(&tmp, out).map_err(|e| e.at_stage("write"))?;
    guard.0 = None;
    Ok(report)
}

/// Provider settings used at query time.
#[derive(Debug, Clone, Default)]
pub struct QueryOptions {
    pub k: usize,
    /// When set, must equal the embedder recorded in the manifest.
    pub embedder: Option<EmbedderSpec>,
    pub answer: bool,
    pub http: HttpSettings,
    pub chat_model: Option<String>,
}

#[derive(Debug)]
pub struct QueryOutput {
    pub result: RetrievalResult,
    pub answer: Option<Answer>,
}

impl QueryOutput {
    pub fn to_json(&self) -> serde_json::Value {
        result_json(&self.result, self.answer.as_ref())
    }
}

fn chat_model(opts: &QueryOptions) -> Result<Box<dyn ChatModel>> {
    let model = opts
        .chat_model
        .clone()
        .ok_or_else(|| Error::Usage("--answer needs a chat model (TRET_CHAT_MODEL or chat_model)".into()))?;
    Ok(Box::new(HttpChat::new(HttpClient::new(opts.http.clone())?, model)))
}

/// An index opened for querying.
pub struct QuerySession {
    pub bundle: IndexBundle,
    embedder: Box<dyn crate::providers::Embedder>,
    chat: Option<Box<dyn ChatModel>>,
}

impl QuerySession {
    pub fn open(dir: &Path, opts: &QueryOptions) -> Result<Self> {
        let bundle = load_index(dir)?;
        if let Some(spec) = &opts.embedder {
            bundle.manifest.check_embedder(spec)?;
        }
        let embedder = bundle.manifest.embedder.instantiate(&opts.http)?;
        let chat = if opts.answer { Some(chat_model(opts)?) } else { None };
        Ok(Self { bundle, embedder, chat })
    }

    pub fn retriever(&self) -> Retriever<'_> {
        Retriever::new(&self.bundle.graph, &self.bundle.tree, &self.bundle.index)
    }

    pub fn query(&self, retriever: &Retriever<'_>, q: &str, k: usize) -> Result<QueryOutput> {
        if k == 0 {
            return Err(Error::Usage("k must be >= 1".into()));
        }
        let result = retriever.retrieve(q, self.embedder.as_ref(), k)?;
        let answer = match &self.chat {
            Some(c) => Some(answer_query(q, &result, Some(c.as_ref()))?),
            None => None,
        };
        Ok(QueryOutput { result, answer })
    }
}

pub fn cmd_query(dir: &Path, q: &str, opts: &QueryOptions) -> Result<QueryOutput> {
    if opts.k == 0 {
        return Err(Error::Usage("k must be >= 1".into()));
    }
    let session = QuerySession::open(dir, opts)?;
    let r = session.retriever();
    session.query(&r, q, opts.k)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaItem {
    pub q: String,
    pub answers: Vec<String>,
}

pub fn parse_qa_jsonl(text: &str) -> Result<Vec<QaItem>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem = serde_json::from_str(line).map_err(|e| Error::Data(format!("qa line {}: {e}", i + 1)))?;
        if item.answers.is_empty() {
            return Err(Error::Data(format!("qa line {}: no answers", i + 1)));
        }
        out.push(item);
    }
    if out.is_empty() {
        return Err(Error::Data("qa file has no questions".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Case-insensitive substring of the retrieved context.
    #[default]
    Contains,
    /// Exact equality with a retrieved node text.
    Strict,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub q: String,
    pub retrieval_correct: bool,
    pub answer_correct: Option<bool>,
    pub context_tokens: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub queries: usize,
    pub k: usize,
    pub mode: MatchMode,
    pub retrieval_accuracy: f64,
    pub answer_accuracy: Option<f64>,
    pub full_graph_tokens: usize,
    pub mean_context_tokens: f64,
    /// Mean of context/full-graph token ratios.
    pub mean_ratio: f64,
    /// 1 − mean_ratio.
    pub mean_reduction: f64,
    pub per_query: Vec<EvalRow>,
}

fn retrieval_match(mode: MatchMode, result: &RetrievalResult, answers: &[String]) -> bool {
    match mode {
        MatchMode::Contains => {
            let ctx = result.textualization.to_lowercase();
            answers.iter().any(|a| ctx.contains(&a.to_lowercase()))
        }
        MatchMode::Strict => answers
            .iter()
            .any(|a| result.subgraph.nodes().iter().any(|n| n.text == a.trim())),
    }
}

fn answer_match(mode: MatchMode, text: &str, answers: &[String]) -> bool {
    match mode {
        MatchMode::Contains => {
            let t = text.to_lowercase();
            answers.iter().any(|a| t.contains(&a.to_lowercase()))
        }
        MatchMode::Strict => answers.iter().any(|a| a.trim() == text.trim()),
    }
}

pub fn cmd_eval(dir: &Path, qa_path: &Path, mode: MatchMode, opts: &QueryOptions) -> Result<EvalReport> {
    if opts.k == 0 {
        return Err(Error::Usage("k must be >= 1".into()));
    }
    let text = std::fs::read_to_string(qa_path).map_err(|e| Error::io(qa_path, e))?;
    let items = parse_qa_jsonl(&text)?;
    let session = QuerySession::open(dir, opts)?;
    let retriever = session.retriever();
    let full = retriever.full_graph_tokens();
    let mut rows = Vec::with_capacity(items.len());
    for item in &items {
        let out = session.query(&retriever, &item.q, opts.k)?;
        let ctx = out.result.tokens.context;
        rows.push(EvalRow {
            q: item.q.clone(),
            retrieval_correct: retrieval_match(mode, &out.result, &item.answers),
            answer_correct: out.answer.as_ref().map(|a| answer_match(mode, &a.text, &item.answers)),
            context_tokens: ctx,
            ratio: if full == 0 { 1.0 } else { ctx as f64 / full as f64 },
        });
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean_ratio = mean(&|r| r.ratio);
    Ok(EvalReport {
        queries: rows.len(),
        k: opts.k,
        mode,
        retrieval_accuracy: mean(&|r| r.retrieval_correct as u8 as f64),
        answer_accuracy: if opts.answer {
            Some(mean(&|r| r.answer_correct.unwrap_or(false) as u8 as f64))
        } else {
            None
        },
        full_graph_tokens: full,
        mean_context_tokens: mean(&|r| r.context_tokens as f64),
        mean_ratio,
        mean_reduction: 1.0 - mean_ratio,
        per_query: rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub lambda: f64,
    pub bandwidth: f64,
    pub structural: f64,
    pub semantic: f64,
    pub total: f64,
    /// Sum of per-node terms at each depth 1..=height.
    pub per_level: Vec<f64>,
    pub oracle_total: Option<f64>,
}

/// S² entropy of the tree stored in an index, optionally with other λ or
/// bandwidth, and optionally cross-checked against the naive oracle.
pub fn cmd_entropy(dir: &Path, lambda: Option<f64>, bandwidth: Option<f64>, oracle: bool) -> Result<EntropyReport> {
    let bundle = load_index(dir)?;
    let b = &bundle.manifest.build;
    let params = EntropyParams {
        lambda: lambda.unwrap_or(b.lambda),
        bandwidth: bandwidth.unwrap_or(b.bandwidth),
        dim: bundle.node_embeddings.dim(),
        subsample_cap: Some(b.subsample_cap),
        sample_seed: b.seed,
    };
    entropy_report(&bundle.tree, &bundle.graph, &bundle.node_embeddings, params, oracle)
}

pub fn entropy_report(
    tree: &EncodingTree,
    g: &TextualAttributedGraph,
    emb: &EmbeddingMatrix,
    params: EntropyParams,
    oracle: bool,
) -> Result<EntropyReport> {
    let model = EntropyModel::new(g, emb, params)?;
    let te = model.tree_entropy(tree);
    let mut per_level = vec![0.0; tree.height()];
    for id in tree.node_ids() {
        let n = tree.node(id);
        if let Some(p) = n.parent {
            let p = tree.node(p);
            per_level[n.depth - 1] += model.term(&n.members, n.cut, n.volume, p.len(), p.volume);
        }
    }
    let oracle_total = if oracle {
        Some(oracle_total_entropy(tree, g, emb, &params.exact())?)
    } else {
        None
    };
    Ok(EntropyReport {
        lambda: params.lambda,
        bandwidth: params.bandwidth,
        structural: te.structural,
        semantic: te.semantic,
        total: te.total,
        per_level,
        oracle_total,
    })
}

pub const GEN_GRAPH_FILE: &str = "graph.jsonl";
pub const GEN_EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const GEN_LABELS_FILE: &str = "labels.json";
pub const GEN_QA_FILE: &str = "qa.jsonl";

/// Questions asking for a node by the descriptive words of its text.
pub fn planted_questions(g: &TextualAttributedGraph, count: usize, seed: u64) -> String {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, g.node_count(), count.min(g.node_count())).into_vec();
    picks.sort_unstable();
    let mut out = String::new();
    for v in picks {
        let text = &g.node(v).text;
        let mut words = text.split_whitespace();
        let name = words.next().unwrap_or_default();
        let rest: Vec<&str> = words.collect();
        let line = serde_json::json!({
            "q": format!("which entity is described by {}", rest.join(" ")),
            "answers": [name],
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct GenReport {
    pub out: PathBuf,
    pub nodes: usize,
    pub edges: usize,
    pub questions: usize,
}

/// Writes `graph.jsonl`, `embeddings.bin`, `labels.json` and `qa.jsonl`.
pub fn cmd_gen(spec: &PlantedSpec, out: &Path, questions: usize) -> Result<GenReport> {
    let inst = gen_planted(spec).map_err(Error::Usage)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = out.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(GEN_GRAPH_FILE, inst.graph.to_jsonl().as_bytes())?;
    write(GEN_EMBEDDINGS_FILE, &encode_embeddings(&inst.embeddings))?;
    write(GEN_LABELS_FILE, inst.labels_json().as_bytes())?;
    let qa = planted_questions(&inst.graph, questions, spec.seed);
    write(GEN_QA_FILE, qa.as_bytes())?;
    Ok(GenReport {
        out: out.to_path_buf(),
        nodes: inst.graph.node_count(),
        edges: inst.graph.edge_count(),
        questions: qa.lines().count(),
    })
}
