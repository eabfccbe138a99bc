use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tret_core::config::BuildConfig;
use tret_core::pipeline::{cmd_build, cmd_entropy, cmd_eval, cmd_gen, cmd_query, MatchMode, QueryOptions};
use tret_core::testkit::{PlantedKind, PlantedSpec, SemanticLayout};
use tret_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "tret", version, about = "Encoding-tree index and retrieval over textual attributed graphs")]
struct Cli {
    /// Key-value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an index directory from graph.jsonl.
    Build(BuildArgs),
    /// Retrieve context for a question.
    Query(QueryArgs),
    /// Score retrieval against a qa.jsonl file.
    Eval(EvalArgs),
    /// Report the S2 entropy of an index's tree.
    Entropy(EntropyArgs),
    /// Generate a synthetic graph with planted structure.
    Gen(GenArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    node_embeddings: Option<PathBuf>,
    #[arg(long, short = 'L')]
    levels: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// A positive number or `auto`.
    #[arg(long)]
    bandwidth: Option<String>,
    /// `hash` or `http`.
    #[arg(long)]
    embedder: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    embed_seed: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    /// `extractive` or `http`.
    #[arg(long)]
    summarizer: Option<String>,
    #[arg(long)]
    summary_budget: Option<String>,
    #[arg(long)]
    chat_model: Option<String>,
    #[arg(long)]
    exact_threshold: Option<String>,
    #[arg(long)]
    subsample_cap: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Enable the approximate-nearest-neighbour layer.
    #[arg(long)]
    ann: bool,
}

#[derive(Args)]
struct QueryArgs {
    index: PathBuf,
    question: String,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    json: bool,
    /// Generate an answer with the chat provider.
    #[arg(long)]
    answer: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Contains,
    Strict,
}

#[derive(Args)]
struct EvalArgs {
    index: PathBuf,
    qa: PathBuf,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "contains")]
    mode: Mode,
    #[arg(long)]
    answer: bool,
}

#[derive(Args)]
struct EntropyArgs {
    index: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Cross-check against the brute-force oracle.
    #[arg(long)]
    oracle: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sbm,
    Path,
    Barbell,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Aligned,
    Misaligned,
    EndpointsIdentical,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "sbm")]
    kind: Kind,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value = "aligned")]
    layout: Layout,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Number of qa.jsonl questions to emit.
    #[arg(long, default_value_t = 50)]
    questions: usize,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<BuildConfig> {
    let mut cfg = BuildConfig::from_env();
    if let Some(p) = path {
        cfg.load_file(p)?;
    }
    Ok(cfg)
}

fn apply_build_flags(cfg: &mut BuildConfig, a: &BuildArgs) -> Result<()> {
    let paths = [("graph", &a.graph), ("out", &a.out), ("node_embeddings", &a.node_embeddings)];
    for (key, v) in paths {
        if let Some(p) = v {
            cfg.set(key, &p.to_string_lossy())?;
        }
    }
    let values = [
        ("levels", &a.levels),
        ("lambda", &a.lambda),
        ("bandwidth", &a.bandwidth),
        ("embedder", &a.embedder),
        ("embed_dim", &a.embed_dim),
        ("embed_seed", &a.embed_seed),
        ("embed_model", &a.embed_model),
        ("summarizer", &a.summarizer),
        ("summary_budget", &a.summary_budget),
        ("chat_model", &a.chat_model),
        ("exact_threshold", &a.exact_threshold),
        ("subsample_cap", &a.subsample_cap),
        ("seed", &a.seed),
    ];
    for (key, v) in values {
        if let Some(v) = v {
            cfg.set(key, v)?;
        }
    }
    if a.ann {
        cfg.ann = true;
    }
    Ok(())
}

fn query_options(cfg: &BuildConfig, k: Option<usize>, answer: bool) -> QueryOptions {
    QueryOptions {
        k: k.unwrap_or(cfg.k),
        embedder: None,
        answer,
        http: cfg.http_settings(),
        chat_model: cfg.chat_model.clone(),
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(Error::Usage("threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::Build(a) => {
            apply_build_flags(&mut cfg, &a)?;
            let report = cmd_build(&cfg)?;
            print_json(&report);
        }
        Cmd::Query(a) => {
            let opts = query_options(&cfg, a.k, a.answer);
            let out = cmd_query(&a.index, &a.question, &opts)?;
            if a.json {
                println!("{}", out.to_json());
            } else {
                println!("{}", out.result.textualization);
                if let Some(ans) = out.answer.as_ref().filter(|a| a.provider.is_some()) {
                    println!("\nanswer: {}", ans.text);
                }
            }
        }
        Cmd::Eval(a) => {
            let opts = query_options(&cfg, a.k, a.answer);
            let mode = match a.mode {
                Mode::Contains => MatchMode::Contains,
                Mode::Strict => MatchMode::Strict,
            };
            print_json(&cmd_eval(&a.index, &a.qa, mode, &opts)?);
        }
        Cmd::Entropy(a) => print_json(&cmd_entropy(&a.index, a.lambda, a.bandwidth, a.oracle)?),
        Cmd::Gen(a) => {
            let kind = match a.kind {
                Kind::Sbm => PlantedKind::Sbm,
                Kind::Path => PlantedKind::Path,
                Kind::Barbell => PlantedKind::Barbell,
            };
            let layout = match a.layout {
                Layout::Aligned => SemanticLayout::Aligned,
                Layout::Misaligned => SemanticLayout::Misaligned,
                Layout::EndpointsIdentical => SemanticLayout::EndpointsIdentical,
            };
            let mut spec = PlantedSpec::new(kind, a.n, a.seed, layout);
            spec.blocks = a.blocks.unwrap_or(spec.blocks);
            spec.p_in = a.p_in.unwrap_or(spec.p_in);
            spec.p_out = a.p_out.unwrap_or(spec.p_out);
            spec.dim = a.dim.unwrap_or(spec.dim);
            spec.noise = a.noise.unwrap_or(spec.noise);
            print_json(&cmd_gen(&spec, &a.out, a.questions)?);
        }
    }
    Ok(())
}

fn fail(kind: ErrorKind, msg: &str) -> ExitCode {
    let line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{}]: {line}", kind.as_str());
    ExitCode::from(kind.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return fail(ErrorKind::Usage, first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
