//! `forge` command line.

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Once;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::analysis::{
    class_breakdown, precision_curve, scaling_curve, similarity_histogram, threshold_sweep, top_similarities, PairLabel,
    SWEEP_HI, SWEEP_LO, SWEEP_STEP,
};
use forge_core::dataset::Task;
use forge_core::graph::{build_graph, degree_stats, GraphParams, DEFAULT_BAND_HI, DEFAULT_BAND_LO, DEFAULT_K_MAX};
use forge_core::knn::{recall_eval, Query, DEFAULT_SEARCH_K};
use forge_core::label::{SampleSpec, DEFAULT_RANGE_HI, DEFAULT_RANGE_LO, DEFAULT_SAMPLE_SIZE};
use forge_core::{Index, IndexConfig, SimilarityBand};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::emit::{emit_dataset, EmitOptions};
use crate::error::{ForgeError, Result};
use crate::evalio::{agreement_report, identity_report, load_benchmark, run_benchmark, EmbeddingSet, IdentityPair, TripletLine};
use crate::fixture::{write_fixture, FixtureSpec};
use crate::pipeline::{self, PipelineConfig};
use crate::service::{self, CropSource, Service};
use crate::store::Corpus;
use crate::{fsutil, graphio};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Mine object recurrences from detection corpora and build composition datasets")]
pub struct Cli {
    /// Output location. A directory for build commands, a report file for `analyze` and `eval`
    /// (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FORGE_THREADS")]
    pub threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, query and evaluate nearest-neighbor indexes.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Build the recurrence graph.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Recurrence analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Emit training examples.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Identity metrics and the insertion benchmark.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Threshold-calibration labeling service.
    #[command(subcommand)]
    Label(LabelCmd),
    /// Run index, graph, stats and dataset emission with stage caching.
    #[command(visible_alias = "pipeline_all", visible_alias = "pipeline-all")]
    Pipeline(PipelineArgs),
    /// Write a synthetic corpus with planted recurrences.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Partitioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Insertion,
    #[value(alias = "subject_gen", alias = "subject-gen")]
    Subject,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Insertion => Task::Insertion,
            TaskArg::Subject => Task::SubjectGen,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArg {
    /// Corpus manifest (manifest.json).
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct IndexArgs {
    #[arg(long, value_enum, default_value = "partitioned")]
    pub mode: ModeArg,
    /// Partition count (default ⌈√N⌉).
    #[arg(long)]
    pub partitions: Option<usize>,
    /// Partitions scanned per query (default ⌈√partitions⌉).
    #[arg(long)]
    pub probes: Option<usize>,
    /// Candidates fetched per object before filtering.
    #[arg(long, default_value_t = DEFAULT_SEARCH_K)]
    pub search_k: usize,
}

impl IndexArgs {
    fn config(&self, seed: u64) -> IndexConfig {
        let base = match self.mode {
            ModeArg::Exact => IndexConfig::exact(),
            ModeArg::Partitioned => IndexConfig::partitioned(),
        };
        IndexConfig {
            num_partitions: self.partitions,
            probes: self.probes,
            ..base.with_seed(seed).with_search_k(self.search_k)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BandArgs {
    /// Lower similarity bound (inclusive).
    #[arg(long, default_value_t = DEFAULT_BAND_LO)]
    pub lo: f32,
    /// Upper similarity bound (inclusive).
    #[arg(long, default_value_t = DEFAULT_BAND_HI)]
    pub hi: f32,
    /// Neighbors retained per object.
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    pub kmax: usize,
}

impl BandArgs {
    fn params(&self, search_k: usize) -> Result<GraphParams> {
        Ok(GraphParams {
            band: SimilarityBand::new(self.lo, self.hi)?,
            k_max: self.kmax,
            search_k,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    /// Build an index and write it to <out>/index.omix.
    Build {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        index: IndexArgs,
    },
    /// Nearest neighbors of one object.
    Query {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Index file; an exact index is used when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Object id to query.
        #[arg(long)]
        id: u64,
        #[arg(short, long, default_value_t = DEFAULT_SEARCH_K)]
        k: usize,
        #[arg(long)]
        probes: Option<usize>,
    },
    /// Recall@k of an index against exact search.
    Recall {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        index: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
        /// Number of sampled query objects (all when omitted).
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        probes: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GraphCmd {
    /// Write <out>/neighbors.jsonl.
    Build {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Prebuilt index; built in memory when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        #[command(flatten)]
        index_args: IndexArgs,
        #[command(flatten)]
        band: BandArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Precision against similarity threshold from labeled pairs.
    Precision {
        /// Labeled pairs (JSONL of {a, b, sim, match, source}).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = SWEEP_LO)]
        lo: f64,
        #[arg(long, default_value_t = SWEEP_HI)]
        hi: f64,
        #[arg(long, default_value_t = SWEEP_STEP)]
        step: f64,
        /// Also write a CSV next to the report.
        #[arg(long)]
        csv: bool,
    },
    /// Histogram of each object's top-k similarities before band filtering.
    Hist {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        index: IndexArgs,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_BAND_LO)]
        lo: f32,
        #[arg(long, default_value_t = DEFAULT_BAND_HI)]
        hi: f32,
        #[arg(long)]
        csv: bool,
    },
    /// Recurrence rate on random subsets of the corpus.
    Scaling {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        index: IndexArgs,
        #[command(flatten)]
        band: BandArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.125,0.25,0.5,1.0")]
        fractions: Vec<f64>,
        #[arg(long)]
        csv: bool,
    },
    /// Per-class share of objects with at least three neighbors.
    Breakdown {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Objects with at least one and at least three retained neighbors.
    Stats {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Write examples.jsonl, grids and the training manifest into <out>.
    Emit {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        graph: PathBuf,
        /// Background sidecars, <id>.png (default: backgrounds/ beside the manifest).
        #[arg(long)]
        backgrounds: Option<PathBuf>,
        /// Caption sidecars, <id>.txt (default: captions/ beside the manifest).
        #[arg(long)]
        captions: Option<PathBuf>,
        /// Skip grid composition.
        #[arg(long)]
        no_grids: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Identity similarity of generated/reference pairs.
    Identity {
        /// OMFV embeddings with a sibling .ids file.
        #[arg(long)]
        embeddings: PathBuf,
        /// JSONL of {generated, reference} ids.
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Agreement of one or more metrics with user preferences.
    Agreement {
        /// Repeat to compare metrics side by side.
        #[arg(long, required = true)]
        embeddings: Vec<PathBuf>,
        #[arg(long)]
        triplets: PathBuf,
    },
    /// Composition and identity scores on the quadruplet benchmark.
    Benchmark {
        #[arg(long)]
        benchmark: PathBuf,
        /// Semantic embeddings of outputs and ground truths.
        #[arg(long = "embeddings")]
        semantic: PathBuf,
        /// Identity embeddings of object crops.
        #[arg(long)]
        identity: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum LabelCmd {
    /// Serve the labeling UI and API on localhost.
    Serve {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long, default_value_t = service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value = "default")]
        session: String,
        /// Label log (default <out>/labels.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Pairs to sample.
        #[arg(short, long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_RANGE_LO)]
        lo: f32,
        #[arg(long, default_value_t = DEFAULT_RANGE_HI)]
        hi: f32,
        /// Serve UI assets from this directory instead of the built-in page.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    #[arg(long, value_enum, default_value = "insertion")]
    pub task: TaskArg,
    #[command(flatten)]
    pub index: IndexArgs,
    #[command(flatten)]
    pub band: BandArgs,
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub no_grids: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 60)]
    pub groups: usize,
    #[arg(long, default_value_t = 40)]
    pub singletons: usize,
    #[arg(long, default_value_t = 10)]
    pub low_confidence: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.75)]
    pub in_band_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub missing_sidecars: usize,
}

struct Ctx {
    out: Option<PathBuf>,
    seed: u64,
}

impl Ctx {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Writes `value` as JSON to `--out`, or to stdout.
    fn report<T: Serialize>(&self, value: &T) -> Result<()> {
        match &self.out {
            Some(p) => fsutil::write_json(p, value),
            None => print_json(value),
        }
    }

    fn csv<T: Serialize>(&self, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let Some(out) = &self.out else {
            return Err(ForgeError::validation("--csv needs --out"));
        };
        let path = out.with_extension("csv");
        fsutil::write_atomic(&path, |w| {
            let mut c = csv::Writer::from_writer(w);
            for r in rows {
                c.serialize(r).map_err(|e| ForgeError::Internal(e.to_string()))?;
            }
            c.flush().map_err(|e| ForgeError::io(&path, e))
        })
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| ForgeError::Internal(e.to_string()))?;
    s.push('\n');
    std::io::stdout()
        .write_all(s.as_bytes())
        .map_err(|e| ForgeError::io("<stdout>", e))
}

fn row_of(corpus: &Corpus, id: u64) -> Result<usize> {
    corpus
        .records
        .binary_search_by_key(&id, |r| r.id)
        .map_err(|_| ForgeError::validation(format!("object {} not in corpus (or filtered out)", id)))
}

fn open_index<'m>(corpus: &'m Corpus, path: Option<&Path>, probes: Option<usize>, fallback: &IndexConfig) -> Result<Index<'m>> {
    match path {
        Some(p) => graphio::load_index(p, &corpus.matrix, probes),
        None => Ok(Index::build(&corpus.matrix, fallback)?),
    }
}

#[derive(Serialize)]
struct QueryHit {
    id: u64,
    sim: f32,
}

fn run_index(cmd: IndexCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        IndexCmd::Build { corpus, index } => {
            let c = Corpus::load(&corpus.corpus)?;
            let cfg = index.config(ctx.seed);
            let idx = Index::build(&c.matrix, &cfg)?;
            let path = ctx.out_dir().join(pipeline::INDEX_FILE);
            graphio::write_index(&path, &idx)?;
            log::info!("wrote {} ({:?}, {} rows)", path.display(), idx.mode(), idx.len());
            Ok(())
        }
        IndexCmd::Query { corpus, index, id, k, probes } => {
            let c = Corpus::load(&corpus.corpus)?;
            let idx = open_index(&c, index.as_deref(), probes, &IndexConfig::exact())?;
            let row = row_of(&c, id)?;
            let hits = idx.query(Query::Row(row), k)?;
            let out: Vec<QueryHit> = hits
                .neighbors
                .iter()
                .map(|n| QueryHit {
                    id: c.records[n.id].id,
                    sim: n.similarity,
                })
                .collect();
            ctx.report(&serde_json::json!({ "id": id, "nn": out }))
        }
        IndexCmd::Recall { corpus, index, k, queries, probes } => {
            let c = Corpus::load(&corpus.corpus)?;
            let approx = graphio::load_index(&index, &c.matrix, probes)?;
            let exact = Index::build(&c.matrix, &IndexConfig::exact())?;
            let n = c.records.len();
            let ids: Vec<usize> = match queries {
                Some(q) if q < n => {
                    let mut v = sample(&mut ChaCha8Rng::seed_from_u64(ctx.seed), n, q).into_vec();
                    v.sort_unstable();
                    v
                }
                _ => (0..n).collect(),
            };
            let recall = recall_eval(&approx, &exact, &ids, k)?;
            ctx.report(&serde_json::json!({
                "k": k,
                "queries": ids.len(),
                "probes": approx.probes(),
                "recall": recall,
                "seed": ctx.seed,
            }))
        }
    }
}

fn run_graph(cmd: GraphCmd, ctx: &Ctx) -> Result<()> {
    let GraphCmd::Build { corpus, index, index_args, band } = cmd;
    let c = Corpus::load(&corpus.corpus)?;
    let cfg = index_args.config(ctx.seed);
    let params = band.params(cfg.search_k)?;
    let idx = open_index(&c, index.as_deref(), index_args.probes, &cfg)?;
    let graph = build_graph(&idx, &c.records, &params)?;
    let path = ctx.out_dir().join(pipeline::GRAPH_FILE);
    graphio::write_graph(&path, &graph, &params, c.records.len())?;
    log::info!(
        "wrote {}: {} objects with neighbors, {} edges",
        path.display(),
        graph.node_count(),
        graph.edge_count()
    );
    Ok(())
}

#[derive(Serialize)]
struct HistRow {
    lo: f64,
    hi: f64,
    count: u64,
}

fn run_analyze(cmd: AnalyzeCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        AnalyzeCmd::Precision { labels, lo, hi, step, csv } => {
            let labels: Vec<PairLabel> = fsutil::read_jsonl(&labels)?;
            for l in &labels {
                l.validate()?;
            }
            let curve = precision_curve(&labels, &threshold_sweep(lo, hi, step)?)?;
            ctx.report(&curve)?;
            if csv {
                ctx.csv(curve.points.iter())?;
            }
            Ok(())
        }
        AnalyzeCmd::Hist { corpus, index, k, bins, lo, hi, csv } => {
            let c = Corpus::load(&corpus.corpus)?;
            let cfg = index.config(ctx.seed);
            let idx = Index::build(&c.matrix, &cfg)?;
            let per = top_similarities(&idx, &c.records, k, cfg.search_k)?;
            let hist = similarity_histogram(&per, bins, SimilarityBand::new(lo, hi)?)?;
            ctx.report(&hist)?;
            if csv {
                ctx.csv(hist.counts.iter().enumerate().map(|(i, &count)| HistRow {
                    lo: hist.edges[i],
                    hi: hist.edges[i + 1],
                    count,
                }))?;
            }
            Ok(())
        }
        AnalyzeCmd::Scaling { corpus, index, band, fractions, csv } => {
            let c = Corpus::load(&corpus.corpus)?;
            let cfg = index.config(ctx.seed);
            let params = band.params(cfg.search_k)?;
            let curve = scaling_curve(&c.matrix, &c.records, &fractions, ctx.seed, &params, &cfg)?;
            ctx.report(&curve)?;
            if csv {
                ctx.csv(curve.points.iter())?;
            }
            Ok(())
        }
        AnalyzeCmd::Breakdown { corpus, graph, csv } => {
            let c = Corpus::load(&corpus.corpus)?;
            let g = graphio::read_graph(&graph)?;
            let b = class_breakdown(&g, &c.records);
            ctx.report(&b)?;
            if csv {
                #[derive(Serialize)]
                struct Row<'a> {
                    class: &'a str,
                    num_objects: usize,
                    num_with_ge3: usize,
                    percentage: f64,
                }
                ctx.csv(b.iter().map(|(k, v)| Row {
                    class: k,
                    num_objects: v.num_objects,
                    num_with_ge3: v.num_with_ge3,
                    percentage: v.percentage,
                }))?;
            }
            Ok(())
        }
        AnalyzeCmd::Stats { corpus, graph, csv } => {
            let c = Corpus::load(&corpus.corpus)?;
            let g = graphio::read_graph(&graph)?;
            g.validate(&c.records)?;
            let s = degree_stats(&g, &c.records);
            ctx.report(&s)?;
            if csv {
                ctx.csv(std::iter::once(&s))?;
            }
            Ok(())
        }
    }
}

fn run_dataset(cmd: DatasetCmd, ctx: &Ctx) -> Result<()> {
    let DatasetCmd::Emit { corpus, task, graph, backgrounds, captions, no_grids } = cmd;
    let c = Corpus::load(&corpus.corpus)?;
    let g = graphio::read_graph(&graph)?;
    g.validate(&c.records)?;
    let report = emit_dataset(
        &c,
        &g,
        &EmitOptions {
            task: task.into(),
            out_dir: ctx.out_dir(),
            backgrounds_dir: backgrounds,
            captions_dir: captions,
            seed: ctx.seed,
            write_grids: !no_grids,
        },
    )?;
    print_json(&report)
}

fn run_eval(cmd: EvalCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        EvalCmd::Identity { embeddings, pairs } => {
            let set = EmbeddingSet::load(&embeddings)?;
            let pairs: Vec<IdentityPair> = fsutil::read_jsonl(&pairs)?;
            ctx.report(&identity_report(&set, &pairs)?)
        }
        EvalCmd::Agreement { embeddings, triplets } => {
            let sets = embeddings.iter().map(|p| EmbeddingSet::load(p)).collect::<Result<Vec<_>>>()?;
            let triplets: Vec<TripletLine> = fsutil::read_jsonl(&triplets)?;
            ctx.report(&agreement_report(&sets, &triplets)?)
        }
        EvalCmd::Benchmark { benchmark, semantic, identity } => {
            let samples = load_benchmark(&benchmark)?;
            let sem = EmbeddingSet::load(&semantic)?;
            let ir = EmbeddingSet::load(&identity)?;
            ctx.report(&run_benchmark(&samples, &sem, &ir)?)
        }
    }
}

fn run_label(cmd: LabelCmd, ctx: &Ctx) -> Result<()> {
    let LabelCmd::Serve { graph, corpus, port, host, session, log, n, lo, hi, static_dir } = cmd;
    let c = Corpus::load(&corpus.corpus)?;
    let g = graphio::read_graph(&graph)?;
    let log_path = log.unwrap_or_else(|| ctx.out_dir().join("labels.jsonl"));
    let spec = SampleSpec { n, seed: ctx.seed, lo, hi };
    let mut svc = Service::open(&log_path, &session, &g, spec)?.with_crops(CropSource::new(&c.root, &c.records));
    if let Some(d) = static_dir {
        svc = svc.with_static_dir(d);
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ForgeError::Internal(e.to_string()))?;
    rt.block_on(service::serve(svc, SocketAddr::new(host, port)))
}

fn run_pipeline(args: PipelineArgs, ctx: &Ctx) -> Result<()> {
    let index = args.index.config(ctx.seed);
    let params = args.band.params(index.search_k)?;
    let cfg = PipelineConfig {
        manifest: args.corpus.corpus,
        out: ctx.out_dir(),
        params,
        index,
        seed: ctx.seed,
        task: args.task.into(),
        backgrounds_dir: args.backgrounds,
        captions_dir: args.captions,
        write_grids: !args.no_grids,
    };
    let report = pipeline::run(&cfg)?;
    for s in &report.stages {
        eprintln!("{:<8} {}", s.stage, if s.status == pipeline::StageStatus::Ran { "ran" } else { "cached" });
    }
    print_json(&report)
}

fn run_fixture(args: FixtureArgs, ctx: &Ctx) -> Result<()> {
    let spec = FixtureSpec {
        groups: args.groups,
        singletons: args.singletons,
        low_confidence: args.low_confidence,
        dim: args.dim,
        in_band_fraction: args.in_band_fraction,
        missing_sidecars: args.missing_sidecars,
        seed: ctx.seed,
        ..FixtureSpec::default()
    };
    let f = write_fixture(&ctx.out_dir(), &spec)?;
    log::info!("wrote {} objects, manifest {}", f.records.len(), f.manifest_path.display());
    Ok(())
}

fn dispatch(cmd: Command, ctx: &Ctx) -> Result<()> {
    match cmd {
        Command::Index(c) => run_index(c, ctx),
        Command::Graph(c) => run_graph(c, ctx),
        Command::Analyze(c) => run_analyze(c, ctx),
        Command::Dataset(c) => run_dataset(c, ctx),
        Command::Eval(c) => run_eval(c, ctx),
        Command::Label(c) => run_label(c, ctx),
        Command::Pipeline(a) => run_pipeline(a, ctx),
        Command::Fixture(a) => run_fixture(a, ctx),
    }
}

fn init_logging(level: &str) -> Result<()> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| ForgeError::validation(format!("unknown log level {}", level)))?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .target(env_logger::Target::Stderr)
        .try_init();
    Ok(())
}

fn install_interrupt_handler() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        let _ = ctrlc::set_handler(|| {
            let n = crate::fsutil::remove_in_flight();
            eprintln!("interrupted; removed {} partial output file(s)", n);
            std::process::exit(130);
        });
    });
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 success, 1 invalid input, 2 I/O or corrupt file, 3 internal error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if let Err(e) = init_logging(&cli.log_level) {
        eprintln!("error: {}", e);
        return e.exit_code();
    }
    if !matches!(cli.command, Command::Label(_)) {
        install_interrupt_handler();
    }
    let ctx = Ctx {
        out: cli.out,
        seed: cli.seed,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}", e);
            return 3;
        }
    };
    let command = cli.command;
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| pool.install(|| dispatch(command, &ctx))));
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            log::error!("{}", e);
            eprintln!("error: {}", e);
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure");
            3
        }
    }
}
