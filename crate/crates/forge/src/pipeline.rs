//! index → graph → stats → dataset, with content-hash stage caching.

use std::fs;
use std::path::{Path, PathBuf};

use forge_core::dataset::Task;
use forge_core::graph::{build_graph, degree_stats, GraphParams};
use forge_core::{Index, IndexConfig, RecurrenceStats};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emit::{self, EmitOptions, EmitReport};
use crate::error::{ForgeError, Result};
use crate::store::Corpus;
use crate::{fsutil, graphio};

pub const INDEX_FILE: &str = "index.omix";
pub const GRAPH_FILE: &str = "neighbors.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const REPORT_FILE: &str = "pipeline_report.json";
const CACHE_DIR: &str = ".cache";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub params: GraphParams,
    pub index: IndexConfig,
    pub seed: u64,
    pub task: Task,
    pub backgrounds_dir: Option<PathBuf>,
    pub captions_dir: Option<PathBuf>,
    pub write_grids: bool,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>, task: Task, seed: u64) -> Self {
        Self {
            manifest: manifest.into(),
            out: out.into(),
            params: GraphParams::default(),
            index: IndexConfig::partitioned().with_seed(seed),
            seed,
            task,
            backgrounds_dir: None,
            captions_dir: None,
            write_grids: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub stats: RecurrenceStats,
    pub dataset: EmitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    outputs: Vec<PathBuf>,
}

struct Hasher(Sha256);

impl Hasher {
    fn new(tag: &str) -> Self {
        let mut h = Sha256::new();
        h.update(tag.as_bytes());
        Self(h)
    }

    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    fn json<T: Serialize>(&mut self, v: &T) -> &mut Self {
        let s = serde_json::to_vec(v).expect("serializable stage parameters");
        self.bytes(&s)
    }

    fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let b = fsutil::read_bytes(path)?;
        Ok(self.bytes(path.to_string_lossy().as_bytes()).bytes(&b))
    }

    /// Every regular file directly inside `dir`, by name. A missing
    /// directory hashes as empty.
    fn dir(&mut self, dir: &Path) -> Result<&mut Self> {
        let mut names = Vec::new();
        if dir.is_dir() {
            for entry in fs::read_dir(dir).map_err(|e| ForgeError::io(dir, e))? {
                let entry = entry.map_err(|e| ForgeError::io(dir, e))?;
                if entry.file_type().map_err(|e| ForgeError::io(dir, e))?.is_file() {
                    names.push(entry.file_name());
                }
            }
        }
        names.sort();
        for n in names {
            let p = dir.join(&n);
            let b = fsutil::read_bytes(&p)?;
            self.bytes(n.to_string_lossy().as_bytes()).bytes(&b);
        }
        Ok(self)
    }

    fn finish(&self) -> String {
        hex::encode(self.0.clone().finalize())
    }
}

struct StageCache {
    dir: PathBuf,
}

impl StageCache {
    fn hit(&self, stage: &str, key: &str, out: &Path) -> bool {
        let path = self.dir.join(format!("{}.json", stage));
        let Ok(text) = fs::read_to_string(&path) else {
            return false;
        };
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(e) => e.key == key && e.outputs.iter().all(|o| out.join(o).exists()),
            Err(_) => false,
        }
    }

    fn store(&self, stage: &str, key: &str, outputs: &[&str]) -> Result<()> {
        fsutil::write_json(
            &self.dir.join(format!("{}.json", stage)),
            &CacheEntry {
                key: key.to_string(),
                outputs: outputs.iter().map(PathBuf::from).collect(),
            },
        )
    }
}

fn record(stages: &mut Vec<StageReport>, stage: &str, status: StageStatus, key: &str) {
    log::info!("stage {}: {}", stage, if status == StageStatus::Ran { "ran" } else { "cached" });
    stages.push(StageReport {
        stage: stage.to_string(),
        status,
        key: key.to_string(),
    });
}

pub fn run(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let out = &cfg.out;
    fsutil::create_dir_all(out)?;
    let cache = StageCache { dir: out.join(CACHE_DIR) };
    let mut stages = Vec::new();
    log::info!("pipeline seed {}", cfg.seed);

    // index
    let (corpus, index_key) = (|| {
        let corpus = Corpus::load(&cfg.manifest)?;
        let key = Hasher::new("index")
            .file(&cfg.manifest)?
            .file(&corpus.objects_path())?
            .file(&corpus.features_path())?
            .json(&cfg.index)
            .finish();
        Ok((corpus, key))
    })()
    .map_err(|e: ForgeError| e.in_stage("index"))?;
    let index_path = out.join(INDEX_FILE);
    let index = if cache.hit("index", &index_key, out) {
        record(&mut stages, "index", StageStatus::Cached, &index_key);
        None
    } else {
        let index = (|| {
            let index = Index::build(&corpus.matrix, &cfg.index)?;
            graphio::write_index(&index_path, &index)?;
            cache.store("index", &index_key, &[INDEX_FILE])?;
            Ok(index)
        })()
        .map_err(|e: ForgeError| e.in_stage("index"))?;
        record(&mut stages, "index", StageStatus::Ran, &index_key);
        Some(index)
    };

    // graph
    let graph_key = Hasher::new("graph").bytes(index_key.as_bytes()).json(&cfg.params).finish();
    let graph_path = out.join(GRAPH_FILE);
    let graph = (|| {
        if cache.hit("graph", &graph_key, out) {
            record(&mut stages, "graph", StageStatus::Cached, &graph_key);
            return graphio::read_graph(&graph_path);
        }
        let index = match index {
            Some(i) => i,
            None => graphio::load_index(&index_path, &corpus.matrix, cfg.index.probes)?,
        };
        let graph = build_graph(&index, &corpus.records, &cfg.params)?;
        graphio::write_graph(&graph_path, &graph, &cfg.params, corpus.records.len())?;
        cache.store("graph", &graph_key, &[GRAPH_FILE])?;
        record(&mut stages, "graph", StageStatus::Ran, &graph_key);
        Ok(graph)
    })()
    .map_err(|e: ForgeError| e.in_stage("graph"))?;

    // stats
    let stats_key = Hasher::new("stats").bytes(graph_key.as_bytes()).finish();
    let stats_path = out.join(STATS_FILE);
    let stats = (|| {
        if cache.hit("stats", &stats_key, out) {
            record(&mut stages, "stats", StageStatus::Cached, &stats_key);
            return fsutil::read_json::<RecurrenceStats>(&stats_path);
        }
        let stats = degree_stats(&graph, &corpus.records);
        fsutil::write_json(&stats_path, &stats)?;
        cache.store("stats", &stats_key, &[STATS_FILE])?;
        record(&mut stages, "stats", StageStatus::Ran, &stats_key);
        Ok(stats)
    })()
    .map_err(|e: ForgeError| e.in_stage("stats"))?;

    // dataset
    let opts = EmitOptions {
        task: cfg.task,
        out_dir: out.clone(),
        backgrounds_dir: cfg.backgrounds_dir.clone(),
        captions_dir: cfg.captions_dir.clone(),
        seed: cfg.seed,
        write_grids: cfg.write_grids,
    };
    let dataset = (|| {
        let bg = opts.backgrounds_dir.clone().unwrap_or_else(|| corpus.root.join("backgrounds"));
        let cap = opts.captions_dir.clone().unwrap_or_else(|| corpus.root.join("captions"));
        let mut h = Hasher::new("dataset");
        h.bytes(graph_key.as_bytes())
            .json(&(cfg.task, cfg.seed, cfg.write_grids))
            .dir(&bg)?
            .dir(&cap)?;
        let mut images: Vec<&str> = corpus.records.iter().map(|r| r.image.as_str()).collect();
        images.sort_unstable();
        images.dedup();
        for img in images {
            h.file(&corpus.resolve(img))?;
        }
        let key = h.finish();
        if cache.hit("dataset", &key, out) {
            record(&mut stages, "dataset", StageStatus::Cached, &key);
            return fsutil::read_json::<EmitReport>(&out.join(emit::REPORT_FILE));
        }
        let report = emit::emit_dataset(&corpus, &graph, &opts)?;
        cache.store(
            "dataset",
            &key,
            &[emit::EXAMPLES_FILE, emit::MANIFEST_FILE, emit::REPORT_FILE],
        )?;
        record(&mut stages, "dataset", StageStatus::Ran, &key);
        Ok(report)
    })()
    .map_err(|e: ForgeError| e.in_stage("dataset"))?;

    let report = PipelineReport {
        seed: cfg.seed,
        stages,
        stats,
        dataset,
    };
    fsutil::write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}
