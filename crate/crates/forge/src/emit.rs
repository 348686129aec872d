//! Training-set emission: examples, grids, scene sidecars and the trainer
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use forge_core::dataset::{
    assemble_examples, attach_background, attach_caption, compose_grid, validate_example, Letterbox, SceneDescription,
    Task, TrainingExample, TrainingManifest, TILE,
};
use forge_core::{BBox, KnnGraph, ObjectRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::store::Corpus;
use crate::{fsutil, images};

pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const MANIFEST_FILE: &str = "training_manifest.json";
pub const REPORT_FILE: &str = "emit_report.json";

#[derive(Debug, Clone)]
pub struct EmitOptions {
    pub task: Task,
    pub out_dir: PathBuf,
    /// Defaults to `backgrounds/` next to the corpus manifest.
    pub backgrounds_dir: Option<PathBuf>,
    /// Defaults to `captions/` next to the corpus manifest.
    pub captions_dir: Option<PathBuf>,
    pub seed: u64,
    pub write_grids: bool,
}

/// One line of `examples.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleLine {
    pub target: u64,
    pub refs: [u64; 3],
    pub sims: [f32; 3],
    pub scene: SceneDescription,
    pub grid: String,
    /// Target bbox in target-tile pixels.
    pub mask_bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitReport {
    pub task: Task,
    pub examples: usize,
    /// Objects with fewer than three eligible neighbors.
    pub skipped_degree: usize,
    /// Examples dropped because their background or caption was absent.
    pub skipped_missing_sidecar: usize,
}

fn display_rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

enum Outcome {
    Emitted(ExampleLine),
    MissingSidecar,
}

fn complete_example(
    ex: TrainingExample,
    target: &ObjectRecord,
    corpus: &Corpus,
    bg_dir: &Path,
    cap_dir: &Path,
) -> Result<Option<TrainingExample>> {
    match ex.scene.task() {
        Task::Insertion => {
            let bg = bg_dir.join(format!("{}.png", ex.target));
            if !bg.exists() {
                return Ok(None);
            }
            let bg_size = images::dimensions(&bg)?;
            let target_size = images::dimensions(&corpus.resolve(&target.image))?;
            let ex = attach_background(ex, display_rel(&bg, &corpus.root), bg_size, target_size, target.bbox)
                .map_err(|e| ForgeError::validation(format!("{}: {}", bg.display(), e)))?;
            Ok(Some(ex))
        }
        Task::SubjectGen => {
            let cap = cap_dir.join(format!("{}.txt", ex.target));
            if !cap.exists() {
                return Ok(None);
            }
            let text = fsutil::read_to_string(&cap)?;
            let ex = attach_caption(ex, text.trim())
                .map_err(|e| ForgeError::validation(format!("{}: {}", cap.display(), e)))?;
            Ok(Some(ex))
        }
    }
}

fn emit_one(
    ex: TrainingExample,
    by_id: &BTreeMap<u64, &ObjectRecord>,
    corpus: &Corpus,
    opts: &EmitOptions,
    bg_dir: &Path,
    cap_dir: &Path,
) -> Result<Outcome> {
    let target = by_id[&ex.target];
    let Some(ex) = complete_example(ex, target, corpus, bg_dir, cap_dir)? else {
        return Ok(Outcome::MissingSidecar);
    };
    let target_path = corpus.resolve(&target.image);
    let grid = format!("grids/{}.png", ex.target);
    let mask_bbox = if opts.write_grids {
        let full = images::load_rgb(&target_path)?;
        let lb = Letterbox::new(full.width(), full.height(), TILE);
        let target_tile = images::letterbox(&full, TILE);
        let refs = ex
            .references
            .iter()
            .map(|r| {
                let rec = by_id[r];
                images::object_tile(&corpus.resolve(&rec.image), rec.bbox, TILE)
            })
            .collect::<Result<Vec<_>>>()?;
        let (canvas, _mask) = compose_grid(&target_tile, &refs).map_err(|e| ForgeError::Internal(e.to_string()))?;
        images::save_png(&opts.out_dir.join(&grid), &canvas)?;
        lb.map_bbox(target.bbox)
    } else {
        let (w, h) = images::dimensions(&target_path)?;
        Letterbox::new(w, h, TILE).map_bbox(target.bbox)
    };
    Ok(Outcome::Emitted(ExampleLine {
        target: ex.target,
        refs: ex.references,
        sims: ex.similarities,
        scene: ex.scene,
        grid,
        mask_bbox,
    }))
}

/// Assembles, validates and writes the training set for `opts.task`.
pub fn emit_dataset(corpus: &Corpus, graph: &KnnGraph, opts: &EmitOptions) -> Result<EmitReport> {
    let by_id: BTreeMap<u64, &ObjectRecord> = corpus.records.iter().map(|r| (r.id, r)).collect();
    let assembly = assemble_examples(graph, &corpus.records, opts.task);
    for ex in &assembly.examples {
        validate_example(ex, &by_id, &graph.band).map_err(|e| ForgeError::Internal(e.to_string()))?;
    }
    let bg_dir = opts.backgrounds_dir.clone().unwrap_or_else(|| corpus.root.join("backgrounds"));
    let cap_dir = opts.captions_dir.clone().unwrap_or_else(|| corpus.root.join("captions"));
    fsutil::create_dir_all(&opts.out_dir)?;

    let outcomes: Vec<Outcome> = assembly
        .examples
        .into_par_iter()
        .map(|ex| emit_one(ex, &by_id, corpus, opts, &bg_dir, &cap_dir))
        .collect::<Result<_>>()?;
    let mut lines = Vec::with_capacity(outcomes.len());
    let mut missing = 0;
    for o in outcomes {
        match o {
            Outcome::Emitted(l) => lines.push(l),
            Outcome::MissingSidecar => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{} examples skipped for missing sidecars", missing);
    }
    fsutil::write_jsonl(&opts.out_dir.join(EXAMPLES_FILE), &lines)?;
    let manifest = TrainingManifest::for_task(opts.task, graph.band, graph.k_max, opts.seed);
    manifest.validate()?;
    fsutil::write_json(&opts.out_dir.join(MANIFEST_FILE), &manifest)?;
    let report = EmitReport {
        task: opts.task,
        examples: lines.len(),
        skipped_degree: assembly.skipped,
        skipped_missing_sidecar: missing,
    };
    fsutil::write_json(&opts.out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}
