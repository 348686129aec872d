//! `neighbors.jsonl` and OMIX index files.

use std::path::{Path, PathBuf};

use forge_core::graph::{Edge, GraphParams};
use forge_core::knn::omix;
use forge_core::{FeatureMatrix, Index, KnnGraph, SimilarityBand};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborLine {
    pub id: u64,
    pub nn: Vec<Edge>,
}

/// Build parameters stored next to the graph, in `<graph>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub band: SimilarityBand,
    pub k_max: usize,
    pub search_k: usize,
    pub num_objects: usize,
}

pub fn meta_path(graph_path: &Path) -> PathBuf {
    let mut s = graph_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_graph(path: &Path, graph: &KnnGraph, params: &GraphParams, num_objects: usize) -> Result<()> {
    fsutil::write_jsonl(
        path,
        graph.nodes().map(|(id, nn)| NeighborLine { id, nn: nn.to_vec() }),
    )?;
    fsutil::write_json(
        &meta_path(path),
        &GraphMeta {
            band: params.band,
            k_max: params.k_max,
            search_k: params.search_k,
            num_objects,
        },
    )
}

/// Reads a graph. Without a sidecar the default band and `k_max` apply.
pub fn read_graph(path: &Path) -> Result<KnnGraph> {
    let meta = meta_path(path);
    let (band, k_max) = if meta.exists() {
        let m: GraphMeta = fsutil::read_json(&meta)?;
        (m.band, m.k_max)
    } else {
        let d = GraphParams::default();
        (d.band, d.k_max)
    };
    let mut g = KnnGraph::new(band, k_max);
    let mut last = None;
    for (i, line) in fsutil::read_jsonl::<NeighborLine>(path)?.into_iter().enumerate() {
        if last.is_some_and(|l| line.id <= l) {
            return Err(ForgeError::validation(format!(
                "{}: record {}: id {} out of order",
                path.display(),
                i + 1,
                line.id
            )));
        }
        last = Some(line.id);
        g.insert(line.id, line.nn);
    }
    Ok(g)
}

pub fn write_index(path: &Path, index: &Index<'_>) -> Result<()> {
    fsutil::write_bytes(path, &omix::encode(index))
}

pub fn read_index_file(path: &Path) -> Result<omix::IndexFile> {
    let bytes = fsutil::read_bytes(path)?;
    omix::decode(&bytes).map_err(|e| ForgeError::core_at(path, e))
}

pub fn load_index<'m>(path: &Path, matrix: &'m FeatureMatrix, probes: Option<usize>) -> Result<Index<'m>> {
    read_index_file(path)?
        .bind(matrix, probes)
        .map_err(|e| ForgeError::validation(format!("{}: {}", path.display(), e)))
}
