//! Sparse band-filtered neighbor graph and recurrence counts.
//!
//! For every object the graph keeps at most `k_max` neighbors whose cosine
//! falls inside the [`SimilarityBand`] (both endpoints inclusive), excluding
//! the object itself and any object cropped from the same source image.
//! Edges are directional.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ObjectRecord;
use crate::knn::{Index, NeighborList, Query, DEFAULT_SEARCH_K};
use crate::par;

pub const DEFAULT_BAND_LO: f32 = 0.93;
pub const DEFAULT_BAND_HI: f32 = 0.975;
pub const DEFAULT_K_MAX: usize = 5;

/// Inclusive cosine interval `[lo, hi]` accepted as a true recurrence.
///
/// Comparisons happen in `f32`, the precision scores are stored in, so a
/// stored `0.93` is inside a band whose `lo` is `0.93`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBand {
    pub lo: f32,
    pub hi: f32,
}

impl Default for SimilarityBand {
    fn default() -> Self {
        Self {
            lo: DEFAULT_BAND_LO,
            hi: DEFAULT_BAND_HI,
        }
    }
}

impl SimilarityBand {
    pub fn new(lo: f32, hi: f32) -> Result<Self> {
        if !(lo >= -1.0 && lo < hi && hi <= 1.0) {
            return Err(Error::config(format!(
                "similarity band needs -1 <= lo < hi <= 1, got [{}, {}]",
                lo, hi
            )));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn contains(&self, sim: f32) -> bool {
        sim >= self.lo && sim <= self.hi
    }
}

/// Keeps the entries whose similarity lies in `band`, preserving order.
pub fn filter_band(list: &NeighborList, band: &SimilarityBand) -> NeighborList {
    NeighborList {
        query_id: list.query_id,
        neighbors: list
            .neighbors
            .iter()
            .filter(|n| band.contains(n.similarity))
            .copied()
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Object id (not feature row) of the neighbor.
    pub id: u64,
    #[serde(rename = "sim")]
    pub similarity: f32,
}

/// Per-object neighbor lists. Only objects with at least one retained
/// neighbor are stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnnGraph {
    pub band: SimilarityBand,
    pub k_max: usize,
    adjacency: BTreeMap<u64, Vec<Edge>>,
}

impl KnnGraph {
    pub fn new(band: SimilarityBand, k_max: usize) -> Self {
        Self {
            band,
            k_max,
            adjacency: BTreeMap::new(),
        }
    }

    /// Sets the neighbor list of `id`. Empty lists are dropped.
    pub fn insert(&mut self, id: u64, edges: Vec<Edge>) {
        if edges.is_empty() {
            self.adjacency.remove(&id);
        } else {
            self.adjacency.insert(id, edges);
        }
    }

    pub fn neighbors(&self, id: u64) -> &[Edge] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, id: u64) -> usize {
        self.neighbors(id).len()
    }

    /// Nodes with at least one edge, in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = (u64, &[Edge])> + '_ {
        self.adjacency.iter().map(|(id, e)| (*id, e.as_slice()))
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Checks every graph invariant against the records it was built over.
    pub fn validate(&self, records: &[ObjectRecord]) -> Result<()> {
        let by_id: BTreeMap<u64, &ObjectRecord> = records.iter().map(|r| (r.id, r)).collect();
        for (id, edges) in self.nodes() {
            let src = by_id
                .get(&id)
                .ok_or_else(|| Error::invalid(format!("graph node {} has no record", id)))?;
            if edges.len() > self.k_max {
                return Err(Error::invalid(format!(
                    "node {} has {} neighbors, k_max is {}",
                    id,
                    edges.len(),
                    self.k_max
                )));
            }
            for (i, e) in edges.iter().enumerate() {
                let dst = by_id.get(&e.id).ok_or_else(|| {
                    Error::invalid(format!("edge {} -> {} points at no record", id, e.id))
                })?;
                if e.id == id {
                    return Err(Error::invalid(format!("self edge on {}", id)));
                }
                if dst.image == src.image {
                    return Err(Error::invalid(format!(
                        "edge {} -> {} joins crops of one image",
                        id, e.id
                    )));
                }
                if !self.band.contains(e.similarity) {
                    return Err(Error::invalid(format!(
                        "edge {} -> {} similarity {} outside band",
                        id, e.id, e.similarity
                    )));
                }
                if i > 0 && edges[i - 1].similarity < e.similarity {
                    return Err(Error::invalid(format!("neighbors of {} not sorted", id)));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of a graph build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub band: SimilarityBand,
    pub k_max: usize,
    /// Candidates fetched per object before exclusion and band filtering.
    pub search_k: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            band: SimilarityBand::default(),
            k_max: DEFAULT_K_MAX,
            search_k: DEFAULT_SEARCH_K,
        }
    }
}

/// Builds the neighbor graph. Row `i` of the index must hold the features
/// of `records[i]`.
pub fn build_graph(index: &Index<'_>, records: &[ObjectRecord], params: &GraphParams) -> Result<KnnGraph> {
    if index.len() != records.len() {
        return Err(Error::CountMismatch {
            expected: records.len(),
            actual: index.len(),
        });
    }
    if params.k_max == 0 || params.search_k == 0 {
        return Err(Error::config("k_max and search_k must be at least 1"));
    }
    let lists = par::map_range(records.len(), |i| -> Result<Vec<Edge>> {
        let hits = index.query(Query::Row(i), params.search_k)?;
        let src = &records[i];
        Ok(hits
            .neighbors
            .iter()
            .filter(|n| records[n.id].image != src.image && params.band.contains(n.similarity))
            .take(params.k_max)
            .map(|n| Edge {
                id: records[n.id].id,
                similarity: n.similarity,
            })
            .collect())
    });
    let mut graph = KnnGraph::new(params.band, params.k_max);
    for (i, edges) in lists.into_iter().enumerate() {
        graph.insert(records[i].id, edges?);
    }
    Ok(graph)
}

/// Counts of objects with at least one and at least three retained neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceStats {
    pub num_images: usize,
    pub num_objects: usize,
    pub count_ge1: usize,
    pub count_ge3: usize,
    /// Percent of objects, rounded to one decimal.
    pub pct_ge1: f64,
    pub pct_ge3: f64,
}

impl RecurrenceStats {
    pub fn from_counts(num_images: usize, num_objects: usize, count_ge1: usize, count_ge3: usize) -> Self {
        Self {
            num_images,
            num_objects,
            count_ge1,
            count_ge3,
            pct_ge1: percent_tenths(count_ge1 as u64, num_objects as u64) as f64 / 10.0,
            pct_ge3: percent_tenths(count_ge3 as u64, num_objects as u64) as f64 / 10.0,
        }
    }

    pub fn ge1_label(&self) -> String {
        format_percent(self.count_ge1 as u64, self.num_objects as u64)
    }

    pub fn ge3_label(&self) -> String {
        format_percent(self.count_ge3 as u64, self.num_objects as u64)
    }
}

/// `100·count/total` in tenths of a percent, rounded half up, in exact
/// integer arithmetic. Zero when `total` is zero.
pub fn percent_tenths(count: u64, total: u64) -> u64 {
    if total == 0 {
        return 0;
    }
    let num = count as u128 * 2000 + total as u128;
    (num / (2 * total as u128)) as u64
}

/// Percentage with one decimal, e.g. `"8.2%"`.
pub fn format_percent(count: u64, total: u64) -> String {
    let t = percent_tenths(count, total);
    format!("{}.{}%", t / 10, t % 10)
}

pub fn degree_stats(graph: &KnnGraph, records: &[ObjectRecord]) -> RecurrenceStats {
    let images: BTreeSet<&str> = records.iter().map(|r| r.image.as_str()).collect();
    let mut ge1 = 0;
    let mut ge3 = 0;
    for r in records {
        let d = graph.degree(r.id);
        if d >= 1 {
            ge1 += 1;
        }
        if d >= 3 {
            ge3 += 1;
        }
    }
    RecurrenceStats::from_counts(images.len(), records.len(), ge1, ge3)
}
