//! Recurrence analyses: precision against threshold, the distribution of
//! top-3 similarities, recurrence under subsampling, and per-class rates.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, ObjectRecord};
use crate::graph::{build_graph, degree_stats, GraphParams, KnnGraph, SimilarityBand};
use crate::knn::{Index, IndexConfig, Query};
use crate::par;

pub const SWEEP_LO: f64 = 0.85;
pub const SWEEP_HI: f64 = 1.0;
pub const SWEEP_STEP: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Human,
    Synthetic,
}

/// A retrieved pair with a match / no-match judgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub a: u64,
    pub b: u64,
    #[serde(rename = "sim")]
    pub similarity: f32,
    #[serde(rename = "match")]
    pub is_match: bool,
    pub source: LabelSource,
}

impl PairLabel {
    pub fn validate(&self) -> Result<()> {
        if self.a == self.b {
            return Err(Error::invalid(format!("pair label joins {} with itself", self.a)));
        }
        if !(-1.0..=1.0).contains(&self.similarity) {
            return Err(Error::invalid(format!(
                "pair ({}, {}) similarity {} outside [-1, 1]",
                self.a, self.b, self.similarity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub threshold: f32,
    /// `None` when no label reaches the threshold.
    pub precision: Option<f64>,
    pub support: usize,
    pub matches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCurve {
    pub points: Vec<PrecisionPoint>,
}

impl PrecisionCurve {
    pub fn at(&self, threshold: f32) -> Option<&PrecisionPoint> {
        self.points.iter().find(|p| p.threshold == threshold)
    }
}

/// Thresholds `lo, lo+step, …` up to `hi` inclusive (to within half a step).
pub fn threshold_sweep(lo: f64, hi: f64, step: f64) -> Result<Vec<f32>> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::config(format!(
            "bad sweep lo={} hi={} step={}",
            lo, hi, step
        )));
    }
    let n = libm::floor((hi - lo) / step + 0.5) as usize;
    let mut out: Vec<f32> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = (lo + i as f64 * step) as f32;
        if out.last().map_or(true, |&last| t > last) {
            out.push(t);
        }
    }
    Ok(out)
}

pub fn default_sweep() -> Vec<f32> {
    threshold_sweep(SWEEP_LO, SWEEP_HI, SWEEP_STEP).expect("valid default sweep")
}

/// Precision of "similarity ≥ t means match" at each threshold.
pub fn precision_curve(labels: &[PairLabel], thresholds: &[f32]) -> Result<PrecisionCurve> {
    if labels.is_empty() {
        return Err(Error::invalid("precision curve needs at least one label"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("thresholds must be strictly increasing"));
    }
    let mut sorted: Vec<(f32, bool)> = labels.iter().map(|l| (l.similarity, l.is_match)).collect();
    sorted.sort_by(|x, y| y.0.total_cmp(&x.0));
    // prefix_matches[i] = matches among the i highest-similarity labels
    let mut prefix_matches = Vec::with_capacity(sorted.len() + 1);
    prefix_matches.push(0usize);
    for &(_, m) in &sorted {
        let last = *prefix_matches.last().unwrap();
        prefix_matches.push(last + m as usize);
    }
    let points = thresholds
        .iter()
        .map(|&t| {
            let support = sorted.partition_point(|&(s, _)| s >= t);
            let matches = prefix_matches[support];
            PrecisionPoint {
                threshold: t,
                precision: (support > 0).then(|| matches as f64 / support as f64),
                support,
                matches,
            }
        })
        .collect();
    Ok(PrecisionCurve { points })
}

/// Top-`k` similarities per object before band filtering; self and
/// same-image candidates excluded. Row `i` of the index pairs with `records[i]`.
pub fn top_similarities(index: &Index<'_>, records: &[ObjectRecord], k: usize, search_k: usize) -> Result<Vec<Vec<f32>>> {
    if index.len() != records.len() {
        return Err(Error::CountMismatch {
            expected: records.len(),
            actual: index.len(),
        });
    }
    let fetch = search_k.max(k);
    par::map_range(records.len(), |i| -> Result<Vec<f32>> {
        let hits = index.query(Query::Row(i), fetch)?;
        Ok(hits
            .neighbors
            .iter()
            .filter(|n| records[n.id].image != records[i].image)
            .take(k)
            .map(|n| n.similarity)
            .collect())
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[-1, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub band: SimilarityBand,
    pub in_band: u64,
    /// `in_band / total`, zero for an empty input.
    pub in_band_fraction: f64,
}

pub fn similarity_histogram(per_object: &[Vec<f32>], bins: usize, band: SimilarityBand) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let edges = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
    let mut counts = alloc::vec![0u64; bins];
    let mut total = 0;
    let mut in_band = 0;
    for sims in per_object {
        for &s in sims {
            let pos = (s as f64 + 1.0) / 2.0 * bins as f64;
            let b = (libm::floor(pos).max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
            total += 1;
            if band.contains(s) {
                in_band += 1;
            }
        }
    }
    Ok(Histogram {
        edges,
        counts,
        total,
        band,
        in_band,
        in_band_fraction: if total == 0 { 0.0 } else { in_band as f64 / total as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub fraction: f64,
    pub subset_size: usize,
    pub count_ge1: usize,
    pub count_ge3: usize,
    /// Percent of the subset.
    pub pct_ge1: f64,
    pub pct_ge3: f64,
    /// Unrounded fraction of the subset, for fitting.
    pub frac_ge1: f64,
    pub frac_ge3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub seed: u64,
    pub points: Vec<ScalingPoint>,
}

/// Recurrence rate on uniform random subsets of the corpus.
///
/// Each subset is drawn without replacement from one seeded generator, in
/// fraction order, and re-indexed with `index_config`. Row `i` of `matrix`
/// pairs with `records[i]`.
pub fn scaling_curve(
    matrix: &FeatureMatrix,
    records: &[ObjectRecord],
    fractions: &[f64],
    seed: u64,
    params: &GraphParams,
    index_config: &IndexConfig,
) -> Result<ScalingCurve> {
    if matrix.len() != records.len() {
        return Err(Error::CountMismatch {
            expected: records.len(),
            actual: matrix.len(),
        });
    }
    if fractions.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("fractions must be strictly increasing"));
    }
    let n = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::config(format!("fraction {} outside (0, 1]", fraction)));
        }
        let size = libm::floor(fraction * n as f64) as usize;
        if size < 4 {
            return Err(Error::config(format!(
                "fraction {} yields {} objects, need at least 4",
                fraction, size
            )));
        }
        let mut rows = sample(&mut rng, n, size).into_vec();
        rows.sort_unstable();
        let sub_matrix = matrix.gather(&rows)?;
        let sub_records: Vec<ObjectRecord> = rows.iter().map(|&r| records[r].clone()).collect();
        let index = Index::build(&sub_matrix, index_config)?;
        let graph = build_graph(&index, &sub_records, params)?;
        let stats = degree_stats(&graph, &sub_records);
        points.push(ScalingPoint {
            fraction,
            subset_size: size,
            count_ge1: stats.count_ge1,
            count_ge3: stats.count_ge3,
            pct_ge1: stats.pct_ge1,
            pct_ge3: stats.pct_ge3,
            frac_ge1: stats.count_ge1 as f64 / size as f64,
            frac_ge3: stats.count_ge3 as f64 / size as f64,
        });
    }
    Ok(ScalingCurve { seed, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub num_objects: usize,
    pub num_with_ge3: usize,
    pub percentage: f64,
}

pub type ClassBreakdown = BTreeMap<String, ClassStats>;

/// Per-class share of objects with at least three retained neighbors.
pub fn class_breakdown(graph: &KnnGraph, records: &[ObjectRecord]) -> ClassBreakdown {
    let mut out: ClassBreakdown = BTreeMap::new();
    for r in records {
        let entry = out.entry(r.class_label.clone()).or_insert(ClassStats {
            num_objects: 0,
            num_with_ge3: 0,
            percentage: 0.0,
        });
        entry.num_objects += 1;
        if graph.degree(r.id) >= 3 {
            entry.num_with_ge3 += 1;
        }
    }
    for s in out.values_mut() {
        s.percentage = 100.0 * s.num_with_ge3 as f64 / s.num_objects as f64;
    }
    out
}
