//! Top-k cosine retrieval over a [`FeatureMatrix`].
//!
//! Two layouts share one scoring path: an exact full scan, and an inverted
//! file where rows are bucketed by nearest centroid (spherical k-means on a
//! seeded sample) and queries scan only the `probes` closest buckets. With
//! `probes == num_partitions` the partitioned layout scans every row and
//! returns exactly what the exact layout returns.
//!
//! Results are ordered by similarity descending, ties by ascending row id.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dot, similarity, FeatureMatrix};
use crate::par;

pub const DEFAULT_SEARCH_K: usize = 16;
pub const KMEANS_ITERATIONS: usize = 10;
pub const KMEANS_SAMPLE_PER_PARTITION: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub similarity: f32,
}

/// Total order used everywhere: similarity descending, then id ascending.
#[inline]
pub fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    /// Row the query came from; `None` for free-vector queries.
    pub query_id: Option<usize>,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborList {
    pub fn ids(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    Exact,
    Partitioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub mode: IndexMode,
    /// Defaults to ⌈√N⌉.
    pub num_partitions: Option<usize>,
    /// Defaults to ⌈√num_partitions⌉.
    pub probes: Option<usize>,
    /// Candidates fetched per object before downstream filtering.
    pub search_k: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self::exact()
    }
}

impl IndexConfig {
    pub fn exact() -> Self {
        Self {
            mode: IndexMode::Exact,
            num_partitions: None,
            probes: None,
            search_k: DEFAULT_SEARCH_K,
            seed: 0,
        }
    }

    pub fn partitioned() -> Self {
        Self {
            mode: IndexMode::Partitioned,
            ..Self::exact()
        }
    }

    pub fn with_partitions(mut self, p: usize) -> Self {
        self.num_partitions = Some(p);
        self
    }

    pub fn with_probes(mut self, r: usize) -> Self {
        self.probes = Some(r);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_search_k(mut self, k: usize) -> Self {
        self.search_k = k;
        self
    }

    /// Partition count and probe count for a corpus of `n` rows.
    pub fn resolve(&self, n: usize) -> Result<(usize, usize)> {
        let parts = self.num_partitions.unwrap_or_else(|| ceil_sqrt(n).max(1));
        if parts == 0 {
            return Err(Error::config("num_partitions must be at least 1"));
        }
        if parts > n {
            return Err(Error::config(format!(
                "num_partitions {} exceeds row count {}",
                parts, n
            )));
        }
        let probes = self.probes.unwrap_or_else(|| default_probes(parts));
        if probes == 0 {
            return Err(Error::config("probes must be at least 1"));
        }
        if probes > parts {
            return Err(Error::config(format!(
                "probes {} exceeds num_partitions {}",
                probes, parts
            )));
        }
        if self.search_k == 0 {
            return Err(Error::config("search_k must be at least 1"));
        }
        Ok((parts, probes))
    }
}

pub fn ceil_sqrt(n: usize) -> usize {
    let mut r = libm::sqrt(n as f64) as usize;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r
}

pub fn default_probes(num_partitions: usize) -> usize {
    ceil_sqrt(num_partitions).max(1)
}

/// Inverted-file layout: unit centroids and the rows assigned to each.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub centroids: FeatureMatrix,
    pub members: Vec<Vec<u32>>,
}

impl Partitions {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Exact,
    Partitioned { parts: Partitions, probes: usize },
}

/// What to search for.
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    /// An indexed row; the row itself is excluded from its results.
    Row(usize),
    Vector(&'a [f32]),
}

/// Read-only retrieval index borrowing the matrix it was built over.
#[derive(Debug, Clone)]
pub struct Index<'m> {
    matrix: &'m FeatureMatrix,
    layout: Layout,
}

impl<'m> Index<'m> {
    pub fn build(matrix: &'m FeatureMatrix, config: &IndexConfig) -> Result<Self> {
        match config.mode {
            IndexMode::Exact => build_exact(matrix),
            IndexMode::Partitioned => build_partitioned(matrix, config),
        }
    }

    /// Reassembles an index from persisted partitions.
    pub fn from_partitions(
        matrix: &'m FeatureMatrix,
        parts: Partitions,
        probes: usize,
    ) -> Result<Self> {
        if parts.centroids.dim() != matrix.dim() {
            return Err(Error::DimensionMismatch {
                expected: matrix.dim(),
                actual: parts.centroids.dim(),
            });
        }
        let assigned: usize = parts.members.iter().map(Vec::len).sum();
        if assigned != matrix.len() || parts.centroids.len() != parts.members.len() {
            return Err(Error::CountMismatch {
                expected: matrix.len(),
                actual: assigned,
            });
        }
        if probes == 0 || probes > parts.len() {
            return Err(Error::config(format!(
                "probes {} must be in 1..={}",
                probes,
                parts.len()
            )));
        }
        Ok(Self {
            matrix,
            layout: Layout::Partitioned { parts, probes },
        })
    }

    pub fn matrix(&self) -> &'m FeatureMatrix {
        self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn mode(&self) -> IndexMode {
        match self.layout {
            Layout::Exact => IndexMode::Exact,
            Layout::Partitioned { .. } => IndexMode::Partitioned,
        }
    }

    pub fn partitions(&self) -> Option<&Partitions> {
        match &self.layout {
            Layout::Exact => None,
            Layout::Partitioned { parts, .. } => Some(parts),
        }
    }

    pub fn probes(&self) -> Option<usize> {
        match self.layout {
            Layout::Exact => None,
            Layout::Partitioned { probes, .. } => Some(probes),
        }
    }

    /// Same partitions, different probe count.
    pub fn with_probes(&self, probes: usize) -> Result<Self> {
        match &self.layout {
            Layout::Exact => Err(Error::config("exact index has no probes")),
            Layout::Partitioned { parts, .. } => {
                Self::from_partitions(self.matrix, parts.clone(), probes)
            }
        }
    }

    pub fn query(&self, query: Query<'_>, k: usize) -> Result<NeighborList> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        let (vector, exclude) = match query {
            Query::Row(i) => {
                if i >= self.matrix.len() {
                    return Err(Error::UnknownQuery(i));
                }
                (self.matrix.row(i), Some(i))
            }
            Query::Vector(v) => {
                if v.len() != self.matrix.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.matrix.dim(),
                        actual: v.len(),
                    });
                }
                (v, None)
            }
        };
        let mut hits = match &self.layout {
            Layout::Exact => self.score_rows(vector, exclude, 0..self.matrix.len()),
            Layout::Partitioned { parts, probes } => {
                let chosen = nearest_partitions(&parts.centroids, vector, *probes);
                let mut hits = Vec::new();
                for p in chosen {
                    hits.extend(self.score_rows(
                        vector,
                        exclude,
                        parts.members[p].iter().map(|&r| r as usize),
                    ));
                }
                hits
            }
        };
        top_k(&mut hits, k);
        Ok(NeighborList {
            query_id: exclude,
            neighbors: hits,
        })
    }

    /// Queries every row, in row order.
    pub fn query_all(&self, k: usize) -> Result<Vec<NeighborList>> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        par::map_range(self.len(), |i| self.query(Query::Row(i), k))
            .into_iter()
            .collect()
    }

    fn score_rows<I>(&self, q: &[f32], exclude: Option<usize>, rows: I) -> Vec<Neighbor>
    where
        I: Iterator<Item = usize>,
    {
        rows.filter(|&r| Some(r) != exclude)
            .map(|r| Neighbor {
                id: r,
                similarity: similarity(q, self.matrix.row(r)),
            })
            .collect()
    }
}

/// Keeps the best `k` hits, sorted by [`rank_order`].
pub fn top_k(hits: &mut Vec<Neighbor>, k: usize) {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, rank_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(rank_order);
}

pub fn build_exact(matrix: &FeatureMatrix) -> Result<Index<'_>> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok(Index {
        matrix,
        layout: Layout::Exact,
    })
}

pub fn build_partitioned<'m>(matrix: &'m FeatureMatrix, config: &IndexConfig) -> Result<Index<'m>> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let (num_parts, probes) = config.resolve(matrix.len())?;
    let centroids = train_centroids(matrix, num_parts, config.seed)?;
    let assignment = par::map_range(matrix.len(), |r| nearest_centroid(&centroids, matrix.row(r)));
    let mut members = vec![Vec::new(); num_parts];
    for (row, p) in assignment.into_iter().enumerate() {
        members[p].push(row as u32);
    }
    Ok(Index {
        matrix,
        layout: Layout::Partitioned {
            parts: Partitions { centroids, members },
            probes,
        },
    })
}

fn nearest_centroid(centroids: &FeatureMatrix, v: &[f32]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, row) in centroids.rows().enumerate() {
        let s = dot(v, row);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best
}

fn nearest_partitions(centroids: &FeatureMatrix, v: &[f32], probes: usize) -> Vec<usize> {
    let mut scored: Vec<Neighbor> = centroids
        .rows()
        .enumerate()
        .map(|(c, row)| Neighbor {
            id: c,
            similarity: similarity(v, row),
        })
        .collect();
    top_k(&mut scored, probes);
    scored.into_iter().map(|n| n.id).collect()
}

/// Spherical k-means over a seeded sample of `min(N, 100·P)` rows.
fn train_centroids(matrix: &FeatureMatrix, num_parts: usize, seed: u64) -> Result<FeatureMatrix> {
    let n = matrix.len();
    let dim = matrix.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_len = n.min(KMEANS_SAMPLE_PER_PARTITION * num_parts);
    // Sampled order is random; the first `num_parts` entries seed the centroids.
    let sample_rows: Vec<usize> = sample(&mut rng, n, sample_len).into_vec();
    let mut centroids = matrix.gather(&sample_rows[..num_parts])?;

    let mut assign = vec![0usize; sample_len];
    for _ in 0..KMEANS_ITERATIONS {
        let next = par::map_range(sample_len, |i| {
            nearest_centroid(&centroids, matrix.row(sample_rows[i]))
        });
        let changed = next != assign;
        assign = next;

        let mut sums = vec![0.0f64; num_parts * dim];
        let mut counts = vec![0usize; num_parts];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            let row = matrix.row(sample_rows[i]);
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *s += *v as f64;
            }
        }
        let mut data = centroids.as_slice().to_vec();
        for c in 0..num_parts {
            if counts[c] == 0 {
                continue;
            }
            let sum = &sums[c * dim..(c + 1) * dim];
            let norm = libm::sqrt(sum.iter().map(|s| s * s).sum::<f64>());
            if norm > 0.0 {
                for (d, s) in data[c * dim..(c + 1) * dim].iter_mut().zip(sum) {
                    *d = (s / norm) as f32;
                }
            }
        }
        centroids = FeatureMatrix::new(dim, data)?;
        if !changed {
            break;
        }
    }
    Ok(centroids)
}

/// Mean over queries of the fraction of exact top-k ids the approximate index
/// also returned.
pub fn recall_eval(approx: &Index<'_>, exact: &Index<'_>, query_ids: &[usize], k: usize) -> Result<f64> {
    if query_ids.is_empty() {
        return Err(Error::invalid("recall needs at least one query"));
    }
    if approx.len() != exact.len() {
        return Err(Error::CountMismatch {
            expected: exact.len(),
            actual: approx.len(),
        });
    }
    let per_query = par::map_range(query_ids.len(), |i| -> Result<f64> {
        let q = Query::Row(query_ids[i]);
        let truth = exact.query(q, k)?;
        let got = approx.query(q, k)?;
        if truth.neighbors.is_empty() {
            return Ok(1.0);
        }
        let mut truth_ids = truth.ids();
        truth_ids.sort_unstable();
        let hit = got
            .neighbors
            .iter()
            .filter(|n| truth_ids.binary_search(&n.id).is_ok())
            .count();
        Ok(hit as f64 / truth_ids.len() as f64)
    });
    let mut total = 0.0;
    for r in per_query {
        total += r?;
    }
    Ok(total / query_ids.len() as f64)
}

/// Binary layout of the index file.
///
/// ```text
/// 0..4    magic "OMIX"
/// 4..8    u32 LE version (= 1)
/// 8..12   u32 LE mode (0 exact, 1 partitioned)
/// 12..16  u32 LE dim
/// 16..24  u64 LE count
/// 24..28  u32 LE num_partitions (0 for exact)
/// then    num_partitions × dim f32 LE centroids
/// then    per partition: u64 LE length, length × u32 LE row ids
/// ```
///
/// Probe count is a query-time setting and is not stored.
pub mod omix {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"OMIX";
    pub const VERSION: u32 = 1;
    pub const HEADER_LEN: usize = 28;

    #[derive(Debug, Clone, PartialEq)]
    pub struct IndexFile {
        pub mode: IndexMode,
        pub dim: usize,
        pub count: usize,
        pub partitions: Option<Partitions>,
    }

    pub fn encode(index: &Index<'_>) -> Vec<u8> {
        let m = index.matrix();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mode: u32 = match index.mode() {
            IndexMode::Exact => 0,
            IndexMode::Partitioned => 1,
        };
        out.extend_from_slice(&mode.to_le_bytes());
        out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        match index.partitions() {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(parts) => {
                out.extend_from_slice(&(parts.len() as u32).to_le_bytes());
                for v in parts.centroids.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for list in &parts.members {
                    out.extend_from_slice(&(list.len() as u64).to_le_bytes());
                    for id in list {
                        out.extend_from_slice(&id.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
    }

    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
            match end {
                Some(end) => {
                    let s = &self.bytes[self.pos..end];
                    self.pos = end;
                    Ok(s)
                }
                None => Err(Error::Format(format!(
                    "truncated index file at byte {}",
                    self.pos
                ))),
            }
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<IndexFile> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format(String::from("bad magic, expected \"OMIX\"")));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {}", version)));
        }
        let mode = match cur.u32()? {
            0 => IndexMode::Exact,
            1 => IndexMode::Partitioned,
            other => return Err(Error::Format(format!("unknown index mode {}", other))),
        };
        let dim = cur.u32()? as usize;
        let count = cur.u64()? as usize;
        let num_parts = cur.u32()? as usize;
        let partitions = match mode {
            IndexMode::Exact => {
                if num_parts != 0 {
                    return Err(Error::Format(String::from("exact index declares partitions")));
                }
                None
            }
            IndexMode::Partitioned => {
                let raw = cur.take(num_parts.checked_mul(dim).and_then(|v| v.checked_mul(4)).ok_or_else(
                    || Error::Format(String::from("centroid block size overflows")),
                )?)?;
                let centroids = FeatureMatrix::new(dim, crate::features::omfv::decode_floats(raw))?;
                let mut members = Vec::with_capacity(num_parts);
                let mut total = 0usize;
                for _ in 0..num_parts {
                    let len = cur.u64()? as usize;
                    let raw = cur.take(len.checked_mul(4).ok_or_else(|| {
                        Error::Format(String::from("partition size overflows"))
                    })?)?;
                    let ids: Vec<u32> = raw
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    if ids.iter().any(|&r| r as usize >= count) {
                        return Err(Error::Format(String::from("partition row id out of range")));
                    }
                    total += len;
                    members.push(ids);
                }
                if total != count {
                    return Err(Error::CountMismatch {
                        expected: count,
                        actual: total,
                    });
                }
                Some(Partitions { centroids, members })
            }
        };
        if cur.pos != bytes.len() {
            return Err(Error::Format(String::from("trailing bytes after index payload")));
        }
        Ok(IndexFile {
            mode,
            dim,
            count,
            partitions,
        })
    }

    impl IndexFile {
        /// Binds the decoded layout to the matrix it was built over.
        pub fn bind<'m>(self, matrix: &'m FeatureMatrix, probes: Option<usize>) -> Result<Index<'m>> {
            if matrix.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: matrix.dim(),
                });
            }
            if matrix.len() != self.count {
                return Err(Error::CountMismatch {
                    expected: self.count,
                    actual: matrix.len(),
                });
            }
            match self.partitions {
                None => build_exact(matrix),
                Some(parts) => {
                    let probes = probes.unwrap_or_else(|| default_probes(parts.len()));
                    Index::from_partitions(matrix, parts, probes)
                }
            }
        }
    }
}
