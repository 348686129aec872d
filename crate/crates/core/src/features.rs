//! Object records and the feature matrix backing every similarity computation.
//!
//! Similarities are computed from 32-bit storage with a 64-bit accumulator,
//! summing in index order. Every caller goes through [`dot`], so scores for
//! the same pair of rows are bit-identical no matter which path produced them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixels: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// True when the box is non-empty and lies inside a `width`×`height` image.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && (self.x as u64 + self.w as u64) <= width as u64
            && (self.y as u64 + self.h as u64) <= height as u64
    }
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One detected object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u64,
    /// Path or URI of the source image.
    pub image: String,
    pub bbox: BBox,
    pub class_label: String,
    pub det_conf: f32,
    /// Row of the feature matrix holding this object's embedding.
    pub feature_row: usize,
}

/// Checks the corpus-level record invariants: ids strictly increasing,
/// confidences in `[0, 1]`, feature rows inside the matrix.
pub fn validate_records(records: &[ObjectRecord], matrix_rows: usize) -> Result<()> {
    for (pos, rec) in records.iter().enumerate() {
        if pos > 0 && rec.id <= records[pos - 1].id {
            return Err(Error::invalid(format!(
                "object ids must be strictly increasing: {} follows {}",
                rec.id,
                records[pos - 1].id
            )));
        }
        if !(0.0..=1.0).contains(&rec.det_conf) {
            return Err(Error::invalid(format!(
                "object {}: det_conf {} outside [0, 1]",
                rec.id, rec.det_conf
            )));
        }
        if rec.feature_row >= matrix_rows {
            return Err(Error::invalid(format!(
                "object {}: feature row {} out of range for {} rows",
                rec.id, rec.feature_row, matrix_rows
            )));
        }
    }
    Ok(())
}

/// Keeps the records whose detection confidence is at least `min_conf`.
pub fn filter_by_confidence<I>(records: I, min_conf: f32) -> Vec<ObjectRecord>
where
    I: IntoIterator<Item = ObjectRecord>,
{
    records.into_iter().filter(|r| r.det_conf >= min_conf).collect()
}

/// Dense row-major N×D matrix of `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::Format(format!(
                "{} values do not divide into rows of dimension {}",
                data.len(),
                dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// New matrix made of the given rows, in the given order.
    pub fn gather(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            if r >= self.len() {
                return Err(Error::invalid(format!(
                    "row {} out of range for {} rows",
                    r,
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            dim: self.dim,
            data,
        })
    }

    /// Euclidean norm of row `i`, accumulated in `f64`.
    pub fn row_norm(&self, i: usize) -> f64 {
        libm::sqrt(dot(self.row(i), self.row(i)))
    }
}

/// Dot product accumulated in `f64`, summed in index order.
///
/// Panics in debug builds when the lengths differ; use [`cosine`] for a
/// checked version.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

/// Similarity score between two unit vectors, rounded to `f32`.
#[inline]
pub fn similarity(a: &[f32], b: &[f32]) -> f32 {
    dot(a, b) as f32
}

/// Cosine similarity of two unit-norm vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(similarity(a, b))
}

/// Scales every row to unit Euclidean norm.
pub fn normalize(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut data = Vec::with_capacity(matrix.data.len());
    for (i, row) in matrix.rows().enumerate() {
        let norm = libm::sqrt(dot(row, row));
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm { row: i });
        }
        data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
    }
    Ok(FeatureMatrix {
        dim: matrix.dim,
        data,
    })
}

/// Binary layout of `features.bin`.
///
/// ```text
/// 0..4    magic "OMFV"
/// 4..8    u32 LE version (= 1)
/// 8..12   u32 LE dim
/// 12..20  u64 LE count
/// 20..    count × dim f32 LE, row-major
/// ```
pub mod omfv {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"OMFV";
    pub const VERSION: u32 = 1;
    pub const HEADER_LEN: usize = 20;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Header {
        pub version: u32,
        pub dim: u32,
        pub count: u64,
    }

    impl Header {
        pub fn for_matrix(m: &FeatureMatrix) -> Self {
            Self {
                version: VERSION,
                dim: m.dim() as u32,
                count: m.len() as u64,
            }
        }

        pub fn parse(bytes: &[u8]) -> Result<Self> {
            if bytes.len() < HEADER_LEN {
                return Err(Error::Format(format!(
                    "truncated header: {} of {} bytes",
                    bytes.len(),
                    HEADER_LEN
                )));
            }
            if &bytes[0..4] != MAGIC {
                return Err(Error::Format(String::from("bad magic, expected \"OMFV\"")));
            }
            let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
            if version != VERSION {
                return Err(Error::Format(format!("unsupported version {}", version)));
            }
            let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
            if dim == 0 {
                return Err(Error::Format(String::from("dimension must be positive")));
            }
            let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
            Ok(Self {
                version,
                dim,
                count,
            })
        }

        pub fn encode(&self) -> [u8; HEADER_LEN] {
            let mut out = [0u8; HEADER_LEN];
            out[0..4].copy_from_slice(MAGIC);
            out[4..8].copy_from_slice(&self.version.to_le_bytes());
            out[8..12].copy_from_slice(&self.dim.to_le_bytes());
            out[12..20].copy_from_slice(&self.count.to_le_bytes());
            out
        }

        /// Payload size in bytes, or `None` on overflow.
        pub fn payload_len(&self) -> Option<u64> {
            self.count.checked_mul(self.dim as u64)?.checked_mul(4)
        }
    }

    pub fn encode(m: &FeatureMatrix) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
        out.extend_from_slice(&Header::for_matrix(m).encode());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<FeatureMatrix> {
        let header = Header::parse(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        let need = header
            .payload_len()
            .ok_or_else(|| Error::Format(String::from("declared size overflows")))?;
        if (payload.len() as u64) < need {
            return Err(Error::Format(format!(
                "truncated payload: header declares {} bytes, file has {}",
                need,
                payload.len()
            )));
        }
        if (payload.len() as u64) > need {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                payload.len() as u64 - need
            )));
        }
        let data = decode_floats(payload);
        FeatureMatrix::new(header.dim as usize, data)
    }

    pub fn decode_floats(bytes: &[u8]) -> Vec<f32> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        FeatureMatrix::new(d, data).unwrap()
    }

    #[test]
    fn normalize_three_four() {
        let m = FeatureMatrix::from_rows(2, &[[3.0f32, 4.0]]).unwrap();
        let n = normalize(&m).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_keeps_unit_rows() {
        let m = FeatureMatrix::from_rows(3, &[[0.0f32, 1.0, 0.0]]).unwrap();
        let n = normalize(&m).unwrap();
        for (a, b) in m.as_slice().iter().zip(n.as_slice()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn normalize_random_rows_are_unit() {
        let m = normalize(&random_matrix(100, 16, 7)).unwrap();
        for i in 0..m.len() {
            let n = m.row_norm(i);
            assert!((1.0 - 1e-4..=1.0 + 1e-4).contains(&n), "row {} norm {}", i, n);
        }
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = FeatureMatrix::from_rows(2, &[[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(normalize(&m), Err(Error::ZeroNorm { row: 1 }));
    }

    #[test]
    fn cosine_basics() {
        let v = [0.6f32, 0.8];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_matches_naive_loop() {
        let m = normalize(&random_matrix(2000, 24, 11)).unwrap();
        for p in 0..1000 {
            let (a, b) = (m.row(2 * p), m.row(2 * p + 1));
            let mut naive = 0.0f32;
            for k in 0..a.len() {
                naive += a[k] * b[k];
            }
            let c = cosine(a, b).unwrap();
            assert!((c - naive).abs() < 1e-5);
            assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&c));
        }
    }

    #[test]
    fn omfv_identity_read_back() {
        let m = FeatureMatrix::from_rows(4, &[[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
        let bytes = omfv::encode(&m);
        assert_eq!(bytes.len(), 20 + 32);
        let back = omfv::decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(omfv::encode(&back), bytes);
    }

    #[test]
    fn omfv_truncated_and_bad_magic() {
        let m = FeatureMatrix::from_rows(4, &[[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
        let bytes = omfv::encode(&m);
        let err = omfv::decode(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::Format(ref s) if s.contains("truncated")));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(omfv::decode(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn confidence_filter_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records: Vec<ObjectRecord> = (0..1000)
            .map(|i| ObjectRecord {
                id: i,
                image: format!("img{}.png", i / 3),
                bbox: BBox::new(0, 0, 4, 4),
                class_label: String::from("mug"),
                det_conf: rng.random_range(0.0f32..=1.0),
                feature_row: i as usize,
            })
            .collect();
        let kept = filter_by_confidence(records.clone(), 0.8);
        let mut expected = vec![];
        for r in &records {
            if !(r.det_conf < 0.8) {
                expected.push(r.id);
            }
        }
        assert_eq!(kept.iter().map(|r| r.id).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn record_validation() {
        let rec = |id, row| ObjectRecord {
            id,
            image: String::from("a.png"),
            bbox: BBox::new(0, 0, 1, 1),
            class_label: String::from("x"),
            det_conf: 0.9,
            feature_row: row,
        };
        assert!(validate_records(&[rec(0, 0), rec(1, 1)], 2).is_ok());
        assert!(validate_records(&[rec(1, 0), rec(1, 1)], 2).is_err());
        assert!(validate_records(&[rec(0, 2)], 2).is_err());
    }

    #[test]
    fn bbox_bounds() {
        assert!(BBox::new(0, 0, 10, 10).fits_within(10, 10));
        assert!(!BBox::new(1, 0, 10, 10).fits_within(10, 10));
        assert!(!BBox::new(0, 0, 0, 10).fits_within(10, 10));
    }

    proptest::proptest! {
        #[test]
        fn cosine_is_symmetric(seed in 0u64..1000, d in 1usize..64) {
            let m = normalize(&random_matrix(2, d, seed)).unwrap();
            let ab = cosine(m.row(0), m.row(1)).unwrap();
            let ba = cosine(m.row(1), m.row(0)).unwrap();
            proptest::prop_assert_eq!(ab, ba);
        }

        #[test]
        fn normalize_is_idempotent(seed in 0u64..1000, d in 1usize..64) {
            let once = normalize(&random_matrix(4, d, seed)).unwrap();
            let twice = normalize(&once).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                proptest::prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn omfv_round_trip(seed in 0u64..1000, n in 0usize..8, d in 1usize..8) {
            let m = random_matrix(n, d, seed);
            let bytes = omfv::encode(&m);
            let back = omfv::decode(&bytes).unwrap();
            proptest::prop_assert_eq!(omfv::encode(&back), bytes);
        }
    }
}
