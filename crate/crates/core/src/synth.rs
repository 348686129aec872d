//! Seeded synthetic corpora with known recurrence structure.
//!
//! Used by fixtures, examples and the test suites. Every generator is a pure
//! function of its arguments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{dot, BBox, FeatureMatrix, ObjectRecord};

/// Standard normal deviate (Box–Muller).
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| gaussian(rng)).collect()
}

fn unit(v: &mut [f64]) {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    for x in v.iter_mut() {
        *x /= n;
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random direction orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_direction<R: Rng + ?Sized>(rng: &mut R, d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut v = gaussian_vec(rng, d);
    for _ in 0..2 {
        for b in basis {
            let p = dot64(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    unit(&mut v);
    v
}

fn to_f32_unit(v: &[f64]) -> Vec<f32> {
    let n = libm::sqrt(dot64(v, v));
    v.iter().map(|x| (x / n) as f32).collect()
}

/// `n` isotropic random unit vectors in `d` dimensions.
pub fn random_unit_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend(to_f32_unit(&gaussian_vec(&mut rng, d)));
    }
    FeatureMatrix::new(d, data).expect("positive dimension")
}

/// Members of one group: `a·center + b·u_i` with the `u_i` orthonormal and
/// orthogonal to the center, so every within-group cosine equals `a²`.
fn group_members<R: Rng + ?Sized>(rng: &mut R, d: usize, size: usize, sim: f64) -> Vec<Vec<f32>> {
    let mut center = gaussian_vec(rng, d);
    unit(&mut center);
    let a = libm::sqrt(sim);
    let b = libm::sqrt(1.0 - sim);
    let mut basis = alloc::vec![center.clone()];
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let u = orthogonal_direction(rng, d, &basis);
        let member: Vec<f64> = center.iter().zip(&u).map(|(c, x)| a * c + b * x).collect();
        basis.push(u);
        out.push(to_f32_unit(&member));
    }
    out
}

/// Corpus of equally sized groups with a designed within-group similarity.
#[derive(Debug, Clone)]
pub struct PlantedGroups {
    pub matrix: FeatureMatrix,
    pub records: Vec<ObjectRecord>,
    /// Group index of each row.
    pub group_of: Vec<usize>,
    /// Designed within-group cosine per group.
    pub group_sim: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub groups: usize,
    pub group_size: usize,
    pub dim: usize,
    /// Fraction of groups whose within-group similarity lies in `in_band`;
    /// the rest are near-duplicate groups drawn from `duplicate`.
    pub in_band_fraction: f64,
    pub in_band: (f64, f64),
    pub duplicate: (f64, f64),
    pub seed: u64,
}

impl Default for GroupSpec {
    fn default() -> Self {
        Self {
            groups: 1000,
            group_size: 4,
            dim: 256,
            in_band_fraction: 0.75,
            in_band: (0.95, 0.97),
            duplicate: (0.98, 0.995),
            seed: 0,
        }
    }
}

impl GroupSpec {
    /// Number of groups designed to sit inside the band.
    pub fn in_band_groups(&self) -> usize {
        libm::round(self.groups as f64 * self.in_band_fraction) as usize
    }
}

/// Builds the planted-groups corpus. Rows are shuffled so group members are
/// not adjacent; every object gets its own source image.
pub fn planted_groups(spec: &GroupSpec) -> PlantedGroups {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_band = spec.in_band_groups();
    let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(spec.groups * spec.group_size);
    let mut group_sim = Vec::with_capacity(spec.groups);
    for g in 0..spec.groups {
        let (lo, hi) = if g < n_band { spec.in_band } else { spec.duplicate };
        let sim = rng.random_range(lo..=hi);
        group_sim.push(sim as f32);
        for m in group_members(&mut rng, spec.dim, spec.group_size, sim) {
            rows.push((g, m));
        }
    }
    // Fisher–Yates so ids do not encode group membership.
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    let group_of = rows.iter().map(|(g, _)| *g).collect();
    let vectors: Vec<&[f32]> = rows.iter().map(|(_, v)| v.as_slice()).collect();
    let matrix = FeatureMatrix::from_rows(spec.dim, &vectors).expect("consistent rows");
    let records = synthetic_records(matrix.len(), &["mug", "shoe", "lamp", "chair"], spec.seed);
    PlantedGroups {
        matrix,
        records,
        group_of,
        group_sim,
    }
}

/// Corpus of `n` objects where a fraction are paired with exactly one partner
/// at cosine `pair_sim`; the rest are isotropic singletons.
#[derive(Debug, Clone)]
pub struct PlantedPairs {
    pub matrix: FeatureMatrix,
    pub records: Vec<ObjectRecord>,
    /// Partner row of each row, if any.
    pub partner: Vec<Option<usize>>,
}

pub fn planted_pairs(n: usize, paired_fraction: f64, pair_sim: f64, dim: usize, seed: u64) -> PlantedPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pairs = (libm::floor(n as f64 * paired_fraction) as usize) / 2;
    let mut rows: Vec<(Option<usize>, Vec<f32>)> = Vec::with_capacity(n);
    for p in 0..n_pairs {
        for m in group_members(&mut rng, dim, 2, pair_sim) {
            rows.push((Some(p), m));
        }
    }
    while rows.len() < n {
        rows.push((None, to_f32_unit(&gaussian_vec(&mut rng, dim))));
    }
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    let mut first_seen: Vec<Option<usize>> = alloc::vec![None; n_pairs];
    let mut partner = alloc::vec![None; n];
    for (row, (pair, _)) in rows.iter().enumerate() {
        if let Some(p) = pair {
            match first_seen[*p] {
                None => first_seen[*p] = Some(row),
                Some(other) => {
                    partner[row] = Some(other);
                    partner[other] = Some(row);
                }
            }
        }
    }
    let vectors: Vec<&[f32]> = rows.iter().map(|(_, v)| v.as_slice()).collect();
    let matrix = FeatureMatrix::from_rows(dim, &vectors).expect("consistent rows");
    let records = synthetic_records(n, &["bottle", "bag"], seed);
    PlantedPairs {
        matrix,
        records,
        partner,
    }
}

/// One record per row: id = row, one image per object, cycling classes.
pub fn synthetic_records(n: usize, classes: &[&str], seed: u64) -> Vec<ObjectRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n)
        .map(|i| ObjectRecord {
            id: i as u64,
            image: format!("images/{:06}.png", i),
            bbox: BBox::new(rng.random_range(0..16), rng.random_range(0..16), 32, 24),
            class_label: String::from(classes[i % classes.len()]),
            det_conf: rng.random_range(0.8f32..=1.0),
            feature_row: i,
        })
        .collect()
}

/// Cosine between two rows of `m`, for checking planted structure.
pub fn row_cosine(m: &FeatureMatrix, a: usize, b: usize) -> f32 {
    dot(m.row(a), m.row(b)) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_similarity_is_as_designed() {
        let spec = GroupSpec {
            groups: 20,
            dim: 64,
            ..GroupSpec::default()
        };
        let c = planted_groups(&spec);
        for a in 0..c.matrix.len() {
            for b in 0..c.matrix.len() {
                if a != b && c.group_of[a] == c.group_of[b] {
                    let want = c.group_sim[c.group_of[a]];
                    assert!((row_cosine(&c.matrix, a, b) - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn pairs_are_symmetric() {
        let c = planted_pairs(1000, 0.4, 0.95, 32, 1);
        let mut paired = 0;
        for (i, p) in c.partner.iter().enumerate() {
            if let Some(j) = p {
                paired += 1;
                assert_eq!(c.partner[*j], Some(i));
                assert!((row_cosine(&c.matrix, i, *j) - 0.95).abs() < 1e-5);
            }
        }
        assert_eq!(paired, 400);
    }
}
