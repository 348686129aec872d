//! Synthetic on-disk corpus with planted recurrences: images, objects,
//! features, manifest and scene sidecars.

use std::path::{Path, PathBuf};

use forge_core::image::RgbImage;
use forge_core::synth::{self, GroupSpec};
use forge_core::{FeatureMatrix, ObjectRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::store::{write_features, write_objects, CorpusManifest, DEFAULT_MIN_DET_CONF};
use crate::{fsutil, images};

pub const IMAGE_W: u32 = 64;
pub const IMAGE_H: u32 = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub groups: usize,
    pub group_size: usize,
    pub in_band_fraction: f64,
    /// Unrelated objects with confident detections.
    pub singletons: usize,
    /// Objects below the default confidence cutoff.
    pub low_confidence: usize,
    pub dim: usize,
    pub seed: u64,
    /// Leading object ids whose background and caption are not written.
    pub missing_sidecars: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            groups: 60,
            group_size: 4,
            in_band_fraction: 0.75,
            singletons: 40,
            low_confidence: 10,
            dim: 32,
            seed: 7,
            missing_sidecars: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub manifest_path: PathBuf,
    pub records: Vec<ObjectRecord>,
    /// Planted group of each object, `None` for singletons and low-confidence objects.
    pub group_of: Vec<Option<usize>>,
    pub group_sim: Vec<f32>,
}

fn scene(rng: &mut ChaCha8Rng) -> RgbImage {
    let base = [rng.random_range(0..=120u8), rng.random_range(0..=120u8), rng.random_range(0..=120u8)];
    let mut img = RgbImage::filled(IMAGE_W, IMAGE_H, base);
    for y in 0..IMAGE_H {
        for x in 0..IMAGE_W {
            if (x / 8 + y / 8) % 2 == 0 {
                img.put_pixel(x, y, [base[0] / 2, base[1] / 2, base[2] / 2]);
            }
        }
    }
    img
}

fn paint(img: &mut RgbImage, r: &ObjectRecord, rgb: [u8; 3]) {
    for y in r.bbox.y..r.bbox.y + r.bbox.h {
        for x in r.bbox.x..r.bbox.x + r.bbox.w {
            img.put_pixel(x, y, rgb);
        }
    }
}

pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<Fixture> {
    let planted = synth::planted_groups(&GroupSpec {
        groups: spec.groups,
        group_size: spec.group_size,
        dim: spec.dim,
        in_band_fraction: spec.in_band_fraction,
        seed: spec.seed,
        ..GroupSpec::default()
    });
    let extra = spec.singletons + spec.low_confidence;
    let noise = synth::random_unit_matrix(extra.max(1), spec.dim, spec.seed ^ 0xfeed);
    let n = planted.matrix.len() + extra;
    let mut records = synth::synthetic_records(n, &["mug", "shoe", "lamp", "chair", "bag"], spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for r in records.iter_mut().skip(planted.matrix.len() + spec.singletons) {
        r.det_conf = rng.random_range(0.1f32..0.7);
    }

    let mut data = Vec::with_capacity(n * spec.dim);
    let rows = planted.matrix.rows().chain(noise.rows().take(extra));
    for row in rows {
        let scale: f32 = rng.random_range(0.5..2.0);
        data.extend(row.iter().map(|v| v * scale));
    }
    let matrix = FeatureMatrix::new(spec.dim, data)?;

    let mut group_of: Vec<Option<usize>> = planted.group_of.iter().map(|&g| Some(g)).collect();
    group_of.resize(n, None);
    for (i, r) in records.iter().enumerate() {
        let bg = scene(&mut rng);
        let rgb = match group_of[i] {
            Some(g) => [(g * 37 % 256) as u8 | 0x80, (g * 91 % 256) as u8, (g * 53 % 256) as u8 | 0x40],
            None => [255, 255, rng.random()],
        };
        let mut img = bg.clone();
        paint(&mut img, r, rgb);
        images::save_png(&dir.join(&r.image), &img)?;
        if i >= spec.missing_sidecars {
            images::save_png(&dir.join(format!("backgrounds/{}.png", r.id)), &bg)?;
            fsutil::write_bytes(
                &dir.join(format!("captions/{}.txt", r.id)),
                format!("a {} in scene {}\n", r.class_label, r.id).as_bytes(),
            )?;
        }
    }

    write_objects(&dir.join("objects.jsonl"), &records)?;
    write_features(&dir.join("features.bin"), &matrix)?;
    let manifest_path = dir.join("manifest.json");
    fsutil::write_json(
        &manifest_path,
        &CorpusManifest {
            objects_path: "objects.jsonl".into(),
            features_path: "features.bin".into(),
            dim: spec.dim,
            count: n,
            min_det_conf: DEFAULT_MIN_DET_CONF,
        },
    )?;
    Ok(Fixture {
        manifest_path,
        records,
        group_of,
        group_sim: planted.group_sim,
    })
}
