//! Training-example assembly and the 2×2 grid conditioning layout.
//!
//! An example pairs a target object with the three most similar eligible
//! neighbors from the graph as its reference views. At training time the
//! target tile sits in the top-left quadrant of a 1024×1024 canvas, the
//! references fill the other three, and the loss covers the target quadrant
//! only. Insertion examples also carry a background plane and a bounding-box
//! mask plane, both populated only in the top-left quadrant and stacked
//! along the channel axis after the noisy canvas.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BBox, ObjectRecord};
use crate::graph::{KnnGraph, SimilarityBand};
use crate::image::RgbImage;

pub const TILE: u32 = 512;
pub const CANVAS: u32 = 1024;
pub const NUM_REFERENCES: usize = 3;

pub const TRAIN_STEPS: u64 = 100_000;
pub const BATCH_SIZE: u32 = 128;
pub const REF_DROPOUT: f64 = 0.10;
pub const TEXT_DROPOUT: f64 = 0.10;
pub const INSERTION_GAMMA_IMAGE: f64 = 2.0;
pub const SUBJECT_GAMMA_IMAGE: f64 = 1.5;
pub const SUBJECT_GAMMA_TEXT: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Insertion,
    SubjectGen,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Insertion => "insertion",
            Task::SubjectGen => "subject_gen",
        }
    }
}

/// What the model is told about the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneDescription {
    Insertion {
        /// Object-free version of the target image.
        background: Option<String>,
        position_mask_bbox: BBox,
    },
    SubjectGen {
        caption: Option<String>,
    },
}

impl SceneDescription {
    pub fn task(&self) -> Task {
        match self {
            SceneDescription::Insertion { .. } => Task::Insertion,
            SceneDescription::SubjectGen { .. } => Task::SubjectGen,
        }
    }

    pub fn is_complete(&self) -> bool {
        match self {
            SceneDescription::Insertion { background, .. } => background.is_some(),
            SceneDescription::SubjectGen { caption } => caption.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub target: u64,
    pub references: [u64; NUM_REFERENCES],
    pub similarities: [f32; NUM_REFERENCES],
    pub scene: SceneDescription,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assembly {
    pub examples: Vec<TrainingExample>,
    /// Objects with fewer than three eligible neighbors.
    pub skipped: usize,
}

/// One example per object with at least three eligible neighbors, in target
/// id order. A neighbor is eligible when it is a known object other than
/// the target, from a different source image, with similarity in the band.
pub fn assemble_examples(graph: &KnnGraph, records: &[ObjectRecord], task: Task) -> Assembly {
    let by_id: BTreeMap<u64, &ObjectRecord> = records.iter().map(|r| (r.id, r)).collect();
    let mut out = Assembly::default();
    let mut sorted: Vec<&ObjectRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    for target in sorted {
        let eligible: Vec<_> = graph
            .neighbors(target.id)
            .iter()
            .filter(|e| {
                e.id != target.id
                    && graph.band.contains(e.similarity)
                    && by_id.get(&e.id).is_some_and(|r| r.image != target.image)
            })
            .take(NUM_REFERENCES)
            .collect();
        if eligible.len() < NUM_REFERENCES {
            out.skipped += 1;
            continue;
        }
        let scene = match task {
            Task::Insertion => SceneDescription::Insertion {
                background: None,
                position_mask_bbox: target.bbox,
            },
            Task::SubjectGen => SceneDescription::SubjectGen { caption: None },
        };
        out.examples.push(TrainingExample {
            target: target.id,
            references: [eligible[0].id, eligible[1].id, eligible[2].id],
            similarities: [eligible[0].similarity, eligible[1].similarity, eligible[2].similarity],
            scene,
        });
    }
    out
}

/// Checks one example against the records and band it was built from.
pub fn validate_example(ex: &TrainingExample, by_id: &BTreeMap<u64, &ObjectRecord>, band: &SimilarityBand) -> Result<()> {
    let target = by_id
        .get(&ex.target)
        .ok_or_else(|| Error::invalid(format!("example target {} unknown", ex.target)))?;
    for (i, r) in ex.references.iter().enumerate() {
        if *r == ex.target {
            return Err(Error::invalid(format!("example {} references itself", ex.target)));
        }
        if ex.references[..i].contains(r) {
            return Err(Error::invalid(format!("example {} repeats reference {}", ex.target, r)));
        }
        let rec = by_id
            .get(r)
            .ok_or_else(|| Error::invalid(format!("example {} reference {} unknown", ex.target, r)))?;
        if rec.image == target.image {
            return Err(Error::invalid(format!(
                "example {} reference {} shares its source image",
                ex.target, r
            )));
        }
        if !band.contains(ex.similarities[i]) {
            return Err(Error::invalid(format!(
                "example {} reference {} similarity {} outside band",
                ex.target, r, ex.similarities[i]
            )));
        }
    }
    if let SceneDescription::Insertion { position_mask_bbox, .. } = &ex.scene {
        if *position_mask_bbox != target.bbox {
            return Err(Error::invalid(format!("example {} mask bbox differs from target", ex.target)));
        }
    }
    Ok(())
}

/// Sets the background of an insertion example. The background must have the
/// target image's dimensions.
pub fn attach_background(
    mut ex: TrainingExample,
    background_ref: String,
    background_size: (u32, u32),
    target_size: (u32, u32),
    target_bbox: BBox,
) -> Result<TrainingExample> {
    if background_size != target_size {
        return Err(Error::invalid(format!(
            "background is {}x{} but target image is {}x{}",
            background_size.0, background_size.1, target_size.0, target_size.1
        )));
    }
    match &mut ex.scene {
        SceneDescription::Insertion {
            background,
            position_mask_bbox,
        } => {
            *background = Some(background_ref);
            *position_mask_bbox = target_bbox;
            Ok(ex)
        }
        SceneDescription::SubjectGen { .. } => Err(Error::invalid(format!(
            "example {} is a subject generation example; backgrounds apply to insertion",
            ex.target
        ))),
    }
}

pub fn attach_caption(mut ex: TrainingExample, text: &str) -> Result<TrainingExample> {
    if text.trim().is_empty() {
        return Err(Error::invalid(format!("example {}: empty caption", ex.target)));
    }
    match &mut ex.scene {
        SceneDescription::SubjectGen { caption } => {
            *caption = Some(String::from(text));
            Ok(ex)
        }
        SceneDescription::Insertion { .. } => Err(Error::invalid(format!(
            "example {} is an insertion example; captions apply to subject generation",
            ex.target
        ))),
    }
}

/// Quadrants of the training canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Target,
    Ref1,
    Ref2,
    Ref3,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Target, Slot::Ref1, Slot::Ref2, Slot::Ref3];

    /// `(x, y)` of the tile's top-left corner on the canvas.
    pub fn origin(&self) -> (u32, u32) {
        match self {
            Slot::Target => (0, 0),
            Slot::Ref1 => (TILE, 0),
            Slot::Ref2 => (0, TILE),
            Slot::Ref3 => (TILE, TILE),
        }
    }

    pub fn bbox(&self) -> BBox {
        let (x, y) = self.origin();
        BBox::new(x, y, TILE, TILE)
    }
}

/// Binary 1024×1024 map, one on the target quadrant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossMask {
    bits: Vec<u8>,
}

impl LossMask {
    pub fn target_quadrant() -> Self {
        let mut bits = vec![0u8; (CANVAS * CANVAS) as usize];
        for row in 0..TILE as usize {
            let start = row * CANVAS as usize;
            bits[start..start + TILE as usize].fill(1);
        }
        Self { bits }
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.bits[(row * CANVAS + col) as usize] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }
}

/// Lays the target and three references out on one canvas. Every input must
/// already be a 512×512 tile.
pub fn compose_grid(target: &RgbImage, refs: &[RgbImage]) -> Result<(RgbImage, LossMask)> {
    if refs.len() != NUM_REFERENCES {
        return Err(Error::invalid(format!(
            "grid needs {} references, got {}",
            NUM_REFERENCES,
            refs.len()
        )));
    }
    let mut canvas = RgbImage::new(CANVAS, CANVAS);
    for (slot, tile) in Slot::ALL.iter().zip(core::iter::once(target).chain(refs)) {
        if tile.dimensions() != (TILE, TILE) {
            return Err(Error::invalid(format!(
                "grid tiles must be {}x{}, got {}x{}",
                TILE,
                TILE,
                tile.width(),
                tile.height()
            )));
        }
        let (x, y) = slot.origin();
        canvas.blit(tile, x, y)?;
    }
    Ok((canvas, LossMask::target_quadrant()))
}

pub fn extract_quadrant(canvas: &RgbImage, slot: Slot) -> Result<RgbImage> {
    canvas.crop(slot.bbox())
}

/// Aspect-preserving fit of a `width`×`height` image into a square tile:
/// pad the short side symmetrically to a square, then scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub side: u32,
    pub pad_x: u32,
    pub pad_y: u32,
    pub tile: u32,
}

impl Letterbox {
    pub fn new(width: u32, height: u32, tile: u32) -> Self {
        let side = width.max(height);
        Self {
            side,
            pad_x: (side - width) / 2,
            pad_y: (side - height) / 2,
            tile,
        }
    }

    pub fn scale(&self) -> f64 {
        self.tile as f64 / self.side as f64
    }

    /// Box in source pixels mapped to tile pixels (outward rounding).
    pub fn map_bbox(&self, b: BBox) -> BBox {
        let s = self.scale();
        let x0 = libm::floor((b.x + self.pad_x) as f64 * s) as u32;
        let y0 = libm::floor((b.y + self.pad_y) as f64 * s) as u32;
        let x1 = (libm::ceil((b.x + self.pad_x + b.w) as f64 * s) as u32).min(self.tile);
        let y1 = (libm::ceil((b.y + self.pad_y + b.h) as f64 * s) as u32).min(self.tile);
        BBox::new(x0, y0, x1.saturating_sub(x0).max(1), y1.saturating_sub(y0).max(1))
    }
}

/// Dense `width`×`height`×`channels` float plane, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: u32, height: u32, channels: u32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; (width * height * channels) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32, c: u32) -> f32 {
        self.data[((y * self.width + x) * self.channels + c) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: u32, v: f32) {
        self.data[((y * self.width + x) * self.channels + c) as usize] = v;
    }

    /// Canvas-sized plane holding `tile` in the top-left quadrant, zeros elsewhere.
    pub fn embed_top_left(tile: &Plane) -> Result<Plane> {
        if (tile.width, tile.height) != (TILE, TILE) {
            return Err(Error::invalid(format!(
                "tile must be {}x{}, got {}x{}",
                TILE, TILE, tile.width, tile.height
            )));
        }
        let mut out = Plane::zeros(CANVAS, CANVAS, tile.channels);
        let row = (TILE * tile.channels) as usize;
        for y in 0..TILE as usize {
            let s = y * row;
            let d = y * (CANVAS * tile.channels) as usize;
            out.data[d..d + row].copy_from_slice(&tile.data[s..s + row]);
        }
        Ok(out)
    }

    /// Filled-rectangle position mask: one channel, ones inside `bbox`
    /// (tile coordinates), placed in the top-left quadrant of the canvas.
    pub fn bbox_mask(bbox: BBox) -> Result<Plane> {
        if !bbox.fits_within(TILE, TILE) {
            return Err(Error::invalid("mask bbox must lie inside the tile"));
        }
        let mut out = Plane::zeros(CANVAS, CANVAS, 1);
        for y in bbox.y..bbox.y + bbox.h {
            for x in bbox.x..bbox.x + bbox.w {
                out.set(x, y, 0, 1.0);
            }
        }
        Ok(out)
    }

    fn first_nonzero_outside_top_left(&self) -> Option<(u32, u32)> {
        for y in 0..self.height {
            for x in 0..self.width {
                if x < TILE && y < TILE {
                    continue;
                }
                if (0..self.channels).any(|c| self.get(x, y, c) != 0.0) {
                    return Some((x, y));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Noisy,
    Background,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelGroup {
    pub role: ChannelRole,
    pub offset: u32,
    pub channels: u32,
}

/// Channel-concatenated model input for insertion, described by its groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStack {
    pub width: u32,
    pub height: u32,
    pub total_channels: u32,
    pub groups: Vec<ChannelGroup>,
}

/// Stacks `(noisy, background, mask)` along the channel axis after checking
/// that the background and mask planes are zero outside the target quadrant.
pub fn insertion_channels(noisy: &Plane, background: &Plane, mask: &Plane) -> Result<ChannelStack> {
    for (name, p) in [("noisy", noisy), ("background", background), ("mask", mask)] {
        if (p.width, p.height) != (CANVAS, CANVAS) {
            return Err(Error::invalid(format!(
                "{} plane must be {}x{}, got {}x{}",
                name, CANVAS, CANVAS, p.width, p.height
            )));
        }
    }
    if mask.channels != 1 {
        return Err(Error::invalid(format!("mask plane must have 1 channel, got {}", mask.channels)));
    }
    for (name, p) in [("background", background), ("mask", mask)] {
        if let Some((x, y)) = p.first_nonzero_outside_top_left() {
            return Err(Error::invalid(format!(
                "{} plane has a nonzero value at ({}, {}) outside the top-left quadrant",
                name, x, y
            )));
        }
    }
    let mut groups = Vec::with_capacity(3);
    let mut offset = 0;
    for (role, p) in [
        (ChannelRole::Noisy, noisy),
        (ChannelRole::Background, background),
        (ChannelRole::Mask, mask),
    ] {
        groups.push(ChannelGroup {
            role,
            offset,
            channels: p.channels,
        });
        offset += p.channels;
    }
    Ok(ChannelStack {
        width: CANVAS,
        height: CANVAS,
        total_channels: offset,
        groups,
    })
}

/// Hyperparameters handed to the external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub task: Task,
    pub steps: u64,
    pub batch_size: u32,
    pub ref_dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_dropout: Option<f64>,
    pub gamma_image: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_text: Option<f64>,
    pub band: SimilarityBand,
    pub k_max: usize,
    pub seed: u64,
    pub tile: u32,
    pub canvas: u32,
}

impl TrainingManifest {
    pub fn for_task(task: Task, band: SimilarityBand, k_max: usize, seed: u64) -> Self {
        let (text_dropout, gamma_image, gamma_text) = match task {
            Task::Insertion => (None, INSERTION_GAMMA_IMAGE, None),
            Task::SubjectGen => (Some(TEXT_DROPOUT), SUBJECT_GAMMA_IMAGE, Some(SUBJECT_GAMMA_TEXT)),
        };
        Self {
            task,
            steps: TRAIN_STEPS,
            batch_size: BATCH_SIZE,
            ref_dropout: REF_DROPOUT,
            text_dropout,
            gamma_image,
            gamma_text,
            band,
            k_max,
            seed,
            tile: TILE,
            canvas: CANVAS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [Some(self.ref_dropout), self.text_dropout];
        if rates.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("dropout rates must lie in [0, 1]"));
        }
        if self.task == Task::SubjectGen && self.ref_dropout + self.text_dropout.unwrap_or(0.0) > 1.0 {
            return Err(Error::config("dropout buckets must be disjoint (rates sum to at most 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn rec(id: u64, image: &str) -> ObjectRecord {
        ObjectRecord {
            id,
            image: String::from(image),
            bbox: BBox::new(1, 2, 3, 4),
            class_label: String::from("mug"),
            det_conf: 0.9,
            feature_row: id as usize,
        }
    }

    fn graph_with(id: u64, sims: &[f32]) -> KnnGraph {
        let mut g = KnnGraph::new(SimilarityBand::default(), 5);
        g.insert(
            id,
            sims.iter()
                .enumerate()
                .map(|(i, &s)| Edge {
                    id: id + 1 + i as u64,
                    similarity: s,
                })
                .collect(),
        );
        g
    }

    fn records(n: u64) -> Vec<ObjectRecord> {
        (0..n).map(|i| rec(i, &format!("img{}", i))).collect()
    }

    #[test]
    fn top_three_become_references() {
        let g = graph_with(0, &[0.96, 0.95, 0.94, 0.935]);
        let a = assemble_examples(&g, &records(5), Task::Insertion);
        assert_eq!(a.examples.len(), 1);
        assert_eq!(a.examples[0].references, [1, 2, 3]);
        assert_eq!(a.examples[0].similarities, [0.96, 0.95, 0.94]);
        assert_eq!(a.skipped, 4);
    }

    #[test]
    fn two_neighbors_are_skipped() {
        let g = graph_with(0, &[0.96, 0.95]);
        let a = assemble_examples(&g, &records(3), Task::SubjectGen);
        assert!(a.examples.is_empty());
        assert_eq!(a.skipped, 3);
    }

    #[test]
    fn same_image_neighbor_is_not_eligible() {
        let g = graph_with(0, &[0.96, 0.95, 0.94]);
        let mut recs = records(4);
        recs[2].image = recs[0].image.clone();
        let a = assemble_examples(&g, &recs, Task::Insertion);
        assert!(a.examples.is_empty());
    }

    #[test]
    fn background_and_caption_plumbing() {
        let recs = records(4);
        let g = graph_with(0, &[0.96, 0.95, 0.94]);
        let ins = assemble_examples(&g, &recs, Task::Insertion).examples.remove(0);
        let done = attach_background(ins.clone(), String::from("bg/0.png"), (64, 48), (64, 48), recs[0].bbox).unwrap();
        assert!(done.scene.is_complete());
        match &done.scene {
            SceneDescription::Insertion { position_mask_bbox, .. } => assert_eq!(*position_mask_bbox, recs[0].bbox),
            _ => unreachable!(),
        }
        let err = attach_background(ins.clone(), String::from("bg/0.png"), (64, 40), (64, 48), recs[0].bbox).unwrap_err();
        let msg = format!("{}", err);
        assert!(msg.contains("64x40") && msg.contains("64x48"));
        assert!(attach_caption(ins, "a mug").is_err());

        let sub = assemble_examples(&g, &recs, Task::SubjectGen).examples.remove(0);
        let cap = attach_caption(sub.clone(), "a mug on a desk").unwrap();
        assert_eq!(cap.scene, SceneDescription::SubjectGen { caption: Some(String::from("a mug on a desk")) });
        assert!(attach_caption(sub, "").is_err());
    }

    #[test]
    fn grid_round_trip_and_layout() {
        let colors = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [9, 9, 9]];
        let tiles: Vec<RgbImage> = colors.iter().map(|&c| RgbImage::filled(TILE, TILE, c)).collect();
        let (canvas, mask) = compose_grid(&tiles[0], &tiles[1..]).unwrap();
        for (slot, tile) in Slot::ALL.iter().zip(&tiles) {
            assert_eq!(&extract_quadrant(&canvas, *slot).unwrap(), tile);
        }
        assert_eq!(canvas.pixel(0, 0), colors[0]);
        // ref1 (0,0) lands at row 0, column 512
        assert_eq!(canvas.pixel(512, 0), colors[1]);
        assert_eq!(mask.count_ones(), 262_144);
        assert!(mask.get(511, 511) && !mask.get(511, 512) && !mask.get(512, 0));
    }

    #[test]
    fn grid_errors() {
        let t = RgbImage::new(TILE, TILE);
        assert!(compose_grid(&t, &[t.clone(), t.clone()]).is_err());
        assert!(compose_grid(&t, &[t.clone(), t.clone(), RgbImage::new(10, 10)]).is_err());
    }

    #[test]
    fn insertion_channel_contract() {
        let noisy = Plane::zeros(CANVAS, CANVAS, 4);
        let bg = Plane::embed_top_left(&Plane::zeros(TILE, TILE, 4)).unwrap();
        let mask = Plane::bbox_mask(BBox::new(10, 10, 20, 20)).unwrap();
        let stack = insertion_channels(&noisy, &bg, &mask).unwrap();
        assert_eq!(stack.total_channels, 4 + 4 + 1);
        assert_eq!(
            stack.groups.iter().map(|g| g.role).collect::<Vec<_>>(),
            vec![ChannelRole::Noisy, ChannelRole::Background, ChannelRole::Mask]
        );
        let mut bad = bg.clone();
        bad.set(600, 600, 0, 1.0);
        let err = insertion_channels(&noisy, &bad, &mask).unwrap_err();
        assert!(format!("{}", err).contains("(600, 600)"));
    }

    #[test]
    fn letterbox_geometry() {
        let lb = Letterbox::new(200, 100, 512);
        assert_eq!((lb.side, lb.pad_x, lb.pad_y), (200, 0, 50));
        assert_eq!(lb.map_bbox(BBox::new(0, 0, 200, 100)), BBox::new(0, 128, 512, 256));
    }

    #[test]
    fn manifest_defaults() {
        let m = TrainingManifest::for_task(Task::Insertion, SimilarityBand::default(), 5, 0);
        assert_eq!((m.gamma_image, m.gamma_text), (2.0, None));
        assert_eq!((m.steps, m.batch_size), (100_000, 128));
        let s = TrainingManifest::for_task(Task::SubjectGen, SimilarityBand::default(), 5, 0);
        assert_eq!((s.gamma_image, s.gamma_text), (1.5, Some(7.5)));
        assert_eq!((s.ref_dropout, s.text_dropout), (0.1, Some(0.1)));
        s.validate().unwrap();
    }
}
