//! Classifier-free guidance combinators and condition-dropout plans.
//!
//! Denoiser outputs are flat `f32` vectors. Combinations are evaluated per
//! element in `f64` and rounded once, so the degenerate scales reproduce
//! their inputs bit-for-bit (γ = 1 gives the conditional output, γ = 0 the
//! unconditional one).

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::{Error, Result};

pub type DenoiserOutput = Vec<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub gamma_image: f64,
    pub gamma_text: Option<f64>,
}

impl GuidanceConfig {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Insertion => Self {
                gamma_image: crate::dataset::INSERTION_GAMMA_IMAGE,
                gamma_text: None,
            },
            Task::SubjectGen => Self {
                gamma_image: crate::dataset::SUBJECT_GAMMA_IMAGE,
                gamma_text: Some(crate::dataset::SUBJECT_GAMMA_TEXT),
            },
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            expected,
            actual: got,
        });
    }
    Ok(())
}

/// `uncond + γ·(cond − uncond)`: reference guidance with the scene kept.
pub fn cfg_single(uncond_ref: &[f32], cond: &[f32], gamma_image: f64) -> Result<DenoiserOutput> {
    check_len(uncond_ref.len(), cond.len())?;
    Ok(uncond_ref
        .iter()
        .zip(cond)
        .map(|(&u, &c)| {
            let u = u as f64;
            (u + gamma_image * (c as f64 - u)) as f32
        })
        .collect())
}

/// `d∅∅ + γ_txt·(d_OS − d_O∅) + γ_I·(d_O∅ − d∅∅)`: separate text and
/// reference guidance.
pub fn cfg_dual(
    uncond: &[f32],
    refs_only: &[f32],
    full: &[f32],
    gamma_text: f64,
    gamma_image: f64,
) -> Result<DenoiserOutput> {
    check_len(uncond.len(), refs_only.len())?;
    check_len(uncond.len(), full.len())?;
    Ok(uncond
        .iter()
        .zip(refs_only)
        .zip(full)
        .map(|((&n, &o), &f)| {
            let (n, o, f) = (n as f64, o as f64, f as f64);
            (n + gamma_text * (f - o) + gamma_image * (o - n)) as f32
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DropFlags {
    pub drop_refs: bool,
    pub drop_text: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutPlan {
    pub task: Task,
    pub rate_refs: f64,
    pub rate_text: f64,
    pub seed: u64,
    pub flags: Vec<DropFlags>,
}

impl DropoutPlan {
    pub fn count_refs(&self) -> usize {
        self.flags.iter().filter(|f| f.drop_refs).count()
    }

    pub fn count_text(&self) -> usize {
        self.flags.iter().filter(|f| f.drop_text).count()
    }
}

/// `⌊rate·n⌋`, tolerant of the rounding in `rate·n` (0.29·100 is 29).
fn bucket_size(rate: f64, n: usize) -> usize {
    libm::floor(rate * n as f64 + 1e-9) as usize
}

/// Disjoint random buckets: `⌊rate_refs·n⌋` examples drop the references
/// and, for subject generation, a further `⌊rate_text·n⌋` drop the prompt.
pub fn dropout_plan(n: usize, rate_refs: f64, rate_text: f64, task: Task, seed: u64) -> Result<DropoutPlan> {
    let text = match task {
        Task::Insertion => 0.0,
        Task::SubjectGen => rate_text,
    };
    for r in [rate_refs, text] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1]", r)));
        }
    }
    if rate_refs + text > 1.0 {
        return Err(Error::config(format!(
            "dropout rates sum to {} > 1",
            rate_refs + text
        )));
    }
    let n_refs = bucket_size(rate_refs, n);
    let n_text = bucket_size(text, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut flags = alloc::vec![DropFlags::default(); n];
    for &i in &order[..n_refs] {
        flags[i].drop_refs = true;
    }
    for &i in &order[n_refs..n_refs + n_text] {
        flags[i].drop_text = true;
    }
    Ok(DropoutPlan {
        task,
        rate_refs,
        rate_text: text,
        seed,
        flags,
    })
}
