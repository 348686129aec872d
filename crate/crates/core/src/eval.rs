//! Evaluation protocol: identity scores from instance-retrieval embeddings,
//! agreement of a metric with human preferences, and the quadruplet
//! insertion benchmark.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityScore {
    pub value: f32,
    pub generated: String,
    pub reference: String,
}

/// Cosine of the two crop embeddings, tagged with where each crop came from.
pub fn identity_score(gen: &[f32], reference: &[f32], generated: &str, reference_ref: &str) -> Result<IdentityScore> {
    Ok(IdentityScore {
        value: cosine(gen, reference)?,
        generated: String::from(generated),
        reference: String::from(reference_ref),
    })
}

/// Which of two generations a user judged to preserve identity better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Choice {
    First,
    Second,
}

impl TryFrom<u8> for Choice {
    type Error = String;
    fn try_from(v: u8) -> core::result::Result<Self, String> {
        match v {
            1 => Ok(Choice::First),
            2 => Ok(Choice::Second),
            other => Err(format!("user choice must be 1 or 2, got {}", other)),
        }
    }
}

impl From<Choice> for u8 {
    fn from(c: Choice) -> u8 {
        match c {
            Choice::First => 1,
            Choice::Second => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AgreementTriplet<'a> {
    pub reference: &'a [f32],
    pub gen1: &'a [f32],
    pub gen2: &'a [f32],
    pub choice: Choice,
}

/// Score of one triplet: 1 if the metric prefers what the user chose, 0 if
/// not, 0.5 on an exact tie.
pub fn triplet_agreement(t: &AgreementTriplet<'_>) -> Result<f64> {
    let c1 = cosine(t.reference, t.gen1)?;
    let c2 = cosine(t.reference, t.gen2)?;
    if c1 == c2 {
        return Ok(0.5);
    }
    let metric = if c1 > c2 { Choice::First } else { Choice::Second };
    Ok(if metric == t.choice { 1.0 } else { 0.0 })
}

/// Fraction of triplets where the metric agrees with the user.
pub fn metric_agreement(triplets: &[AgreementTriplet<'_>]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::invalid("agreement needs at least one triplet"));
    }
    let mut total = 0.0;
    for t in triplets {
        total += triplet_agreement(t)?;
    }
    Ok(total / triplets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capture {
    /// Photo with the object.
    pub image: String,
    /// Same view without the object.
    pub background: String,
}

/// One object photographed in four scenes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkQuadruplet {
    pub object_id: String,
    pub captures: Vec<Capture>,
}

pub const CAPTURES_PER_OBJECT: usize = 4;
pub const BENCHMARK_OBJECTS: usize = 34;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub sample_id: String,
    pub object_id: String,
    pub ground_truth: Capture,
    /// Scene description: the ground truth's background.
    pub scene: String,
    pub references: [Capture; 3],
}

/// Each capture in turn becomes ground truth, with the other three as
/// references.
pub fn expand_quadruplets(quads: &[BenchmarkQuadruplet]) -> Result<Vec<BenchmarkSample>> {
    let mut out = Vec::with_capacity(quads.len() * CAPTURES_PER_OBJECT);
    for q in quads {
        if q.captures.len() != CAPTURES_PER_OBJECT {
            return Err(Error::invalid(format!(
                "object {} has {} captures, expected {}",
                q.object_id,
                q.captures.len(),
                CAPTURES_PER_OBJECT
            )));
        }
        for gt in 0..CAPTURES_PER_OBJECT {
            let mut refs = q.captures.iter().enumerate().filter(|(i, _)| *i != gt).map(|(_, c)| c.clone());
            let references = [refs.next().unwrap(), refs.next().unwrap(), refs.next().unwrap()];
            out.push(BenchmarkSample {
                sample_id: format!("{}_{}", q.object_id, gt),
                object_id: q.object_id.clone(),
                ground_truth: q.captures[gt].clone(),
                scene: q.captures[gt].background.clone(),
                references,
            });
        }
    }
    Ok(out)
}

/// Embeddings for one benchmark sample. A missing generated IR embedding
/// means the object was not detected in the output.
#[derive(Debug, Clone, Copy)]
pub struct SampleEmbeddings<'a> {
    pub gen_semantic: Option<&'a [f32]>,
    pub gt_semantic: &'a [f32],
    pub gen_identity: Option<&'a [f32]>,
    pub gt_identity: &'a [f32],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    /// Semantic similarity of output and ground truth.
    pub composition: f32,
    /// Identity similarity of the object crops; `None` when detection failed.
    pub identity: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub samples: Vec<SampleScore>,
    pub mean_composition: f64,
    /// Mean over samples with an identity score.
    pub mean_identity: Option<f64>,
    pub identity_failures: usize,
}

pub fn benchmark_report(samples: &[BenchmarkSample], embeddings: &[SampleEmbeddings<'_>]) -> Result<BenchmarkReport> {
    if samples.len() != embeddings.len() {
        return Err(Error::CountMismatch {
            expected: samples.len(),
            actual: embeddings.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::invalid("benchmark needs at least one sample"));
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut comp_sum = 0.0;
    let mut id_sum = 0.0;
    let mut id_n = 0usize;
    for (s, e) in samples.iter().zip(embeddings) {
        let gen = e
            .gen_semantic
            .ok_or_else(|| Error::invalid(format!("missing output for sample {}", s.sample_id)))?;
        let composition = cosine(gen, e.gt_semantic)?;
        let identity = match e.gen_identity {
            Some(g) => Some(identity_score(g, e.gt_identity, &s.sample_id, &s.ground_truth.image)?.value),
            None => None,
        };
        comp_sum += composition as f64;
        if let Some(v) = identity {
            id_sum += v as f64;
            id_n += 1;
        }
        scores.push(SampleScore {
            sample_id: s.sample_id.clone(),
            composition,
            identity,
        });
    }
    Ok(BenchmarkReport {
        mean_composition: comp_sum / samples.len() as f64,
        mean_identity: (id_n > 0).then(|| id_sum / id_n as f64),
        identity_failures: samples.len() - id_n,
        samples: scores,
    })
}
