//! Evaluation inputs on disk: embedding sets with id maps, preference
//! triplets and benchmark quadruplets.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use forge_core::eval::{
    benchmark_report, expand_quadruplets, identity_score, metric_agreement, AgreementTriplet, BenchmarkQuadruplet,
    BenchmarkReport, BenchmarkSample, Choice, IdentityScore, SampleEmbeddings,
};
use forge_core::features::normalize;
use forge_core::FeatureMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::fsutil;
use crate::store::{load_features, write_features};

/// Embeddings keyed by string id. Rows are normalized on load.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub name: String,
    pub ids: Vec<String>,
    pub matrix: FeatureMatrix,
    by_id: HashMap<String, usize>,
}

/// `emb.bin` pairs with `emb.ids`, one id per line in row order.
pub fn ids_path(features: &Path) -> PathBuf {
    features.with_extension("ids")
}

impl EmbeddingSet {
    pub fn new(name: impl Into<String>, ids: Vec<String>, matrix: FeatureMatrix) -> Result<Self> {
        let name = name.into();
        if ids.len() != matrix.len() {
            return Err(ForgeError::validation(format!(
                "embedding set {}: {} ids for {} rows",
                name,
                ids.len(),
                matrix.len()
            )));
        }
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if by_id.insert(id.clone(), i).is_some() {
                return Err(ForgeError::validation(format!("embedding set {}: duplicate id {}", name, id)));
            }
        }
        let matrix = normalize(&matrix).map_err(|e| ForgeError::validation(format!("embedding set {}: {}", name, e)))?;
        Ok(Self { name, ids, matrix, by_id })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let matrix = load_features(path)?;
        let ids_file = ids_path(path);
        let ids: Vec<String> = fsutil::read_to_string(&ids_file)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::new(name, ids, matrix)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_features(path, &self.matrix)?;
        let mut text = self.ids.join("\n");
        text.push('\n');
        fsutil::write_bytes(&ids_path(path), text.as_bytes())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.by_id.get(id).map(|&i| self.matrix.row(i))
    }

    pub fn require(&self, id: &str) -> Result<&[f32]> {
        self.get(id)
            .ok_or_else(|| ForgeError::validation(format!("embedding set {} has no id {}", self.name, id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityPair {
    pub generated: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub metric: String,
    pub scores: Vec<IdentityScore>,
    pub mean: f64,
}

pub fn identity_report(set: &EmbeddingSet, pairs: &[IdentityPair]) -> Result<IdentityReport> {
    if pairs.is_empty() {
        return Err(ForgeError::validation("no identity pairs"));
    }
    let scores = pairs
        .iter()
        .map(|p| Ok(identity_score(set.require(&p.generated)?, set.require(&p.reference)?, &p.generated, &p.reference)?))
        .collect::<Result<Vec<_>>>()?;
    let mean = scores.iter().map(|s| s.value as f64).sum::<f64>() / scores.len() as f64;
    Ok(IdentityReport {
        metric: set.name.clone(),
        scores,
        mean,
    })
}

/// One line of `triplets.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletLine {
    pub reference: String,
    pub gen1: String,
    pub gen2: String,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAgreement {
    pub metric: String,
    pub agreement: f64,
    pub triplets: usize,
}

/// Agreement of each embedding set with the user choices, best first.
pub fn agreement_report(sets: &[EmbeddingSet], triplets: &[TripletLine]) -> Result<Vec<MetricAgreement>> {
    let mut out = sets
        .iter()
        .map(|set| {
            let ts = triplets
                .iter()
                .map(|t| {
                    Ok(AgreementTriplet {
                        reference: set.require(&t.reference)?,
                        gen1: set.require(&t.gen1)?,
                        gen2: set.require(&t.gen2)?,
                        choice: t.choice,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricAgreement {
                metric: set.name.clone(),
                agreement: metric_agreement(&ts)?,
                triplets: ts.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.agreement.total_cmp(&a.agreement).then_with(|| a.metric.cmp(&b.metric)));
    Ok(out)
}

/// Id under which a sample's generated image is embedded.
pub fn output_id(sample: &BenchmarkSample) -> String {
    format!("outputs/{}.png", sample.sample_id)
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkSample>> {
    let quads: Vec<BenchmarkQuadruplet> = fsutil::read_jsonl(path)?;
    Ok(expand_quadruplets(&quads)?)
}

/// Generated outputs are looked up as `outputs/<sample_id>.png`, ground
/// truths by their capture image path. A generated image missing from the
/// identity set counts as a detection failure.
pub fn run_benchmark(samples: &[BenchmarkSample], semantic: &EmbeddingSet, identity: &EmbeddingSet) -> Result<BenchmarkReport> {
    let ids: Vec<String> = samples.iter().map(output_id).collect();
    let emb = samples
        .iter()
        .zip(&ids)
        .map(|(s, out)| {
            Ok(SampleEmbeddings {
                gen_semantic: Some(semantic.require(out)?),
                gt_semantic: semantic.require(&s.ground_truth.image)?,
                gen_identity: identity.get(out),
                gt_identity: identity.require(&s.ground_truth.image)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(benchmark_report(samples, &emb)?)
}
