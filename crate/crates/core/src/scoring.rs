//! Turns region and prompt embeddings into scored HOI triplets.
//!
//! For each candidate pair the union-region embedding is compared against
//! the prompt embedding of every candidate HOI class. Scaled cosine
//! similarities go through a softmax to give a verb distribution, and each
//! (pair, class) becomes one detection scored by
//! `probability * human_score * object_score`.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{text_key, EmbeddingArchive};
use crate::bbox::BoundingBox;
use crate::dataset::{HoiId, HoiTaxonomy};
use crate::error::{Error, Result};
use crate::jsonl::{self, JsonlWriter};
use crate::pairing::{read_pairs, CandidatePair};

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

/// Which classes a pair's softmax runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    /// Classes whose object matches the pair's object category.
    #[default]
    ObjectVerbs,
    /// Every class in the taxonomy (ablation).
    AllClasses,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringParams {
    pub logit_scale: f64,
    pub candidates: CandidateMode,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            logit_scale: DEFAULT_LOGIT_SCALE,
            candidates: CandidateMode::ObjectVerbs,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config(format!(
                "logit scale must be a positive finite number, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }
}

/// What to do when a pair has no region embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerbDistribution {
    pub image_id: String,
    pub pair_index: u32,
    /// Ascending by hoi id.
    pub entries: Vec<(HoiId, f64)>,
}

impl VerbDistribution {
    pub fn argmax(&self) -> Option<HoiId> {
        self.entries
            .iter()
            .fold(None::<(HoiId, f64)>, |best, &(id, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((id, p)),
            })
            .map(|(id, _)| id)
    }
}

/// A scored ⟨human, object, verb⟩ triplet. One line of the detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiDetection {
    pub image_id: String,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub hoi_id: HoiId,
    pub score: f64,
}

impl HoiDetection {
    pub fn validate(&self, taxonomy: Option<&HoiTaxonomy>) -> Result<()> {
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(Error::Validation(format!(
                "detection in image {:?}: score {} outside [0, 1]",
                self.image_id, self.score
            )));
        }
        if let Some(t) = taxonomy {
            if !t.contains(self.hoi_id) {
                return Err(Error::Validation(format!(
                    "detection in image {:?}: unknown hoi_id {}",
                    self.image_id, self.hoi_id
                )));
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inner product accumulated in f64. Equals cosine similarity for unit vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn candidates(pair: &CandidatePair, taxonomy: &HoiTaxonomy, mode: CandidateMode) -> Result<Vec<HoiId>> {
    let ids: Vec<HoiId> = match mode {
        CandidateMode::ObjectVerbs => taxonomy.hois_for_object(pair.object_id).to_vec(),
        CandidateMode::AllClasses => taxonomy.ids().collect(),
    };
    if ids.is_empty() {
        return Err(Error::Taxonomy(format!(
            "pair {}: object_id {} has no HOI classes",
            pair.embedding_key(),
            pair.object_id
        )));
    }
    Ok(ids)
}

pub fn score_pair(
    pair: &CandidatePair,
    image_emb: &[f32],
    text_archive: &EmbeddingArchive,
    taxonomy: &HoiTaxonomy,
    params: &ScoringParams,
) -> Result<VerbDistribution> {
    if image_emb.len() != text_archive.dim() {
        return Err(Error::Consistency(format!(
            "pair {}: embedding dim {} differs from text dim {}",
            pair.embedding_key(),
            image_emb.len(),
            text_archive.dim()
        )));
    }
    let ids = candidates(pair, taxonomy, params.candidates)?;
    let logits = ids
        .iter()
        .map(|&id| {
            let text = text_archive.require(&text_key(id))?;
            Ok(params.logit_scale * cosine(image_emb, text))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(VerbDistribution {
        image_id: pair.image_id.clone(),
        pair_index: pair.pair_index,
        entries: ids.into_iter().zip(softmax(&logits)).collect(),
    })
}

fn detections_for<'a>(pair: &'a CandidatePair, dist: &'a VerbDistribution) -> impl Iterator<Item = HoiDetection> + 'a {
    let weight = pair.human_score * pair.object_score;
    dist.entries.iter().map(move |&(hoi_id, p)| HoiDetection {
        image_id: pair.image_id.clone(),
        human_box: pair.human_box,
        object_box: pair.object_box,
        hoi_id,
        score: p * weight,
    })
}

/// Expands distributions into detections, in pair order then ascending hoi id.
pub fn assemble_detections(
    pairs: &[CandidatePair],
    distributions: &[VerbDistribution],
) -> Result<Vec<HoiDetection>> {
    if pairs.len() != distributions.len() {
        return Err(Error::Consistency(format!(
            "{} pairs but {} distributions",
            pairs.len(),
            distributions.len()
        )));
    }
    let mut by_key: HashMap<(&str, u32), &VerbDistribution> = HashMap::with_capacity(distributions.len());
    for d in distributions {
        if by_key.insert((d.image_id.as_str(), d.pair_index), d).is_some() {
            return Err(Error::Consistency(format!(
                "two distributions for pair {}:{}",
                d.image_id, d.pair_index
            )));
        }
    }
    let mut out = Vec::new();
    for p in pairs {
        let d = by_key
            .remove(&(p.image_id.as_str(), p.pair_index))
            .ok_or_else(|| Error::Consistency(format!("no distribution for pair {}", p.embedding_key())))?;
        out.extend(detections_for(p, d));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ScoringSummary {
    pub pairs_scored: usize,
    pub detections_emitted: usize,
    pub missing_embeddings: usize,
}

const CHUNK: usize = 4096;

/// Scores every pair of `pairs_path` and writes detections JSONL to `out`.
///
/// Pairs are scored in parallel chunks; output order is pair-file order.
pub fn run_scoring(
    pairs_path: &Path,
    pair_archive: &EmbeddingArchive,
    text_archive: &EmbeddingArchive,
    taxonomy: &HoiTaxonomy,
    params: &ScoringParams,
    on_missing: MissingPolicy,
    out: &Path,
) -> Result<ScoringSummary> {
    params.validate()?;
    let pairs = read_pairs(pairs_path)?;
    let mut writer = JsonlWriter::create(out)?;
    let mut summary = ScoringSummary::default();

    for chunk in pairs.chunks(CHUNK) {
        let scored: Vec<Option<(&CandidatePair, VerbDistribution)>> = chunk
            .par_iter()
            .map(|pair| {
                let key = pair.embedding_key();
                let Some(emb) = pair_archive.get(&key) else {
                    return match on_missing {
                        MissingPolicy::Fail => Err(Error::MissingKey(key)),
                        MissingPolicy::Skip => Ok(None),
                    };
                };
                let dist = score_pair(pair, emb, text_archive, taxonomy, params)?;
                Ok(Some((pair, dist)))
            })
            .collect::<Result<_>>()?;
        for item in scored {
            match item {
                Some((pair, dist)) => {
                    summary.pairs_scored += 1;
                    for det in detections_for(pair, &dist) {
                        writer.write(&det)?;
                    }
                }
                None => summary.missing_embeddings += 1,
            }
        }
    }
    summary.detections_emitted = writer.finish()?;
    Ok(summary)
}

pub fn read_detections(path: &Path, taxonomy: Option<&HoiTaxonomy>) -> Result<Vec<HoiDetection>> {
    let mut out = Vec::new();
    jsonl::for_each_jsonl(path, |line, det: HoiDetection| {
        det.validate(taxonomy)
            .map_err(|e| Error::format(path, format!("line {line}"), e))?;
        out.push(det);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_detections(path: &Path, detections: &[HoiDetection]) -> Result<usize> {
    jsonl::write_jsonl(path, detections)
}
