//! Candidate (human, object) pair generation for the three input regimes:
//! annotated pairs, exhaustive recombination of annotated boxes, and
//! detector boxes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{union_box, BoundingBox};
use crate::dataset::{Annotations, GroundTruthInstance, HoiTaxonomy, ObjectId};
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Annotated pairs.
    Gt,
    /// Every annotated human box against every annotated box.
    #[value(name = "gt-r")]
    GtR,
    /// Detector boxes, combined like `gt-r`.
    Detector,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Gt => "gt",
            Regime::GtR => "gt-r",
            Regime::Detector => "detector",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(Regime::Gt),
            "gt-r" => Ok(Regime::GtR),
            "detector" => Ok(Regime::Detector),
            other => Err(Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

/// A (human box, object box) pair to be scored. One line of the pair file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatePair {
    pub image_id: String,
    pub pair_index: u32,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_id: ObjectId,
    pub human_score: f64,
    pub object_score: f64,
    pub union_box: BoundingBox,
}

impl CandidatePair {
    pub fn new(
        image_id: &str,
        pair_index: u32,
        human_box: BoundingBox,
        object_box: BoundingBox,
        object_id: ObjectId,
        human_score: f64,
        object_score: f64,
    ) -> Self {
        CandidatePair {
            image_id: image_id.to_string(),
            pair_index,
            human_box,
            object_box,
            object_id,
            human_score,
            object_score,
            union_box: union_box(&human_box, &object_box),
        }
    }

    /// Key of this pair's region embedding in a pair archive.
    pub fn embedding_key(&self) -> String {
        format!("{}:{}", self.image_id, self.pair_index)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("pair {}:{}", self.image_id, self.pair_index);
        for (what, s) in [("human_score", self.human_score), ("object_score", self.object_score)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!("{}: {what} {s} outside [0, 1]", ctx())));
            }
        }
        if !self.object_id.in_range() {
            return Err(Error::Validation(format!("{}: object_id {} out of range", ctx(), self.object_id)));
        }
        if self.union_box != union_box(&self.human_box, &self.object_box) {
            return Err(Error::Validation(format!(
                "{}: union_box {} is not the union of its boxes",
                ctx(),
                self.union_box
            )));
        }
        Ok(())
    }
}

/// One detector output box. One line of the detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionBox {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub category_id: ObjectId,
    pub score: f64,
}

impl DetectionBox {
    pub fn validate(&self, taxonomy: Option<&HoiTaxonomy>) -> Result<()> {
        if !(self.score > 0.0 && self.score <= 1.0) {
            return Err(Error::Validation(format!(
                "detection in image {:?}: score {} outside (0, 1]",
                self.image_id, self.score
            )));
        }
        let known = match taxonomy {
            Some(t) => t.has_object(self.category_id),
            None => self.category_id.in_range(),
        };
        if !known {
            return Err(Error::Validation(format!(
                "detection in image {:?}: unknown category_id {}",
                self.image_id, self.category_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingParams {
    pub score_threshold: f64,
    pub max_pairs_per_image: usize,
    /// Category id treated as human.
    pub person: ObjectId,
}

impl PairingParams {
    pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.25;
    pub const DEFAULT_MAX_PAIRS: usize = 100;

    pub fn new(person: ObjectId) -> Self {
        PairingParams {
            score_threshold: Self::DEFAULT_SCORE_THRESHOLD,
            max_pairs_per_image: Self::DEFAULT_MAX_PAIRS,
            person,
        }
    }
}

fn object_of(inst: &GroundTruthInstance, taxonomy: &HoiTaxonomy) -> Result<ObjectId> {
    taxonomy
        .get(inst.hoi_id)
        .map(|c| c.object_id)
        .ok_or_else(|| Error::Taxonomy(format!("unknown hoi_id {}", inst.hoi_id)))
}

/// One pair per distinct (human box, object box, object) among the instances
/// of a single image, in first-appearance order.
pub fn make_gt_pairs(
    instances: &[GroundTruthInstance],
    taxonomy: &HoiTaxonomy,
) -> Result<Vec<CandidatePair>> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for inst in instances {
        let object_id = object_of(inst, taxonomy)?;
        if seen.insert((inst.human_box.key(), inst.object_box.key(), object_id)) {
            pairs.push(CandidatePair::new(
                &inst.image_id,
                pairs.len() as u32,
                inst.human_box,
                inst.object_box,
                object_id,
                1.0,
                1.0,
            ));
        }
    }
    Ok(pairs)
}

/// Every human box crossed with every labelled box of one image, excluding
/// a box paired with itself.
///
/// Human boxes are all annotated `human_box`es plus object boxes whose
/// category is `person`; the box set holds every annotated box with its
/// category. Both sets are deduplicated by exact coordinates (and category,
/// for the box set) and kept in first-appearance order.
pub fn make_recombined_pairs(
    instances: &[GroundTruthInstance],
    taxonomy: &HoiTaxonomy,
) -> Result<Vec<CandidatePair>> {
    let person = taxonomy.person_object_id();
    let mut humans: Vec<BoundingBox> = Vec::new();
    let mut human_keys = HashSet::new();
    let mut boxes: Vec<(BoundingBox, ObjectId)> = Vec::new();
    let mut box_keys = HashSet::new();

    for inst in instances {
        let object_id = object_of(inst, taxonomy)?;
        if human_keys.insert(inst.human_box.key()) {
            humans.push(inst.human_box);
        }
        if let Some(p) = person {
            if box_keys.insert((inst.human_box.key(), p)) {
                boxes.push((inst.human_box, p));
            }
        }
        if Some(object_id) == person && human_keys.insert(inst.object_box.key()) {
            humans.push(inst.object_box);
        }
        if box_keys.insert((inst.object_box.key(), object_id)) {
            boxes.push((inst.object_box, object_id));
        }
    }

    let Some(first) = instances.first() else {
        return Ok(Vec::new());
    };
    let mut pairs = Vec::with_capacity(humans.len() * boxes.len());
    for h in &humans {
        for (b, object_id) in &boxes {
            if h.key() == b.key() {
                continue;
            }
            pairs.push(CandidatePair::new(
                &first.image_id,
                pairs.len() as u32,
                *h,
                *b,
                *object_id,
                1.0,
                1.0,
            ));
        }
    }
    Ok(pairs)
}

/// Pairs detector boxes of one image.
///
/// Humans are `person` detections at or above the score threshold, objects
/// are all detections at or above it. When the cross product exceeds the
/// cap, the pairs with the largest `human_score * object_score` survive
/// (earlier pairs win ties) and keep their generation order.
pub fn make_detector_pairs(detections: &[DetectionBox], params: &PairingParams) -> Vec<CandidatePair> {
    let kept: Vec<&DetectionBox> = detections
        .iter()
        .filter(|d| d.score >= params.score_threshold)
        .collect();
    let humans: Vec<&DetectionBox> = kept
        .iter()
        .copied()
        .filter(|d| d.category_id == params.person)
        .collect();

    let mut raw: Vec<(&DetectionBox, &DetectionBox)> = Vec::new();
    for h in &humans {
        for o in &kept {
            if h.bbox.key() != o.bbox.key() {
                raw.push((h, o));
            }
        }
    }

    if raw.len() > params.max_pairs_per_image {
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let pa = raw[a].0.score * raw[a].1.score;
            let pb = raw[b].0.score * raw[b].1.score;
            pb.total_cmp(&pa).then(a.cmp(&b))
        });
        let mut keep = vec![false; raw.len()];
        for &i in order.iter().take(params.max_pairs_per_image) {
            keep[i] = true;
        }
        raw = raw
            .into_iter()
            .zip(keep)
            .filter_map(|(p, k)| k.then_some(p))
            .collect();
    }

    raw.into_iter()
        .enumerate()
        .map(|(i, (h, o))| {
            CandidatePair::new(
                &h.image_id,
                i as u32,
                h.bbox,
                o.bbox,
                o.category_id,
                h.score,
                o.score,
            )
        })
        .collect()
}

/// Generates pairs for every annotated image in file order.
pub fn pairs_from_annotations(
    regime: Regime,
    annotations: &Annotations,
    taxonomy: &HoiTaxonomy,
) -> Result<Vec<CandidatePair>> {
    let per_image: Vec<Vec<CandidatePair>> = annotations
        .images()
        .par_iter()
        .map(|img| match regime {
            Regime::Gt => make_gt_pairs(&img.instances, taxonomy),
            Regime::GtR => make_recombined_pairs(&img.instances, taxonomy),
            Regime::Detector => Err(Error::Config(
                "detector regime pairs come from a detection file".into(),
            )),
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Generates detector pairs per image.
///
/// With `annotations`, images follow annotation order and detections on
/// unknown images are rejected; otherwise images follow first appearance in
/// the detection list.
pub fn pairs_from_detections(
    detections: &[DetectionBox],
    annotations: Option<&Annotations>,
    params: &PairingParams,
) -> Result<Vec<CandidatePair>> {
    let mut groups: HashMap<&str, Vec<DetectionBox>> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for d in detections {
        if let Some(a) = annotations {
            if a.get(&d.image_id).is_none() {
                return Err(Error::Validation(format!(
                    "detection references unknown image {:?}",
                    d.image_id
                )));
            }
        }
        let entry = groups.entry(d.image_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(d.image_id.as_str());
        }
        entry.push(d.clone());
    }
    let order: Vec<&str> = match annotations {
        Some(a) => a
            .images()
            .iter()
            .map(|i| i.record.id.as_str())
            .filter(|id| groups.contains_key(id))
            .collect(),
        None => order,
    };
    let per_image: Vec<Vec<CandidatePair>> = order
        .par_iter()
        .map(|id| make_detector_pairs(&groups[id], params))
        .collect();
    Ok(per_image.into_iter().flatten().collect())
}

pub fn read_pairs(path: &Path) -> Result<Vec<CandidatePair>> {
    let pairs: Vec<CandidatePair> = jsonl::read_jsonl(path)?;
    for p in &pairs {
        p.validate()?;
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[CandidatePair]) -> Result<usize> {
    jsonl::write_jsonl(path, pairs)
}

pub fn read_detection_boxes(path: &Path, taxonomy: Option<&HoiTaxonomy>) -> Result<Vec<DetectionBox>> {
    let dets: Vec<DetectionBox> = jsonl::read_jsonl(path)?;
    for d in &dets {
        d.validate(taxonomy)?;
    }
    Ok(dets)
}
