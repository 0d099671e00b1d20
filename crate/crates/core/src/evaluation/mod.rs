//! HICO-DET style mAP: per-class greedy matching at an IoU threshold on both
//! boxes, all-point AP, and means over full / rare / non-rare and every split.
//!
//! Evaluation runs in Default mode: every detection counts against its class
//! on every image, whether or not the image contains that object.

pub mod ap;
pub mod matching;
pub mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;

pub use ap::{average_precision, average_precision_from_labels};
pub use matching::{match_class, MatchEntry, MatchResult, DEFAULT_IOU_THRESHOLD};
pub use report::{compare_reports, render_table, ClassAp, EvalReport, SplitAggregate};

use crate::dataset::{Annotations, HoiId, HoiTaxonomy, SplitDefinition};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::scoring::HoiDetection;
use matching::{match_ranked, ClassGt, RankedDet};

/// Accumulates detections class by class against a fixed ground truth.
pub struct Evaluator<'a> {
    taxonomy: &'a HoiTaxonomy,
    image_rank: HashMap<&'a str, u32>,
    gts: HashMap<HoiId, Vec<ClassGt>>,
    dets: HashMap<HoiId, Vec<RankedDet>>,
    seen: u32,
}

impl<'a> Evaluator<'a> {
    pub fn new(annotations: &'a Annotations, taxonomy: &'a HoiTaxonomy) -> Self {
        let mut ids: Vec<&str> = annotations.images().iter().map(|i| i.record.id.as_str()).collect();
        ids.sort_unstable();
        let image_rank: HashMap<&str, u32> = ids.into_iter().enumerate().map(|(i, id)| (id, i as u32)).collect();
        let mut gts: HashMap<HoiId, Vec<ClassGt>> = HashMap::new();
        for inst in annotations.instances() {
            gts.entry(inst.hoi_id).or_default().push(ClassGt {
                image: image_rank[inst.image_id.as_str()],
                human: inst.human_box,
                object: inst.object_box,
            });
        }
        Evaluator {
            taxonomy,
            image_rank,
            gts,
            dets: HashMap::new(),
            seen: 0,
        }
    }

    pub fn add(&mut self, det: &HoiDetection) -> Result<()> {
        det.validate(Some(self.taxonomy))?;
        let Some(&image) = self.image_rank.get(det.image_id.as_str()) else {
            return Err(Error::Validation(format!(
                "detection references unknown image {:?}",
                det.image_id
            )));
        };
        self.dets.entry(det.hoi_id).or_default().push(RankedDet {
            image,
            human: det.human_box,
            object: det.object_box,
            score: det.score,
            order: self.seen,
        });
        self.seen += 1;
        Ok(())
    }

    pub fn finish(self, splits: &[SplitDefinition], iou_threshold: f64) -> Result<EvalReport> {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "IoU threshold must lie in (0, 1], got {iou_threshold}"
            )));
        }
        let classes: Vec<HoiId> = self
            .taxonomy
            .ids()
            .filter(|id| self.gts.get(id).is_some_and(|g| !g.is_empty()))
            .collect();
        let per_class: Vec<ClassAp> = classes
            .par_iter()
            .map(|id| {
                let gts = &self.gts[id];
                let dets = self.dets.get(id).map(Vec::as_slice).unwrap_or(&[]);
                let matched = match_ranked(dets, gts, iou_threshold);
                ClassAp {
                    hoi_id: *id,
                    ap: average_precision(&matched, gts.len()),
                    num_gt: gts.len(),
                    num_detections: dets.len(),
                }
            })
            .collect();
        Ok(aggregate(per_class, self.taxonomy, splits))
    }
}

/// Mean AP in percentage points over the classes `keep` accepts; 0 when none.
fn mean_ap(per_class: &[ClassAp], keep: impl Fn(HoiId) -> bool) -> f64 {
    let (sum, n) = per_class
        .iter()
        .filter(|c| c.num_gt > 0 && keep(c.hoi_id))
        .fold((0.0, 0usize), |(s, n), c| (s + c.ap, n + 1));
    if n == 0 {
        0.0
    } else {
        100.0 * sum / n as f64
    }
}

fn aggregate(per_class: Vec<ClassAp>, taxonomy: &HoiTaxonomy, splits: &[SplitDefinition]) -> EvalReport {
    let is_rare = |id: HoiId| taxonomy.get(id).is_some_and(|c| c.rare);
    let full = mean_ap(&per_class, |_| true);
    let mut split_map = BTreeMap::new();
    for s in splits {
        split_map.insert(
            s.name.as_str().to_string(),
            SplitAggregate {
                full,
                unseen: mean_ap(&per_class, |id| s.unseen.contains(&id)),
                seen: mean_ap(&per_class, |id| s.seen.contains(&id)),
            },
        );
    }
    EvalReport {
        full,
        rare: mean_ap(&per_class, is_rare),
        non_rare: mean_ap(&per_class, |id| !is_rare(id)),
        splits: split_map,
        per_class,
    }
}

/// Evaluates in-memory detections.
pub fn evaluate(
    detections: &[HoiDetection],
    annotations: &Annotations,
    taxonomy: &HoiTaxonomy,
    splits: &[SplitDefinition],
    iou_threshold: f64,
) -> Result<EvalReport> {
    let mut ev = Evaluator::new(annotations, taxonomy);
    for d in detections {
        ev.add(d)?;
    }
    ev.finish(splits, iou_threshold)
}

/// Evaluates a detections JSON Lines file without holding the raw records.
pub fn evaluate_file(
    path: &Path,
    annotations: &Annotations,
    taxonomy: &HoiTaxonomy,
    splits: &[SplitDefinition],
    iou_threshold: f64,
) -> Result<EvalReport> {
    let mut ev = Evaluator::new(annotations, taxonomy);
    jsonl::for_each_jsonl(path, |line, det: HoiDetection| {
        ev.add(&det)
            .map_err(|e| Error::format(path, format!("line {line}"), e))
    })?;
    ev.finish(splits, iou_threshold)
}
