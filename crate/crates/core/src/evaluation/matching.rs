//! Greedy one-to-one matching of detections to ground truth within a class.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use crate::bbox::{iou, BoundingBox};
use crate::dataset::GroundTruthInstance;
use crate::scoring::HoiDetection;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Detection of one class in compact form. `image` is the rank of the image
/// id in ascending string order, so comparing ranks compares ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RankedDet {
    pub image: u32,
    pub human: BoundingBox,
    pub object: BoundingBox,
    pub score: f64,
    pub order: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ClassGt {
    pub image: u32,
    pub human: BoundingBox,
    pub object: BoundingBox,
}

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchEntry {
    /// Index into the detection list passed to [`match_class`].
    pub detection: usize,
    pub is_true_positive: bool,
    /// Index into the ground-truth list passed to [`match_class`].
    pub matched_gt: Option<usize>,
}

/// Matching outcome, in ranking order (score descending).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
}

impl MatchResult {
    pub fn labels(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.is_true_positive).collect()
    }

    pub fn num_true_positives(&self) -> usize {
        self.entries.iter().filter(|e| e.is_true_positive).count()
    }
}

/// Ranking: score descending, then image id ascending, then human box and
/// object box coordinates, then input order. Everything after the score only
/// breaks ties; the content keys make the result independent of input order.
pub(crate) fn ranking_cmp(a: &RankedDet, b: &RankedDet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image.cmp(&b.image))
        .then_with(|| a.human.total_cmp(&b.human))
        .then_with(|| a.object.total_cmp(&b.object))
        .then(a.order.cmp(&b.order))
}

pub(crate) fn match_ranked(dets: &[RankedDet], gts: &[ClassGt], iou_threshold: f64) -> MatchResult {
    let mut by_image: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| ranking_cmp(&dets[a], &dets[b]));

    let mut taken = vec![false; gts.len()];
    let entries = order
        .into_iter()
        .map(|d| {
            let det = &dets[d];
            let mut best: Option<(usize, f64)> = None;
            for &g in by_image.get(&det.image).map(Vec::as_slice).unwrap_or(&[]) {
                if taken[g] {
                    continue;
                }
                let ih = iou(&det.human, &gts[g].human);
                let io = iou(&det.object, &gts[g].object);
                if ih < iou_threshold || io < iou_threshold {
                    continue;
                }
                let overlap = ih.min(io);
                // strict comparison keeps the earliest GT on ties
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            MatchEntry {
                detection: d,
                is_true_positive: best.is_some(),
                matched_gt: best.map(|(g, _)| g),
            }
        })
        .collect();
    MatchResult { entries }
}

/// Matches class-filtered detections against class-filtered ground truth.
///
/// A detection is a true positive when an unmatched ground truth of the same
/// image overlaps it with IoU at or above `iou_threshold` on both the human
/// and the object box. Among eligible ground truths the one with the largest
/// `min(iou_human, iou_object)` wins, earlier input breaking ties.
pub fn match_class(
    detections: &[HoiDetection],
    gts: &[GroundTruthInstance],
    iou_threshold: f64,
) -> MatchResult {
    let ids: BTreeSet<&str> = detections
        .iter()
        .map(|d| d.image_id.as_str())
        .chain(gts.iter().map(|g| g.image_id.as_str()))
        .collect();
    let rank: HashMap<&str, u32> = ids.into_iter().enumerate().map(|(i, id)| (id, i as u32)).collect();
    let dets: Vec<RankedDet> = detections
        .iter()
        .enumerate()
        .map(|(i, d)| RankedDet {
            image: rank[d.image_id.as_str()],
            human: d.human_box,
            object: d.object_box,
            score: d.score,
            order: i as u32,
        })
        .collect();
    let gts: Vec<ClassGt> = gts
        .iter()
        .map(|g| ClassGt {
            image: rank[g.image_id.as_str()],
            human: g.human_box,
            object: g.object_box,
        })
        .collect();
    match_ranked(&dets, &gts, iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::HoiId;
    use rand::{Rng, SeedableRng};

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn gt(img: &str, h: BoundingBox, o: BoundingBox) -> GroundTruthInstance {
        GroundTruthInstance { image_id: img.into(), human_box: h, object_box: o, hoi_id: HoiId(1) }
    }

    fn det(img: &str, h: BoundingBox, o: BoundingBox, score: f64) -> HoiDetection {
        HoiDetection { image_id: img.into(), human_box: h, object_box: o, hoi_id: HoiId(1), score }
    }

    #[test]
    fn exact_detection_is_true_positive() {
        let (h, o) = (bx(0., 0., 10., 10.), bx(5., 5., 20., 20.));
        let m = match_class(&[det("a", h, o, 0.5)], &[gt("a", h, o)], 0.5);
        assert_eq!(m.labels(), [true]);
        assert_eq!(m.entries[0].matched_gt, Some(0));
    }

    #[test]
    fn single_gt_matched_once() {
        let (h, o) = (bx(0., 0., 10., 10.), bx(5., 5., 20., 20.));
        let m = match_class(&[det("a", h, o, 0.3), det("a", h, o, 0.9)], &[gt("a", h, o)], 0.5);
        // ranking order: the 0.9 detection (input index 1) first
        assert_eq!(m.entries[0].detection, 1);
        assert_eq!(m.labels(), [true, false]);
    }

    #[test]
    fn other_image_never_matches() {
        let (h, o) = (bx(0., 0., 10., 10.), bx(5., 5., 20., 20.));
        let m = match_class(&[det("b", h, o, 0.9)], &[gt("a", h, o)], 0.5);
        assert_eq!(m.labels(), [false]);
    }

    #[test]
    fn both_boxes_must_pass() {
        let (h, o) = (bx(0., 0., 10., 10.), bx(5., 5., 20., 20.));
        let far = bx(100., 100., 110., 110.);
        let m = match_class(&[det("a", h, far, 0.9)], &[gt("a", h, o)], 0.5);
        assert_eq!(m.labels(), [false]);
    }

    #[test]
    fn best_overlap_gt_chosen() {
        let o = bx(50., 50., 60., 60.);
        let g_loose = gt("a", bx(0., 0., 10., 12.), o);
        let g_tight = gt("a", bx(0., 0., 10., 10.), o);
        let m = match_class(&[det("a", bx(0., 0., 10., 10.), o, 0.9)], &[g_loose, g_tight], 0.5);
        assert_eq!(m.entries[0].matched_gt, Some(1));
    }

    #[test]
    fn equal_scores_ordered_by_image_then_boxes() {
        let (h, o) = (bx(0., 0., 10., 10.), bx(5., 5., 20., 20.));
        let m = match_class(
            &[det("b", h, o, 0.5), det("a", h, o, 0.5)],
            &[gt("a", h, o), gt("b", h, o)],
            0.5,
        );
        assert_eq!(m.entries[0].detection, 1);
        assert_eq!(m.labels(), [true, true]);
    }

    /// Reference greedy: at each step pick the highest-ranked unprocessed
    /// detection by scanning, then scan every GT of the class.
    fn brute_force(dets: &[HoiDetection], gts: &[GroundTruthInstance], thr: f64) -> Vec<(usize, Option<usize>)> {
        let mut done = vec![false; dets.len()];
        let mut taken = vec![false; gts.len()];
        let mut out = Vec::new();
        for _ in 0..dets.len() {
            let mut pick: Option<usize> = None;
            for i in 0..dets.len() {
                if done[i] {
                    continue;
                }
                pick = match pick {
                    None => Some(i),
                    Some(p) => {
                        let (a, b) = (&dets[i], &dets[p]);
                        let better = a.score > b.score
                            || (a.score == b.score && a.image_id < b.image_id)
                            || (a.score == b.score
                                && a.image_id == b.image_id
                                && (a.human_box.to_array(), a.object_box.to_array())
                                    < (b.human_box.to_array(), b.object_box.to_array()));
                        Some(if better { i } else { p })
                    }
                };
            }
            let i = pick.unwrap();
            done[i] = true;
            let mut best: Option<usize> = None;
            let mut best_ov = -1.0;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.image_id != dets[i].image_id {
                    continue;
                }
                let ov_h = iou(&dets[i].human_box, &gt.human_box);
                let ov_o = iou(&dets[i].object_box, &gt.object_box);
                if ov_h >= thr && ov_o >= thr && ov_h.min(ov_o) > best_ov {
                    best = Some(g);
                    best_ov = ov_h.min(ov_o);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
            }
            out.push((i, best));
        }
        out
    }

    fn jitter(rng: &mut rand_chacha::ChaCha8Rng, base: &BoundingBox) -> BoundingBox {
        let mut d = || rng.gen_range(-3.0..3.0);
        let x1 = (base.x1() + d()).max(0.0);
        let y1 = (base.y1() + d()).max(0.0);
        let (w, h) = (base.width() + d().abs(), base.height() + d().abs());
        bx(x1, y1, x1 + w, y1 + h)
    }

    #[test]
    fn random_single_image_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let gts: Vec<GroundTruthInstance> = (0..3)
                .map(|k| {
                    let s = 8.0 * k as f64;
                    gt("img", bx(s, 0., s + 10., 10.), bx(s + 4., 4., s + 14., 14.))
                })
                .collect();
            let dets: Vec<HoiDetection> = (0..5)
                .map(|_| {
                    let g = &gts[rng.gen_range(0..3)];
                    let (h, o) = (jitter(&mut rng, &g.human_box), jitter(&mut rng, &g.object_box));
                    det("img", h, o, (rng.gen_range(0..6) as f64) / 5.0)
                })
                .collect();
            let m = match_class(&dets, &gts, 0.5);
            let got: Vec<(usize, Option<usize>)> = m.entries.iter().map(|e| (e.detection, e.matched_gt)).collect();
            assert_eq!(got, brute_force(&dets, &gts, 0.5));
        }
    }
}
