//! Shared helpers: a brute-force evaluator used as an oracle, and fixtures.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::{Command, Output};

use hoi_eval::dataset::{GroundTruthInstance, HoiTaxonomy};
use hoi_eval::scoring::HoiDetection;

pub type Box4 = [f64; 4];

pub fn oracle_iou(a: Box4, b: Box4) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: Box4| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

/// Average precision of one class by explicit PR-curve integration.
///
/// Detections are visited by score (descending), ties broken by image id,
/// then human box, then object box, then input position. Each one claims the
/// unclaimed ground truth of its image with the highest min(IoU_h, IoU_o),
/// provided both IoUs reach `thr`.
pub fn oracle_ap(dets: &[&HoiDetection], gts: &[&GroundTruthInstance], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (dets[i], dets[j]);
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.image_id.cmp(&b.image_id))
            .then(a.human_box.to_array().partial_cmp(&b.human_box.to_array()).unwrap())
            .then(a.object_box.to_array().partial_cmp(&b.object_box.to_array()).unwrap())
            .then(i.cmp(&j))
    });
    let mut claimed = vec![false; gts.len()];
    let mut labels = Vec::new();
    for i in order {
        let d = dets[i];
        let mut best = None;
        let mut best_ov = f64::NEG_INFINITY;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] || gt.image_id != d.image_id {
                continue;
            }
            let ih = oracle_iou(d.human_box.to_array(), gt.human_box.to_array());
            let io = oracle_iou(d.object_box.to_array(), gt.object_box.to_array());
            if ih >= thr && io >= thr && ih.min(io) > best_ov {
                best = Some(g);
                best_ov = ih.min(io);
            }
        }
        if let Some(g) = best {
            claimed[g] = true;
        }
        labels.push(best.is_some());
    }

    // recall/precision curve with sentinels, precision envelope, area
    let n = gts.len() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut rec = vec![0.0];
    let mut prec = vec![0.0];
    for l in labels {
        if l {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        rec.push(tp / n);
        prec.push(tp / (tp + fp));
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..rec.len() {
        if rec[i] != rec[i - 1] {
            ap += (rec[i] - rec[i - 1]) * prec[i];
        }
    }
    ap
}

pub struct OracleReport {
    pub per_class: BTreeMap<u32, f64>,
    pub full: f64,
    pub rare: f64,
    pub non_rare: f64,
}

fn mean_pct(values: Vec<f64>) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        100.0 * values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn oracle_report(
    dets: &[HoiDetection],
    gts: &[GroundTruthInstance],
    taxonomy: &HoiTaxonomy,
    thr: f64,
) -> OracleReport {
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.hoi_id.0).collect();
    let mut per_class = BTreeMap::new();
    for c in classes {
        let d: Vec<&HoiDetection> = dets.iter().filter(|d| d.hoi_id.0 == c).collect();
        let g: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.hoi_id.0 == c).collect();
        per_class.insert(c, oracle_ap(&d, &g, thr));
    }
    let rare: BTreeSet<u32> = taxonomy.rare_ids().iter().map(|h| h.0).collect();
    let pick = |keep: &dyn Fn(u32) -> bool| -> Vec<f64> {
        per_class.iter().filter(|(c, _)| keep(**c)).map(|(_, a)| *a).collect()
    };
    OracleReport {
        full: mean_pct(pick(&|_| true)),
        rare: mean_pct(pick(&|c| rare.contains(&c))),
        non_rare: mean_pct(pick(&|c| !rare.contains(&c))),
        per_class,
    }
}

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn hoi_eval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoi-eval"))
        .args(args)
        .output()
        .expect("spawn hoi-eval")
}
