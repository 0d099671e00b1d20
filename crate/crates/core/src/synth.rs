//! Deterministic synthetic datasets and embeddings.
//!
//! Stands in for the embedding extractor when no images or models are
//! available: it builds a small taxonomy, random annotations, orthonormal
//! prompt embeddings and region embeddings derived from each pair's true
//! class (optionally with Gaussian noise).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::{normalize, text_key, EmbeddingArchive};
use crate::bbox::{iou, BoundingBox};
use crate::dataset::taxonomy::{NO_INTERACTION, PERSON};
use crate::dataset::{
    Annotations, GroundTruthInstance, HoiCategory, HoiId, HoiTaxonomy, ImageRecord, ObjectId, VerbId,
};
use crate::error::Result;
use crate::pairing::{CandidatePair, DetectionBox};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Object categories including `person` (always id 1).
    pub num_objects: u32,
    /// Verbs including `no_interaction` (always the last id).
    pub num_verbs: u32,
    /// Interaction verbs drawn per object, besides `no_interaction`.
    pub verbs_per_object: (u32, u32),
    pub rare_fraction: f64,
    pub num_images: usize,
    /// Annotated pairs per image (inclusive range).
    pub pairs_per_image: (usize, usize),
    /// Chance that an annotated pair carries a second verb.
    pub multi_verb_prob: f64,
    pub image_size: (u32, u32),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            num_objects: 8,
            num_verbs: 12,
            verbs_per_object: (1, 4),
            rare_fraction: 0.23,
            num_images: 20,
            pairs_per_image: (1, 3),
            multi_verb_prob: 0.0,
            image_size: (640, 480),
        }
    }
}

pub struct SynthDataset {
    pub taxonomy: HoiTaxonomy,
    pub annotations: Annotations,
}

fn random_box(rng: &mut ChaCha8Rng, (w, h): (u32, u32)) -> BoundingBox {
    let (w, h) = (f64::from(w), f64::from(h));
    let bw = rng.gen_range(0.08 * w..0.5 * w);
    let bh = rng.gen_range(0.08 * h..0.5 * h);
    let x1 = rng.gen_range(0.0..w - bw);
    let y1 = rng.gen_range(0.0..h - bh);
    BoundingBox::new(x1, y1, x1 + bw, y1 + bh).expect("positive size")
}

pub fn synth_taxonomy(cfg: &SynthConfig) -> HoiTaxonomy {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let no_interaction = VerbId(cfg.num_verbs);
    let mut pairs: Vec<(ObjectId, VerbId)> = Vec::new();
    let interaction_verbs: Vec<u32> = (1..cfg.num_verbs).collect();
    for o in 1..=cfg.num_objects {
        let (lo, hi) = cfg.verbs_per_object;
        let k = rng.gen_range(lo..=hi.max(lo)).min(interaction_verbs.len() as u32) as usize;
        let mut verbs: Vec<u32> = interaction_verbs.choose_multiple(&mut rng, k).copied().collect();
        verbs.sort_unstable();
        pairs.extend(verbs.into_iter().map(|v| (ObjectId(o), VerbId(v))));
        pairs.push((ObjectId(o), no_interaction));
    }
    let n_rare = (pairs.len() as f64 * cfg.rare_fraction).round() as usize;
    let mut ids: Vec<usize> = (0..pairs.len()).collect();
    ids.shuffle(&mut rng);
    let rare: std::collections::HashSet<usize> = ids.into_iter().take(n_rare).collect();

    let categories = pairs
        .iter()
        .enumerate()
        .map(|(i, &(o, v))| HoiCategory {
            hoi_id: HoiId(i as u32 + 1),
            object_id: o,
            verb_id: v,
            object_name: if o.0 == 1 { PERSON.into() } else { format!("object{}", o.0) },
            verb_name: if v == no_interaction { NO_INTERACTION.into() } else { format!("verb{}", v.0) },
            rare: rare.contains(&i),
        })
        .collect();
    HoiTaxonomy::from_categories(categories).expect("synthetic taxonomy is valid")
}

pub fn synth_dataset(cfg: &SynthConfig) -> SynthDataset {
    let taxonomy = synth_taxonomy(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let objects: Vec<ObjectId> = taxonomy.object_ids().collect();
    let mut records = Vec::with_capacity(cfg.num_images);
    let mut instances = Vec::new();
    for i in 0..cfg.num_images {
        let id = format!("synth_{i:05}");
        records.push(ImageRecord {
            id: id.clone(),
            file_name: format!("{id}.jpg"),
            width: cfg.image_size.0,
            height: cfg.image_size.1,
        });
        let n = rng.gen_range(cfg.pairs_per_image.0..=cfg.pairs_per_image.1);
        for _ in 0..n {
            let human_box = random_box(&mut rng, cfg.image_size);
            let object_box = random_box(&mut rng, cfg.image_size);
            let object = *objects.choose(&mut rng).unwrap();
            let hois = taxonomy.hois_for_object(object);
            let first = *hois.choose(&mut rng).unwrap();
            instances.push(GroundTruthInstance { image_id: id.clone(), human_box, object_box, hoi_id: first });
            if hois.len() > 1 && rng.gen_bool(cfg.multi_verb_prob) {
                let second = *hois.iter().filter(|&&h| h != first).collect::<Vec<_>>().choose(&mut rng).unwrap();
                instances.push(GroundTruthInstance { image_id: id.clone(), human_box, object_box, hoi_id: *second });
            }
        }
    }
    let annotations = Annotations::new(records, instances, &taxonomy).expect("synthetic annotations are valid");
    SynthDataset { taxonomy, annotations }
}

/// Orthonormal prompt embeddings, one per class, keyed `hoi{id}`.
///
/// Needs `dim >= taxonomy.len()`; vectors come from Gram-Schmidt over
/// Gaussian draws.
pub fn orthonormal_text_archive(taxonomy: &HoiTaxonomy, dim: usize, seed: u64) -> Result<EmbeddingArchive> {
    assert!(dim >= taxonomy.len(), "dim {dim} too small for {} classes", taxonomy.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(taxonomy.len());
    let mut archive = EmbeddingArchive::new(dim)?;
    for id in taxonomy.ids() {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        archive.insert(text_key(id), &f)?;
        basis.push(v);
    }
    Ok(archive)
}

/// True class of a pair: the annotated instance of the same image and object
/// category whose boxes both overlap the pair's at IoU >= 0.5, preferring the
/// largest `min(iou_human, iou_object)`.
pub fn true_class(pair: &CandidatePair, annotations: &Annotations, taxonomy: &HoiTaxonomy) -> Option<HoiId> {
    let image = annotations.get(&pair.image_id)?;
    let mut best: Option<(HoiId, f64)> = None;
    for inst in &image.instances {
        if taxonomy.get(inst.hoi_id).map(|c| c.object_id) != Some(pair.object_id) {
            continue;
        }
        let ov = iou(&pair.human_box, &inst.human_box).min(iou(&pair.object_box, &inst.object_box));
        if ov >= 0.5 && best.is_none_or(|(_, b)| ov > b) {
            best = Some((inst.hoi_id, ov));
        }
    }
    best.map(|(id, _)| id)
}

/// Region embeddings for `pairs`: the true class's prompt embedding plus
/// Gaussian noise of standard deviation `noise` per coordinate, renormalized.
/// Pairs without a true class get a random unit vector.
pub fn pair_archive(
    pairs: &[CandidatePair],
    annotations: &Annotations,
    taxonomy: &HoiTaxonomy,
    text: &EmbeddingArchive,
    noise: f64,
    seed: u64,
) -> Result<EmbeddingArchive> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut archive = EmbeddingArchive::new(text.dim())?;
    for pair in pairs {
        let mut v: Vec<f32> = match true_class(pair, annotations, taxonomy) {
            Some(id) => text.require(&text_key(id))?.to_vec(),
            None => (0..text.dim()).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect(),
        };
        if noise > 0.0 {
            v.iter_mut().for_each(|x| *x += (noise * rng.sample::<f64, _>(StandardNormal)) as f32);
        }
        normalize(&mut v);
        archive.insert(pair.embedding_key(), &v)?;
    }
    Ok(archive)
}

/// Detector-like boxes: every annotated box jittered, plus a few distractors.
pub fn detections(dataset: &SynthDataset, jitter: f64, seed: u64) -> Vec<DetectionBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let person = dataset.taxonomy.person_object_id().unwrap_or(ObjectId(1));
    let objects: Vec<ObjectId> = dataset.taxonomy.object_ids().collect();
    let mut out = Vec::new();
    for img in dataset.annotations.images() {
        let size = (img.record.width, img.record.height);
        let mut seen = std::collections::HashSet::new();
        let mut push = |b: &BoundingBox, cat: ObjectId, rng: &mut ChaCha8Rng, out: &mut Vec<DetectionBox>| {
            if !seen.insert((b.key(), cat)) {
                return;
            }
            let mut j = || rng.gen_range(-jitter..=jitter);
            let (dx1, dy1, dx2, dy2) = (j() * b.width(), j() * b.height(), j() * b.width(), j() * b.height());
            let x1 = (b.x1() + dx1).max(0.0);
            let y1 = (b.y1() + dy1).max(0.0);
            let x2 = (b.x2() + dx2).max(x1 + 1.0);
            let y2 = (b.y2() + dy2).max(y1 + 1.0);
            out.push(DetectionBox {
                image_id: img.record.id.clone(),
                bbox: BoundingBox::new(x1, y1, x2, y2).expect("valid jittered box"),
                category_id: cat,
                score: rng.gen_range(0.3..1.0),
            });
        };
        for inst in &img.instances {
            let obj = dataset.taxonomy.get(inst.hoi_id).map(|c| c.object_id).unwrap_or(person);
            push(&inst.human_box, person, &mut rng, &mut out);
            push(&inst.object_box, obj, &mut rng, &mut out);
        }
        for _ in 0..rng.gen_range(0..=2) {
            let b = random_box(&mut rng, size);
            let cat = *objects.choose(&mut rng).unwrap();
            let score = rng.gen_range(0.05..0.6);
            out.push(DetectionBox { image_id: img.record.id.clone(), bbox: b, category_id: cat, score });
        }
    }
    out
}
