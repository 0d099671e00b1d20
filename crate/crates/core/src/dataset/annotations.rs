use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::taxonomy::{HoiId, HoiTaxonomy};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

/// One annotated ⟨human, object, verb⟩ triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub image_id: String,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub hoi_id: HoiId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub record: ImageRecord,
    pub instances: Vec<GroundTruthInstance>,
}

/// Test-set annotations in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotations {
    images: Vec<AnnotatedImage>,
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct RawFile {
    images: Vec<ImageRecord>,
    annotations: Vec<RawInstance>,
}

#[derive(Deserialize)]
struct RawInstance {
    image_id: String,
    human_box: [f64; 4],
    object_box: [f64; 4],
    hoi_id: HoiId,
}

#[derive(Serialize)]
struct FileOut<'a> {
    images: Vec<&'a ImageRecord>,
    annotations: Vec<&'a GroundTruthInstance>,
}

impl Annotations {
    /// Builds annotations from image records and instances, validating that
    /// image ids are unique and every instance refers to a known image and class.
    pub fn new(
        records: Vec<ImageRecord>,
        instances: Vec<GroundTruthInstance>,
        taxonomy: &HoiTaxonomy,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let mut images = Vec::with_capacity(records.len());
        for record in records {
            if index.insert(record.id.clone(), images.len()).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate image id {:?}",
                    record.id
                )));
            }
            images.push(AnnotatedImage {
                record,
                instances: Vec::new(),
            });
        }
        for inst in instances {
            if !taxonomy.contains(inst.hoi_id) {
                return Err(Error::Validation(format!(
                    "image {:?}: unknown hoi_id {}",
                    inst.image_id, inst.hoi_id
                )));
            }
            let Some(&pos) = index.get(&inst.image_id) else {
                return Err(Error::Validation(format!(
                    "annotation references unknown image {:?}",
                    inst.image_id
                )));
            };
            images[pos].instances.push(inst);
        }
        Ok(Annotations { images, index })
    }

    pub fn images(&self) -> &[AnnotatedImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&AnnotatedImage> {
        self.index.get(image_id).map(|&i| &self.images[i])
    }

    /// Position of the image in file order.
    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn num_instances(&self) -> usize {
        self.images.iter().map(|i| i.instances.len()).sum()
    }

    pub fn instances(&self) -> impl Iterator<Item = &GroundTruthInstance> {
        self.images.iter().flat_map(|i| i.instances.iter())
    }

    /// Keeps only the listed images (in their original order).
    pub fn subset(&self, keep: impl Fn(&ImageRecord) -> bool) -> Annotations {
        let images: Vec<AnnotatedImage> = self
            .images
            .iter()
            .filter(|img| keep(&img.record))
            .cloned()
            .collect();
        let index = images
            .iter()
            .enumerate()
            .map(|(i, img)| (img.record.id.clone(), i))
            .collect();
        Annotations { images, index }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let out = FileOut {
            images: self.images.iter().map(|i| &i.record).collect(),
            annotations: self.instances().collect(),
        };
        jsonl::write_json_pretty(path, &out)
    }
}

pub fn load_annotations(path: &Path, taxonomy: &HoiTaxonomy) -> Result<Annotations> {
    let raw: RawFile = jsonl::read_json(path)?;
    let mut instances = Vec::with_capacity(raw.annotations.len());
    for (idx, r) in raw.annotations.into_iter().enumerate() {
        let human_box = BoundingBox::try_from(r.human_box).map_err(|e| {
            Error::Validation(format!(
                "image {:?}, annotation {idx}: human_box: {e}",
                r.image_id
            ))
        })?;
        let object_box = BoundingBox::try_from(r.object_box).map_err(|e| {
            Error::Validation(format!(
                "image {:?}, annotation {idx}: object_box: {e}",
                r.image_id
            ))
        })?;
        instances.push(GroundTruthInstance {
            image_id: r.image_id,
            human_box,
            object_box,
            hoi_id: r.hoi_id,
        });
    }
    Annotations::new(raw.images, instances, taxonomy)
}
