use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub const HICO_DET_NUM_HOIS: usize = 600;
pub const HICO_DET_NUM_RARE: usize = 138;
pub const HICO_DET_NUM_OBJECTS: u32 = 80;
pub const HICO_DET_NUM_VERBS: u32 = 117;

/// Object category name used for human boxes.
pub const PERSON: &str = "person";
/// Verb name HICO-DET uses for the "no interaction" classes.
pub const NO_INTERACTION: &str = "no_interaction";

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident, $max:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub const MAX: u32 = $max;

            pub fn get(self) -> u32 {
                self.0
            }

            pub fn in_range(self) -> bool {
                (1..=Self::MAX).contains(&self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(
    /// HOI class id, 1-based.
    HoiId,
    HICO_DET_NUM_HOIS as u32
);
id_newtype!(
    /// Object category id, 1-based.
    ObjectId,
    HICO_DET_NUM_OBJECTS
);
id_newtype!(
    /// Verb id, 1-based.
    VerbId,
    HICO_DET_NUM_VERBS
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiCategory {
    pub hoi_id: HoiId,
    pub object_id: ObjectId,
    pub verb_id: VerbId,
    pub object_name: String,
    pub verb_name: String,
    pub rare: bool,
}

/// Registry of HOI classes keyed by id and by (object, verb).
///
/// Immutable once built. Categories are kept sorted by `hoi_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoiTaxonomy {
    categories: Vec<HoiCategory>,
    index: HashMap<HoiId, usize>,
    by_pair: HashMap<(ObjectId, VerbId), HoiId>,
    verbs_for_object: BTreeMap<ObjectId, Vec<VerbId>>,
    hois_for_object: BTreeMap<ObjectId, Vec<HoiId>>,
}

impl HoiTaxonomy {
    pub fn from_categories(mut categories: Vec<HoiCategory>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Validation("taxonomy has no categories".into()));
        }
        categories.sort_by_key(|c| c.hoi_id);

        let mut index = HashMap::with_capacity(categories.len());
        let mut by_pair = HashMap::with_capacity(categories.len());
        let mut object_names: HashMap<ObjectId, &str> = HashMap::new();
        let mut verb_names: HashMap<VerbId, &str> = HashMap::new();
        let mut verbs_for_object: BTreeMap<ObjectId, Vec<VerbId>> = BTreeMap::new();
        let mut hois_for_object: BTreeMap<ObjectId, Vec<HoiId>> = BTreeMap::new();

        for (pos, c) in categories.iter().enumerate() {
            if !c.hoi_id.in_range() {
                return Err(Error::Validation(format!(
                    "hoi_id {} outside [1, {}]",
                    c.hoi_id,
                    HoiId::MAX
                )));
            }
            if !c.object_id.in_range() {
                return Err(Error::Validation(format!(
                    "hoi {}: object_id {} outside [1, {}]",
                    c.hoi_id,
                    c.object_id,
                    ObjectId::MAX
                )));
            }
            if !c.verb_id.in_range() {
                return Err(Error::Validation(format!(
                    "hoi {}: verb_id {} outside [1, {}]",
                    c.hoi_id,
                    c.verb_id,
                    VerbId::MAX
                )));
            }
            if index.insert(c.hoi_id, pos).is_some() {
                return Err(Error::Validation(format!("duplicate hoi_id {}", c.hoi_id)));
            }
            if let Some(prev) = by_pair.insert((c.object_id, c.verb_id), c.hoi_id) {
                return Err(Error::Validation(format!(
                    "hoi {} and hoi {} share (object_id {}, verb_id {})",
                    prev, c.hoi_id, c.object_id, c.verb_id
                )));
            }
            match object_names.insert(c.object_id, &c.object_name) {
                Some(prev) if prev != c.object_name => {
                    return Err(Error::Validation(format!(
                        "object_id {} named both {prev:?} and {:?}",
                        c.object_id, c.object_name
                    )))
                }
                _ => {}
            }
            match verb_names.insert(c.verb_id, &c.verb_name) {
                Some(prev) if prev != c.verb_name => {
                    return Err(Error::Validation(format!(
                        "verb_id {} named both {prev:?} and {:?}",
                        c.verb_id, c.verb_name
                    )))
                }
                _ => {}
            }
            verbs_for_object.entry(c.object_id).or_default().push(c.verb_id);
            hois_for_object.entry(c.object_id).or_default().push(c.hoi_id);
        }
        for verbs in verbs_for_object.values_mut() {
            verbs.sort_unstable();
        }
        // hoi ids are already ascending because categories are sorted

        Ok(HoiTaxonomy {
            categories,
            index,
            by_pair,
            verbs_for_object,
            hois_for_object,
        })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[HoiCategory] {
        &self.categories
    }

    pub fn ids(&self) -> impl Iterator<Item = HoiId> + '_ {
        self.categories.iter().map(|c| c.hoi_id)
    }

    pub fn get(&self, id: HoiId) -> Option<&HoiCategory> {
        self.index.get(&id).map(|&i| &self.categories[i])
    }

    pub fn contains(&self, id: HoiId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn lookup(&self, object: ObjectId, verb: VerbId) -> Option<HoiId> {
        self.by_pair.get(&(object, verb)).copied()
    }

    /// Verbs valid for `object`, ascending by verb id.
    pub fn verbs_for_object(&self, object: ObjectId) -> &[VerbId] {
        self.verbs_for_object
            .get(&object)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// HOI classes valid for `object`, ascending by hoi id.
    pub fn hois_for_object(&self, object: ObjectId) -> &[HoiId] {
        self.hois_for_object
            .get(&object)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn verbs_by_object(&self) -> &BTreeMap<ObjectId, Vec<VerbId>> {
        &self.verbs_for_object
    }

    pub fn object_ids(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.verbs_for_object.keys().copied()
    }

    pub fn has_object(&self, object: ObjectId) -> bool {
        self.verbs_for_object.contains_key(&object)
    }

    /// Distinct verbs with their names, ascending by id.
    pub fn verbs(&self) -> BTreeMap<VerbId, &str> {
        self.categories
            .iter()
            .map(|c| (c.verb_id, c.verb_name.as_str()))
            .collect()
    }

    /// Distinct objects with their names, ascending by id.
    pub fn objects(&self) -> BTreeMap<ObjectId, &str> {
        self.categories
            .iter()
            .map(|c| (c.object_id, c.object_name.as_str()))
            .collect()
    }

    pub fn rare_ids(&self) -> Vec<HoiId> {
        self.categories
            .iter()
            .filter(|c| c.rare)
            .map(|c| c.hoi_id)
            .collect()
    }

    pub fn non_rare_ids(&self) -> Vec<HoiId> {
        self.categories
            .iter()
            .filter(|c| !c.rare)
            .map(|c| c.hoi_id)
            .collect()
    }

    /// Object id whose name is `person`, if the taxonomy has one.
    pub fn person_object_id(&self) -> Option<ObjectId> {
        self.categories
            .iter()
            .find(|c| c.object_name == PERSON)
            .map(|c| c.object_id)
    }

    /// Checks the full HICO-DET shape: 600 classes (138 rare), all 80 objects
    /// and all 117 verbs present.
    pub fn check_hico_det_shape(&self) -> Result<()> {
        if self.len() != HICO_DET_NUM_HOIS {
            return Err(Error::Validation(format!(
                "expected {HICO_DET_NUM_HOIS} HOI categories, found {}",
                self.len()
            )));
        }
        let rare = self.rare_ids().len();
        if rare != HICO_DET_NUM_RARE {
            return Err(Error::Validation(format!(
                "expected {HICO_DET_NUM_RARE} rare categories, found {rare}"
            )));
        }
        if let Some(o) = (1..=HICO_DET_NUM_OBJECTS).find(|&o| !self.has_object(ObjectId(o))) {
            return Err(Error::Validation(format!("object_id {o} has no verbs")));
        }
        let verbs = self.verbs();
        if let Some(v) = (1..=HICO_DET_NUM_VERBS).find(|&v| !verbs.contains_key(&VerbId(v))) {
            return Err(Error::Validation(format!("verb_id {v} unused")));
        }
        Ok(())
    }
}

/// Loads a taxonomy JSON file (top-level array of category records).
pub fn load_taxonomy(path: &Path) -> Result<HoiTaxonomy> {
    let raw: Vec<serde_json::Value> = jsonl::read_json(path)?;
    let mut categories = Vec::with_capacity(raw.len());
    for (idx, value) in raw.into_iter().enumerate() {
        let hint = value
            .get("hoi_id")
            .map(|v| format!(" (hoi_id {v})"))
            .unwrap_or_default();
        let cat: HoiCategory = serde_json::from_value(value)
            .map_err(|e| Error::format(path, format!("record {idx}{hint}"), e))?;
        categories.push(cat);
    }
    HoiTaxonomy::from_categories(categories)
}

pub fn write_taxonomy(path: &Path, taxonomy: &HoiTaxonomy) -> Result<()> {
    jsonl::write_json_pretty(path, &taxonomy.categories)
}
