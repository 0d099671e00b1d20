//! Zero-shot split definitions.
//!
//! A split partitions the taxonomy into unseen and seen classes. The
//! `default` split is special: its "unseen" side is the rare set and its
//! "seen" side the non-rare set, which is how rare / non-rare columns are
//! reported.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::taxonomy::{HoiId, HoiTaxonomy, ObjectId, VerbId, NO_INTERACTION};
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Default,
    UnseenCombination,
    RareFirst,
    NonRareFirst,
    UnseenObject,
    UnseenVerb,
}

impl SplitName {
    /// Reporting order.
    pub const ALL: [SplitName; 6] = [
        SplitName::Default,
        SplitName::UnseenCombination,
        SplitName::RareFirst,
        SplitName::NonRareFirst,
        SplitName::UnseenObject,
        SplitName::UnseenVerb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Default => "default",
            SplitName::UnseenCombination => "unseen_combination",
            SplitName::RareFirst => "rare_first",
            SplitName::NonRareFirst => "non_rare_first",
            SplitName::UnseenObject => "unseen_object",
            SplitName::UnseenVerb => "unseen_verb",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown split name {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDefinition {
    pub name: SplitName,
    pub unseen: BTreeSet<HoiId>,
    pub seen: BTreeSet<HoiId>,
    pub source: String,
}

/// On-disk split file. Exactly one of the `unseen_*` lists is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen_hoi_ids: Option<Vec<HoiId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen_object_ids: Option<Vec<ObjectId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen_verb_ids: Option<Vec<VerbId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_hoi_ids: Option<Vec<HoiId>>,
    /// Declared size of the expanded unseen set, checked on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_unseen: Option<usize>,
    #[serde(default)]
    pub source: String,
}

fn no_duplicates<T: Copy + Eq + std::hash::Hash + fmt::Display>(what: &str, ids: &[T]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for &id in ids {
        if !seen.insert(id) {
            return Err(Error::Validation(format!("duplicate {what} {id}")));
        }
    }
    Ok(())
}

impl SplitDefinition {
    /// Expands and validates a split file against `taxonomy`.
    pub fn from_file(file: &SplitFile, taxonomy: &HoiTaxonomy) -> Result<Self> {
        let name: SplitName = file.name.parse()?;
        let given = [
            file.unseen_hoi_ids.is_some(),
            file.unseen_object_ids.is_some(),
            file.unseen_verb_ids.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if given > 1 {
            return Err(Error::Validation(format!(
                "split {name}: give only one of unseen_hoi_ids, unseen_object_ids, unseen_verb_ids"
            )));
        }
        if file.unseen_object_ids.is_some() && name != SplitName::UnseenObject {
            return Err(Error::Validation(format!(
                "split {name}: unseen_object_ids is only valid for unseen_object"
            )));
        }
        if file.unseen_verb_ids.is_some() && name != SplitName::UnseenVerb {
            return Err(Error::Validation(format!(
                "split {name}: unseen_verb_ids is only valid for unseen_verb"
            )));
        }

        let unseen: BTreeSet<HoiId> = if let Some(objects) = &file.unseen_object_ids {
            no_duplicates("object id", objects)?;
            let mut set = BTreeSet::new();
            for &o in objects {
                let hois = taxonomy.hois_for_object(o);
                if hois.is_empty() {
                    return Err(Error::Validation(format!(
                        "split {name}: object id {o} not in taxonomy"
                    )));
                }
                set.extend(hois.iter().copied());
            }
            set
        } else if let Some(verbs) = &file.unseen_verb_ids {
            no_duplicates("verb id", verbs)?;
            let wanted: HashSet<VerbId> = verbs.iter().copied().collect();
            let known = taxonomy.verbs();
            if let Some(v) = verbs.iter().find(|v| !known.contains_key(v)) {
                return Err(Error::Validation(format!(
                    "split {name}: verb id {v} not in taxonomy"
                )));
            }
            taxonomy
                .categories()
                .iter()
                .filter(|c| wanted.contains(&c.verb_id))
                .map(|c| c.hoi_id)
                .collect()
        } else if let Some(ids) = &file.unseen_hoi_ids {
            no_duplicates("hoi id", ids)?;
            if let Some(id) = ids.iter().find(|&&id| !taxonomy.contains(id)) {
                return Err(Error::Validation(format!(
                    "split {name}: unseen hoi id {id} not in taxonomy"
                )));
            }
            ids.iter().copied().collect()
        } else if name == SplitName::Default {
            taxonomy.rare_ids().into_iter().collect()
        } else {
            return Err(Error::Validation(format!(
                "split {name}: no unseen ids given"
            )));
        };

        let all: BTreeSet<HoiId> = taxonomy.ids().collect();
        let seen: BTreeSet<HoiId> = all.difference(&unseen).copied().collect();

        match name {
            SplitName::Default => {
                let rare: BTreeSet<HoiId> = taxonomy.rare_ids().into_iter().collect();
                if unseen != rare {
                    return Err(Error::Validation(
                        "split default: unseen ids must equal the taxonomy's rare set".into(),
                    ));
                }
            }
            SplitName::UnseenObject => {
                let objects: BTreeSet<ObjectId> = unseen
                    .iter()
                    .filter_map(|&id| taxonomy.get(id))
                    .map(|c| c.object_id)
                    .collect();
                for o in objects {
                    if let Some(h) = taxonomy
                        .hois_for_object(o)
                        .iter()
                        .find(|h| !unseen.contains(h))
                    {
                        return Err(Error::Validation(format!(
                            "split unseen_object: hoi {h} of held-out object {o} marked seen"
                        )));
                    }
                }
            }
            SplitName::UnseenVerb => {
                let verbs: BTreeSet<VerbId> = unseen
                    .iter()
                    .filter_map(|&id| taxonomy.get(id))
                    .map(|c| c.verb_id)
                    .collect();
                if let Some(c) = taxonomy
                    .categories()
                    .iter()
                    .find(|c| verbs.contains(&c.verb_id) && !unseen.contains(&c.hoi_id))
                {
                    return Err(Error::Validation(format!(
                        "split unseen_verb: hoi {} of held-out verb {} marked seen",
                        c.hoi_id, c.verb_id
                    )));
                }
            }
            _ => {}
        }

        if let Some(listed) = &file.seen_hoi_ids {
            no_duplicates("seen hoi id", listed)?;
            let listed: BTreeSet<HoiId> = listed.iter().copied().collect();
            if listed != seen {
                return Err(Error::Validation(format!(
                    "split {name}: unseen and seen ids do not partition the taxonomy"
                )));
            }
        }
        if let Some(n) = file.num_unseen {
            if n != unseen.len() {
                return Err(Error::Validation(format!(
                    "split {name}: declares {n} unseen classes, expands to {}",
                    unseen.len()
                )));
            }
        }

        Ok(SplitDefinition {
            name,
            unseen,
            seen,
            source: file.source.clone(),
        })
    }

    /// The rare / non-rare partition.
    pub fn default_for(taxonomy: &HoiTaxonomy) -> Self {
        let unseen: BTreeSet<HoiId> = taxonomy.rare_ids().into_iter().collect();
        let seen = taxonomy.non_rare_ids().into_iter().collect();
        SplitDefinition {
            name: SplitName::Default,
            unseen,
            seen,
            source: "taxonomy rare flags".into(),
        }
    }
}

/// Loads one split file; `name` must match the file's own `name` field.
pub fn load_split(name: SplitName, path: &Path, taxonomy: &HoiTaxonomy) -> Result<SplitDefinition> {
    let file: SplitFile = jsonl::read_json(path)?;
    if file.name != name.as_str() {
        return Err(Error::Validation(format!(
            "{}: expected split {name}, file declares {:?}",
            path.display(),
            file.name
        )));
    }
    SplitDefinition::from_file(&file, taxonomy)
}

/// Loads every `<split name>.json` present in `dir`, in reporting order.
pub fn load_splits_dir(dir: &Path, taxonomy: &HoiTaxonomy) -> Result<Vec<SplitDefinition>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "splits directory {} does not exist",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for name in SplitName::ALL {
        let path = dir.join(format!("{name}.json"));
        if path.is_file() {
            out.push(load_split(name, &path, taxonomy)?);
        }
    }
    Ok(out)
}

pub fn write_split_file(path: &Path, file: &SplitFile) -> Result<()> {
    jsonl::write_json_pretty(path, file)
}

// Conventional hold-out sizes for the full 600-class taxonomy.
const CONVENTIONAL_COMBINATIONS: usize = 120;
const CONVENTIONAL_OBJECTS: usize = 12;
const CONVENTIONAL_VERBS: usize = 20;

fn scaled(conventional: usize, reference: usize, actual: usize) -> usize {
    ((conventional * actual) as f64 / reference as f64).round().max(1.0) as usize
}

/// Picks `k` items spread evenly across `items` (centre of each stratum).
fn evenly_spaced<T: Copy>(items: &[T], k: usize) -> Vec<T> {
    let k = k.min(items.len());
    (0..k)
        .map(|i| items[((2 * i + 1) * items.len()) / (2 * k)])
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Generates the six default split files for `taxonomy`.
///
/// Sizes follow the usual zero-shot hold-out counts (120 classes for the
/// combination splits, 12 objects, 20 verbs), scaled proportionally for
/// smaller taxonomies. Membership is deterministic:
///
/// * `rare_first`: the lowest-id rare classes.
/// * `non_rare_first`: the lowest-id non-rare classes.
/// * `unseen_combination`: a stride walk over class ids that only holds out a
///   class while its object and verb both keep at least one seen class.
/// * `unseen_object` / `unseen_verb`: evenly spaced ids, skipping `person`
///   and `no_interaction`.
pub fn generate_default_splits(taxonomy: &HoiTaxonomy) -> Vec<SplitFile> {
    let total = taxonomy.len();
    let rare = taxonomy.rare_ids();
    let non_rare = taxonomy.non_rare_ids();
    let n_comb = scaled(CONVENTIONAL_COMBINATIONS, 600, total);
    let mut files = Vec::with_capacity(6);

    let blank = |name: SplitName, source: String| SplitFile {
        name: name.as_str().to_string(),
        unseen_hoi_ids: None,
        unseen_object_ids: None,
        unseen_verb_ids: None,
        seen_hoi_ids: None,
        num_unseen: None,
        source,
    };

    let mut f = blank(
        SplitName::Default,
        "rare classes from the taxonomy's rare flags".into(),
    );
    f.num_unseen = Some(rare.len());
    f.unseen_hoi_ids = Some(rare.clone());
    files.push(f);

    // unseen_combination: stride walk keeping every object and verb seen
    let ids: Vec<HoiId> = taxonomy.ids().collect();
    let mut stride = 7;
    while gcd(stride, total.max(1)) != 1 {
        stride += 1;
    }
    let mut seen_per_object = std::collections::HashMap::new();
    let mut seen_per_verb = std::collections::HashMap::new();
    for c in taxonomy.categories() {
        *seen_per_object.entry(c.object_id).or_insert(0usize) += 1;
        *seen_per_verb.entry(c.verb_id).or_insert(0usize) += 1;
    }
    let mut comb = Vec::new();
    for k in 0..total {
        if comb.len() == n_comb {
            break;
        }
        let id = ids[(k * stride) % total];
        let c = taxonomy.get(id).expect("id from taxonomy");
        let (o, v) = (seen_per_object[&c.object_id], seen_per_verb[&c.verb_id]);
        if o > 1 && v > 1 {
            *seen_per_object.get_mut(&c.object_id).unwrap() -= 1;
            *seen_per_verb.get_mut(&c.verb_id).unwrap() -= 1;
            comb.push(id);
        }
    }
    comb.sort_unstable();
    let mut f = blank(
        SplitName::UnseenCombination,
        format!(
            "stride-{stride} walk over class ids; each object and verb keeps a seen class"
        ),
    );
    f.num_unseen = Some(comb.len());
    f.unseen_hoi_ids = Some(comb);
    files.push(f);

    let rf: Vec<HoiId> = rare.iter().copied().take(n_comb).collect();
    let mut f = blank(
        SplitName::RareFirst,
        format!("first {} rare classes by hoi id", rf.len()),
    );
    f.num_unseen = Some(rf.len());
    f.unseen_hoi_ids = Some(rf);
    files.push(f);

    let nf: Vec<HoiId> = non_rare.iter().copied().take(n_comb).collect();
    let mut f = blank(
        SplitName::NonRareFirst,
        format!("first {} non-rare classes by hoi id", nf.len()),
    );
    f.num_unseen = Some(nf.len());
    f.unseen_hoi_ids = Some(nf);
    files.push(f);

    let objects: Vec<ObjectId> = taxonomy
        .objects()
        .into_iter()
        .filter(|(_, name)| *name != super::taxonomy::PERSON)
        .map(|(id, _)| id)
        .collect();
    let n_obj = scaled(CONVENTIONAL_OBJECTS, 80, objects.len() + 1);
    let held_objects = evenly_spaced(&objects, n_obj);
    let mut f = blank(
        SplitName::UnseenObject,
        format!("{} evenly spaced object ids, person excluded", held_objects.len()),
    );
    f.num_unseen = Some(
        held_objects
            .iter()
            .map(|&o| taxonomy.hois_for_object(o).len())
            .sum(),
    );
    f.unseen_object_ids = Some(held_objects);
    files.push(f);

    let verbs: Vec<VerbId> = taxonomy
        .verbs()
        .into_iter()
        .filter(|(_, name)| *name != NO_INTERACTION)
        .map(|(id, _)| id)
        .collect();
    let n_verb = scaled(CONVENTIONAL_VERBS, 117, verbs.len() + 1);
    let held_verbs = evenly_spaced(&verbs, n_verb);
    let held_set: HashSet<VerbId> = held_verbs.iter().copied().collect();
    let mut f = blank(
        SplitName::UnseenVerb,
        format!(
            "{} evenly spaced verb ids, no_interaction excluded",
            held_verbs.len()
        ),
    );
    f.num_unseen = Some(
        taxonomy
            .categories()
            .iter()
            .filter(|c| held_set.contains(&c.verb_id))
            .count(),
    );
    f.unseen_verb_ids = Some(held_verbs);
    files.push(f);

    files
}
