//! Test-set annotations, the HOI class taxonomy and zero-shot split definitions.

pub mod annotations;
pub mod splits;
pub mod taxonomy;

pub use annotations::{load_annotations, AnnotatedImage, Annotations, GroundTruthInstance, ImageRecord};
pub use splits::{
    generate_default_splits, load_split, load_splits_dir, SplitDefinition, SplitFile, SplitName,
};
pub use taxonomy::{load_taxonomy, HoiCategory, HoiId, HoiTaxonomy, ObjectId, VerbId};
