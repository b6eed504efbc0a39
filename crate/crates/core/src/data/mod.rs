//! Interaction logs, preprocessing, and aligned per-course/merged sequences.

mod align;
mod dataset;
mod records;

pub use align::{merge_and_pad, truncate, AlignedTriple, Chronological, Slot, Step};
pub use dataset::{
    preprocess, split, Dataset, DatasetSplit, PreprocessOptions, SplitManifest, Vocab,
    DATASET_FORMAT, DATASET_VERSION,
};
pub use records::{
    load_concept_map, load_interactions, parse_concept_map, parse_interactions, ConceptMap,
    Course, InteractionLog, InteractionRecord, INTERACTION_HEADER,
};
