//! Dataset ingestion, label encoding, re-sampling splits, augmentation and
//! synthetic corpora.

pub mod age;
pub mod dataset;
pub mod image;
pub mod labels;
pub mod records;
pub mod split;
pub mod synth;

pub use age::AgeScaler;
pub use dataset::{ImageDataset, ImageSource};
pub use image::{augment_train, preprocess_eval, AugmentParams, GrayImage};
pub use labels::{Labels, DISPLAY_NAMES, LABELS, NO_FINDING, NUM_PATHOLOGIES};
pub use records::{parse_entry_csv, read_entry_csv, write_entry_csv, DatasetStats, Record};
pub use split::{make_splits, official_split, Resample, SplitPlan, Subset};
pub use synth::{synth_dataset, BBox, Disc, PatientSizes, PlantedLabel, SynthCorpus, SynthSpec};
