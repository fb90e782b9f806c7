//! Dataset ingestion, feature files and the synthetic generator.

mod dialogs;
mod features;
pub mod synthetic;

pub use dialogs::{
    check_disjoint, feature_path, joined_caption, load_dataset, parse_dialog_file, read_manifest, save_dataset,
    select, write_manifest, DialogFile, DialogRecord, DialogueSample, QaRecord, Turn,
};
pub use features::{VideoAudioFeatures, FEATURE_EXTENSION, FEATURE_MAGIC, FEATURE_VERSION};
pub use synthetic::{generate_synthetic, split_ids, OracleRecord, SyntheticSpec};
