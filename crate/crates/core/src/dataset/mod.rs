//! Split-test-set datasets: manifest schema, validation, caption filling,
//! mask ingestion, and procedural toy data.

pub mod caption;
pub mod imageio;
pub mod manifest;
pub mod mask;
pub mod synth;
pub mod validate;

pub use caption::fill_caption;
pub use manifest::{load_manifest, DatasetManifest, ImageRecord, SubjectRecord, SCHEMA_VERSION};
pub use mask::{ingest_mask, MaskPair, DEFAULT_THRESHOLD};
pub use synth::{synth_toy_dataset, Composition, SynthDataset, SynthSpec};
pub use validate::{validate_manifest, Profile, ValidationReport, Violation, ViolationKind};
