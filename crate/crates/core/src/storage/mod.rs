//! Persistence and reproducibility plumbing: question datasets, run
//! configuration, the response cache, and output manifests.

mod cache;
mod config;
mod dataset;
mod manifest;

pub use cache::{CacheEntry, CacheError, ResponseCache};
pub use config::{
    AgentsSection, CalibrateSection, ConsultancySection, ConsultancyVariant, LossCheckSection,
    LossSection, PrefGenSection, ProtocolSection, ReportSection, RosterEntry, RunConfig,
    TournamentSection,
};
pub use dataset::{
    load_questions, read_jsonl, validate_dataset, write_jsonl, write_questions, DatasetError,
    DatasetIssue, DatasetReport,
};
pub use manifest::{sha256_hex, ArtifactEntry, ManifestError, RunManifest, MANIFEST_FILE};
