//! On-disk formats: the `GLAN` tensor dump, checkpoints and metric records.

mod dump;
mod records;

pub use dump::{load_checkpoint, save_checkpoint, CheckpointManifest, EmbeddingDump, DUMP_MAGIC, DUMP_VERSION};
pub use records::{validate_metric, MetricsRecord, METRIC_REGISTRY, METRIC_REGISTRY_VERSION};
