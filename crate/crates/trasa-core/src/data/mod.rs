//! Data pipeline: raw event-log ingestion, the filtering/augmentation
//! protocol, deterministic splits and batches, synthetic corpora for
//! verification, and the versioned on-disk formats.

pub mod files;
pub mod ingest;
pub mod pipeline;
pub mod synth;

pub use ingest::{ingest, ingest_lines, ColumnRef, HeaderMode, IngestFormat, IngestReport, RawSession};
pub use pipeline::{
    augment_session, batches, compute_stats, epoch_order, filter_sessions, mix_seed, process,
    DatasetStats, Instance, PipelineConfig, ProcessedDataset, Vocab,
};
pub use synth::{long_range, markov, to_raw_sessions, LongRangeParams, MarkovCorpus, MarkovParams};
