//! Interaction logs, padded sequences, splits and dataset transforms.

pub mod attrs;
pub mod cache;
pub mod ingest;
pub mod log;
pub mod sequence;
pub mod synth;
pub mod transform;

pub use attrs::ItemAttributes;
pub use cache::Prepared;
pub use ingest::{ingest, parse_canonical_csv, parse_movielens_dat, to_canonical_csv, Format, CSV_HEADER};
pub use log::{Event, InteractionEvent, InteractionLog, LogStats, Vocab};
pub use sequence::{build_sequences, split_leave_last, SequenceOptions, SequenceSet, Split, Task, UserSequence};
pub use synth::{population_auc, population_logloss, synth_generate, SynthOutput, SynthRule, SynthSpec, SynthTruth};
pub use transform::{binarize_feedback, filter_behaviors, k_core, merge_domains, sample_negatives, sample_negatives_all};
