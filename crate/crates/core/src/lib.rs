//! Data portraits: strided Bloom-filter sketches of a text corpus.
//!
//! A portrait records every non-overlapping character n-gram (tile) of each
//! corpus document. Queries test every n-gram of the input at stride one and
//! chain hits spaced one width apart into inferred overlapping spans. Any
//! corpus substring of length at least `2 * width - 1` is guaranteed to
//! contain a whole tile, so it always produces at least one hit.

pub mod ingest;
pub mod query;
pub mod report;
pub mod sketch;
pub mod textnorm;

pub use ingest::{build_portrait, estimate_elements, BuildReport, DocumentSource, Input, SourceFormat};
pub use query::{check_document, classify_membership, Chain, OverlapSummary, QueryReport};
pub use report::CheckResponse;
pub use sketch::{plan_parameters, BloomFilter, FilterParams, SketchError};
pub use textnorm::{normalize, NormalizedText};
