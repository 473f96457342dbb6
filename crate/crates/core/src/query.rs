//! Membership queries against a portrait.
//!
//! Every sliding n-gram of the normalized query is tested. True flags spaced
//! exactly one width apart are chained into a single inferred span: the tiles
//! were seen in the corpus, but not necessarily adjacent to each other.

use serde::Serialize;
use thiserror::Error;

use crate::sketch::BloomFilter;
use crate::textnorm::{normalize, sliding_ngrams, NormalizedText};

pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("no reports to summarize")]
    EmptyInput,
}

/// A maximal run of true flags at `start, start + width, ...` in flag coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSpan {
    pub start: usize,
    pub count: usize,
}

/// Partitions true flags into maximal runs with common difference `width`.
pub fn find_chains(flags: &[bool], width: usize) -> Vec<ChainSpan> {
    assert!(width >= 1, "width must be positive");
    let mut spans = Vec::new();
    for (i, &hit) in flags.iter().enumerate() {
        // a flag whose predecessor one width back is set already belongs to that chain
        if !hit || (i >= width && flags[i - width]) {
            continue;
        }
        let mut count = 1;
        while flags.get(i + count * width).copied().unwrap_or(false) {
            count += 1;
        }
        spans.push(ChainSpan { start: i, count });
    }
    spans
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chain {
    /// Half-open range in the original (unnormalized) text, in scalar positions.
    pub start_orig: usize,
    pub end_orig: usize,
    pub start_norm: usize,
    pub count: usize,
    pub char_length: usize,
    /// Normalized text covered by the chain.
    pub text: String,
}

impl Chain {
    fn from_span(span: ChainSpan, width: usize, nt: &NormalizedText) -> Self {
        let char_length = span.count * width;
        let (start_orig, end_orig) = nt.original_span(span.start, char_length);
        Chain {
            start_norm: span.start,
            count: span.count,
            char_length,
            start_orig,
            end_orig,
            text: nt.slice(span.start, char_length).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryReport {
    pub ngram_width: usize,
    pub flags: Vec<bool>,
    /// All maximal chains, in order of their first n-gram.
    pub chains: Vec<Chain>,
    /// Index into `chains` of the longest chain; ties go to the earliest.
    pub longest: Option<usize>,
    pub doc_norm_length: usize,
    pub expected_matches: f64,
    pub overlap_ratio: f64,
}

impl QueryReport {
    pub fn longest_chain(&self) -> Option<&Chain> {
        self.longest.map(|i| &self.chains[i])
    }

    /// Longest chain length in n-grams, 0 when nothing matched.
    pub fn longest_count(&self) -> usize {
        self.longest_chain().map_or(0, |c| c.count)
    }

    pub fn match_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Runs the full query protocol for one raw document.
pub fn check_document(filter: &BloomFilter, raw: &str) -> QueryReport {
    let nt = normalize(raw);
    check_normalized(filter, &nt)
}

pub fn check_normalized(filter: &BloomFilter, nt: &NormalizedText) -> QueryReport {
    let width = filter.params().ngram_width;
    let flags: Vec<bool> = sliding_ngrams(nt, width).map(|g| filter.contains(g.text.as_bytes())).collect();
    let chains: Vec<Chain> = find_chains(&flags, width).into_iter().map(|s| Chain::from_span(s, width, nt)).collect();
    let longest = chains
        .iter()
        .enumerate()
        // max_by_key keeps the last maximum; reverse so the earliest start wins ties
        .rev()
        .max_by_key(|(_, c)| c.char_length)
        .map(|(i, _)| i);
    let doc_norm_length = nt.len();
    let overlap_ratio = match longest {
        Some(i) if doc_norm_length > 0 => chains[i].char_length as f64 / doc_norm_length as f64,
        _ => 0.0,
    };
    QueryReport {
        ngram_width: width,
        flags,
        chains,
        longest,
        doc_norm_length,
        expected_matches: expected_matches(doc_norm_length, width),
        overlap_ratio,
    }
}

/// Matches expected for a fully present string of length `n`, averaged over
/// the `width` equally likely tile alignments: `(n - width + 1) / width`.
pub fn expected_matches(n: usize, width: usize) -> f64 {
    assert!(width >= 1, "width must be positive");
    if n < width {
        0.0
    } else {
        (n - width + 1) as f64 / width as f64
    }
}

pub fn classify_membership(report: &QueryReport, threshold: f64) -> bool {
    report.overlap_ratio > threshold
}

/// Upper bound on the chance that `count` independent spurious matches line up.
pub fn chain_fp_probability(count: usize, fpr: f64) -> f64 {
    fpr.powi(count as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSummary {
    pub dataset_name: String,
    pub instances: u64,
    pub expected_overlap_pct: f64,
    pub total_query_seconds: f64,
    /// Set when the metric exceeds 100%, which aligned or spurious chains can cause.
    pub exceeds_expectation: bool,
}

/// Streaming accumulator for the expected-overlap metric.
#[derive(Debug, Clone, Default)]
pub struct OverlapAccumulator {
    instances: u64,
    observed: u64,
    expected: f64,
    seconds: f64,
}

impl OverlapAccumulator {
    pub fn add(&mut self, report: &QueryReport) {
        self.instances += 1;
        self.observed += report.longest_count() as u64;
        self.expected += report.expected_matches;
    }

    pub fn add_seconds(&mut self, secs: f64) {
        self.seconds += secs;
    }

    pub fn instances(&self) -> u64 {
        self.instances
    }

    /// Sum of longest-chain counts over sum of expected matches, as a percentage.
    pub fn finish(self, dataset_name: impl Into<String>) -> Result<OverlapSummary, QueryError> {
        if self.instances == 0 {
            return Err(QueryError::EmptyInput);
        }
        let pct = if self.expected > 0.0 { 100.0 * self.observed as f64 / self.expected } else { 0.0 };
        Ok(OverlapSummary {
            dataset_name: dataset_name.into(),
            instances: self.instances,
            expected_overlap_pct: pct,
            total_query_seconds: self.seconds,
            exceeds_expectation: pct > 100.0,
        })
    }
}

pub fn expected_overlap<'a, I>(dataset_name: &str, reports: I) -> Result<OverlapSummary, QueryError>
where
    I: IntoIterator<Item = &'a QueryReport>,
{
    let mut acc = OverlapAccumulator::default();
    for r in reports {
        acc.add(r);
    }
    acc.finish(dataset_name)
}
