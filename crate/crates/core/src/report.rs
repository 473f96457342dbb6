//! Wire and text renderings of query results.
//!
//! [`CheckResponse`] is the JSON body of `POST /v1/check` and the output of
//! `dportrait check --json`; both go through [`CheckResponse::to_json`] so the
//! bytes agree.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::query::{classify_membership, Chain, OverlapSummary, QueryReport, DEFAULT_THRESHOLD};
use crate::sketch::BloomFilter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub start_orig: usize,
    pub end_orig: usize,
    pub start_norm: usize,
    pub count: usize,
    pub char_length: usize,
    pub text: String,
}

impl From<&Chain> for ChainRecord {
    fn from(c: &Chain) -> Self {
        ChainRecord {
            start_orig: c.start_orig,
            end_orig: c.end_orig,
            start_norm: c.start_norm,
            count: c.count,
            char_length: c.char_length,
            text: c.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResponse {
    pub portrait: String,
    pub ngram_width: usize,
    pub doc_norm_length: usize,
    /// Sorted by `char_length` descending, then by start.
    pub chains: Vec<ChainRecord>,
    pub longest_chain: Option<ChainRecord>,
    pub overlap_ratio: f64,
    pub expected_matches: f64,
    pub is_member: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<bool>>,
    pub elapsed_ms: f64,
}

impl CheckResponse {
    pub fn from_report(portrait: &str, report: &QueryReport, include_flags: bool, elapsed_ms: f64) -> Self {
        let mut chains: Vec<ChainRecord> = report.chains.iter().map(ChainRecord::from).collect();
        chains.sort_by(|a, b| b.char_length.cmp(&a.char_length).then(a.start_norm.cmp(&b.start_norm)));
        CheckResponse {
            portrait: portrait.to_string(),
            ngram_width: report.ngram_width,
            doc_norm_length: report.doc_norm_length,
            chains,
            longest_chain: report.longest_chain().map(ChainRecord::from),
            overlap_ratio: report.overlap_ratio,
            expected_matches: report.expected_matches,
            is_member: classify_membership(report, DEFAULT_THRESHOLD),
            flags: include_flags.then(|| report.flags.clone()),
            elapsed_ms,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }

    /// Human-readable summary plus the chain table, longest first.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let verdict = if self.is_member { "member" } else { "not a member" };
        let _ = writeln!(out, "portrait:          {}", self.portrait);
        let _ = writeln!(out, "ngram width:       {}", self.ngram_width);
        let _ = writeln!(out, "normalized length: {}", self.doc_norm_length);
        let _ = writeln!(out, "expected matches:  {:.3}", self.expected_matches);
        match &self.longest_chain {
            Some(c) => {
                let _ = writeln!(out, "longest chain:     {} chars ({} n-grams)", c.char_length, c.count);
            }
            None => {
                let _ = writeln!(out, "longest chain:     none");
            }
        }
        let _ = writeln!(out, "overlap ratio:     {:.4}", self.overlap_ratio);
        let _ = writeln!(out, "verdict:           {verdict} (threshold {DEFAULT_THRESHOLD})");
        let _ = writeln!(out, "elapsed:           {:.3} ms", self.elapsed_ms);
        if self.chains.is_empty() {
            return out;
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "inferred spans (chained tiles may not be contiguous in the corpus):");
        let _ = writeln!(out, "{:>8} {:>8} {:>6} {:>10}  text", "start", "end", "ngrams", "chars");
        for c in &self.chains {
            let _ = writeln!(
                out,
                "{:>8} {:>8} {:>6} {:>10}  {}",
                c.start_orig,
                c.end_orig,
                c.count,
                c.char_length,
                preview(&c.text, 60)
            );
        }
        out
    }
}

fn preview(text: &str, max_chars: usize) -> String {
    let mut chars = text.chars();
    let mut s: String = chars.by_ref().take(max_chars).collect();
    if chars.next().is_some() {
        s.push('…');
    }
    s
}

/// Metadata for one mounted or inspected portrait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortraitInfo {
    pub name: String,
    pub ngram_width: usize,
    pub stride: usize,
    pub m_bits: u64,
    pub k_hashes: u32,
    pub inserted: u64,
    pub saturation: f64,
}

impl PortraitInfo {
    pub fn describe(name: &str, filter: &BloomFilter) -> Self {
        let p = filter.params();
        PortraitInfo {
            name: name.to_string(),
            ngram_width: p.ngram_width,
            stride: p.stride,
            m_bits: p.m_bits,
            k_hashes: p.k_hashes,
            inserted: filter.inserted(),
            saturation: filter.saturation(),
        }
    }
}

pub fn overlap_table_header() -> String {
    format!("{:<24} {:>10} {:>12} {:>10}", "Dataset", "%E.O.", "Instances", "Time")
}

pub fn overlap_table_row(s: &OverlapSummary) -> String {
    let flag = if s.exceeds_expectation { "  (above expectation)" } else { "" };
    format!(
        "{:<24} {:>9.2}% {:>12} {:>10.3}{flag}",
        s.dataset_name, s.expected_overlap_pct, s.instances, s.total_query_seconds
    )
}

pub fn overlap_table_sum(instances: u64, seconds: f64) -> String {
    format!("{:<24} {:>10} {:>12} {:>10.3}", "Sum", "-", instances, seconds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::build_from_documents;
    use crate::query::check_document;
    use crate::sketch::FilterParams;

    fn fixture() -> BloomFilter {
        let params = FilterParams::new(1 << 14, 5, 4, 4, 1).unwrap();
        build_from_documents(["abcdefghijklmnop", "zzzzqqqq"], &params, 1).unwrap().0
    }

    #[test]
    fn chains_sorted_longest_first() {
        let f = fixture();
        let report = check_document(&f, "zzzz--abcdefghijkl");
        let resp = CheckResponse::from_report("fx", &report, false, 0.0);
        assert_eq!(resp.chains.len(), 2);
        assert_eq!(resp.chains[0].char_length, 12);
        assert_eq!(resp.chains[1].char_length, 4);
        assert_eq!(resp.longest_chain.as_ref().unwrap().start_norm, 6);
        assert!(resp.flags.is_none());
    }

    #[test]
    fn json_field_order_and_optional_flags() {
        let f = fixture();
        let report = check_document(&f, "abcdefghijklmnop");
        let resp = CheckResponse::from_report("fx", &report, true, 1.5);
        let json = resp.to_json();
        let keys = [
            "\"portrait\"",
            "\"ngram_width\"",
            "\"doc_norm_length\"",
            "\"chains\"",
            "\"longest_chain\"",
            "\"overlap_ratio\"",
            "\"expected_matches\"",
            "\"is_member\"",
            "\"flags\"",
            "\"elapsed_ms\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(resp.is_member);
        let back: CheckResponse = serde_json::from_str(&json).unwrap();
        assert_eq!(back, resp);

        let without = CheckResponse::from_report("fx", &report, false, 1.5).to_json();
        assert!(!without.contains("\"flags\""));
    }

    #[test]
    fn empty_document_response() {
        let f = fixture();
        let resp = CheckResponse::from_report("fx", &check_document(&f, ""), false, 0.0);
        assert!(resp.chains.is_empty());
        assert!(resp.longest_chain.is_none());
        assert!(!resp.is_member);
        assert!(resp.to_json().contains("\"longest_chain\":null"));
        assert!(resp.render_text().contains("longest chain:     none"));
    }

    #[test]
    fn text_rendering_labels_inferred_spans() {
        let f = fixture();
        let resp = CheckResponse::from_report("fx", &check_document(&f, "abcdefghijklmnop"), false, 0.0);
        let text = resp.render_text();
        assert!(text.contains("inferred spans"));
        assert!(text.contains("abcdefghijklmnop"));
        assert!(text.contains("verdict:           member"));
    }
}
