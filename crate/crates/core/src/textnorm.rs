//! Whitespace normalization and character n-gram extraction.
//!
//! Positions are Unicode scalar indices throughout. A normalized text keeps a
//! map from each normalized position back to the original text so matches can
//! be highlighted on what the user actually submitted.

/// The six ASCII whitespace scalars that collapse to one space.
pub fn is_collapsible_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r' | '\x0B' | '\x0C')
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NormalizedText {
    text: String,
    /// Byte offset of each scalar in `text`, plus a final `text.len()` sentinel.
    byte_starts: Vec<usize>,
    offset_map: Vec<usize>,
}

impl NormalizedText {
    /// Number of scalars.
    pub fn len(&self) -> usize {
        self.offset_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset_map.is_empty()
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.text.chars()
    }

    /// Original-text scalar index for each normalized position.
    pub fn offset_map(&self) -> &[usize] {
        &self.offset_map
    }

    /// The `len` scalars starting at normalized position `start`.
    pub fn slice(&self, start: usize, len: usize) -> &str {
        &self.text[self.byte_starts[start]..self.byte_starts[start + len]]
    }

    /// Original-text half-open range covering normalized `[start, start + len)`.
    pub fn original_span(&self, start: usize, len: usize) -> (usize, usize) {
        debug_assert!(len > 0);
        (self.offset_map[start], self.offset_map[start + len - 1] + 1)
    }
}

pub fn normalize(raw: &str) -> NormalizedText {
    let mut text = String::with_capacity(raw.len());
    let mut byte_starts = Vec::with_capacity(raw.len() + 1);
    let mut offset_map = Vec::with_capacity(raw.len());
    let mut pending_space: Option<usize> = None;

    for (i, c) in raw.chars().enumerate() {
        if is_collapsible_whitespace(c) {
            pending_space.get_or_insert(i);
            continue;
        }
        if let Some(run_start) = pending_space.take() {
            if !offset_map.is_empty() {
                byte_starts.push(text.len());
                offset_map.push(run_start);
                text.push(' ');
            }
        }
        byte_starts.push(text.len());
        offset_map.push(i);
        text.push(c);
    }
    byte_starts.push(text.len());
    NormalizedText { text, byte_starts, offset_map }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ngram<'a> {
    pub start: usize,
    pub text: &'a str,
}

/// Tiles starting at 0, stride, 2*stride, ...; a short tail is dropped.
pub fn strided_ngrams(nt: &NormalizedText, width: usize, stride: usize) -> impl Iterator<Item = Ngram<'_>> {
    assert!(width >= 1 && stride >= 1, "width and stride must be positive");
    let last_start = nt.len().checked_sub(width);
    (0..)
        .map(move |i| i * stride)
        .take_while(move |&s| last_start.is_some_and(|l| s <= l))
        .map(move |start| Ngram { start, text: nt.slice(start, width) })
}

/// One n-gram at every position in `[0, len - width]`.
pub fn sliding_ngrams(nt: &NormalizedText, width: usize) -> impl Iterator<Item = Ngram<'_>> {
    assert!(width >= 1, "width must be positive");
    let count = sliding_count(nt.len(), width);
    (0..count).map(move |start| Ngram { start, text: nt.slice(start, width) })
}

pub fn sliding_count(len: usize, width: usize) -> usize {
    (len + 1).saturating_sub(width)
}

pub fn strided_count(len: usize, width: usize, stride: usize) -> usize {
    if len < width {
        0
    } else {
        (len - width) / stride + 1
    }
}
