//! Streaming corpus ingestion.
//!
//! Documents are read one at a time from JSONL, plain-text or line-per-document
//! inputs (optionally gzip/zstd compressed), normalized, tiled, and inserted.
//! With several shards each worker owns its own filter and the results are
//! OR-merged at the end, which gives the same bits as a sequential build.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;
use walkdir::WalkDir;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::sketch::{BloomFilter, FilterParams, SketchError};
use crate::textnorm::{normalize, strided_count, strided_ngrams};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error at document {doc_index} ({location}): {source}")]
    Io {
        doc_index: u64,
        location: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceFormat {
    /// One JSON object per line, text under `field`.
    Jsonl { field: String },
    /// One document per file; directories are walked in sorted order.
    Text,
    /// One document per non-blank line.
    Lines,
}

impl SourceFormat {
    pub fn jsonl(field: impl Into<String>) -> Self {
        SourceFormat::Jsonl { field: field.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Path(PathBuf),
    Stdin,
}

impl Input {
    /// `-` is stdin.
    pub fn parse(s: &str) -> Self {
        if s == "-" {
            Input::Stdin
        } else {
            Input::Path(PathBuf::from(s))
        }
    }

    fn describe(&self) -> String {
        match self {
            Input::Path(p) => p.display().to_string(),
            Input::Stdin => "<stdin>".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DocumentSource {
    pub format: SourceFormat,
    pub inputs: Vec<Input>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Document(String),
    /// A record that could not be decoded; skipped and counted.
    Malformed { location: String, reason: String },
}

impl DocumentSource {
    pub fn new(format: SourceFormat, inputs: Vec<Input>) -> Self {
        DocumentSource { format, inputs }
    }

    pub fn reads_stdin(&self) -> bool {
        self.inputs.iter().any(|i| *i == Input::Stdin)
    }

    /// Streams every record. `f` returning an error stops the walk.
    pub fn for_each_record<F>(&self, mut f: F) -> Result<()>
    where
        F: FnMut(Record) -> Result<()>,
    {
        let mut doc_index: u64 = 0;
        for input in &self.inputs {
            let files = match input {
                Input::Stdin => vec![Input::Stdin],
                Input::Path(p) => expand_path(p).map_err(|source| IngestError::Io {
                    doc_index,
                    location: p.display().to_string(),
                    source,
                })?,
            };
            for file in files {
                self.read_one(&file, &mut doc_index, &mut f)?;
            }
        }
        Ok(())
    }

    fn read_one<F>(&self, input: &Input, doc_index: &mut u64, f: &mut F) -> Result<()>
    where
        F: FnMut(Record) -> Result<()>,
    {
        let location = input.describe();
        let io_err = |doc_index: u64, source: io::Error| IngestError::Io { doc_index, location: location.clone(), source };
        let mut reader = open_input(input).map_err(|e| io_err(*doc_index, e))?;

        match &self.format {
            SourceFormat::Text => {
                let mut bytes = Vec::new();
                reader.read_to_end(&mut bytes).map_err(|e| io_err(*doc_index, e))?;
                *doc_index += 1;
                match String::from_utf8(bytes) {
                    Ok(text) => f(Record::Document(text))?,
                    Err(_) => f(Record::Malformed { location: location.clone(), reason: "invalid UTF-8".into() })?,
                }
            }
            SourceFormat::Lines | SourceFormat::Jsonl { .. } => {
                let mut line = Vec::new();
                let mut line_no: u64 = 0;
                loop {
                    line.clear();
                    let n = reader.read_until(b'\n', &mut line).map_err(|e| io_err(*doc_index, e))?;
                    if n == 0 {
                        break;
                    }
                    line_no += 1;
                    if line.iter().all(|b| b.is_ascii_whitespace()) {
                        continue;
                    }
                    *doc_index += 1;
                    let at = || format!("{location}:{line_no}");
                    let record = match (&self.format, std::str::from_utf8(&line)) {
                        (_, Err(_)) => Record::Malformed { location: at(), reason: "invalid UTF-8".into() },
                        (SourceFormat::Jsonl { field }, Ok(text)) => match extract_field(text, field) {
                            Ok(doc) => Record::Document(doc),
                            Err(reason) => Record::Malformed { location: at(), reason },
                        },
                        (_, Ok(text)) => Record::Document(text.trim_end_matches(['\n', '\r']).to_string()),
                    };
                    f(record)?;
                }
            }
        }
        Ok(())
    }

    /// Collects all well-formed documents. Convenience for small inputs.
    pub fn read_all(&self) -> Result<Vec<String>> {
        let mut docs = Vec::new();
        self.for_each_record(|r| {
            if let Record::Document(d) = r {
                docs.push(d);
            }
            Ok(())
        })?;
        Ok(docs)
    }
}

fn extract_field(line: &str, field: &str) -> std::result::Result<String, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    match value.get(field) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("field {field:?} is not a string")),
        None => Err(format!("missing field {field:?}")),
    }
}

fn expand_path(path: &Path) -> io::Result<Vec<Input>> {
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(io::Error::other)?;
            if entry.file_type().is_file() {
                files.push(Input::Path(entry.into_path()));
            }
        }
        Ok(files)
    } else {
        Ok(vec![Input::Path(path.to_path_buf())])
    }
}

fn open_input(input: &Input) -> io::Result<Box<dyn BufRead>> {
    const BUF: usize = 1 << 20;
    let path = match input {
        Input::Stdin => return Ok(Box::new(BufReader::with_capacity(BUF, io::stdin()))),
        Input::Path(p) => p,
    };
    let file = File::open(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    Ok(match ext {
        "gz" => Box::new(BufReader::with_capacity(BUF, flate2::read::MultiGzDecoder::new(file))),
        "zst" | "zstd" => Box::new(BufReader::with_capacity(BUF, zstd::Decoder::new(file)?)),
        _ => Box::new(BufReader::with_capacity(BUF, file)),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub documents: u64,
    pub malformed_records: u64,
    pub tiles_hashed: u64,
    pub chars_in: u64,
    pub elapsed_secs: f64,
    pub final_saturation: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    documents: u64,
    tiles: u64,
    chars: u64,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.documents += other.documents;
        self.tiles += other.tiles;
        self.chars += other.chars;
    }
}

/// Normalizes `raw` and inserts each tile's UTF-8 bytes. Returns the tile count.
pub fn insert_document(filter: &mut BloomFilter, raw: &str) -> u64 {
    let (width, stride) = (filter.params().ngram_width, filter.params().stride);
    let nt = normalize(raw);
    let mut tiles = 0;
    for g in strided_ngrams(&nt, width, stride) {
        filter.insert(g.text.as_bytes());
        tiles += 1;
    }
    tiles
}

fn ingest_one(filter: &mut BloomFilter, raw: &str) -> Tally {
    Tally { documents: 1, tiles: insert_document(filter, raw), chars: raw.chars().count() as u64 }
}

const BATCH_DOCS: usize = 256;
const BATCH_BYTES: usize = 4 << 20;

/// Builds a portrait over every record the callback produces.
///
/// `produce` is handed a sink and must push each record into it; this keeps
/// the reader on the calling thread while shard workers hash in parallel.
fn build_with<P>(params: &FilterParams, shards: usize, produce: P) -> Result<(BloomFilter, BuildReport)>
where
    P: FnOnce(&mut dyn FnMut(Record) -> Result<()>) -> Result<()>,
{
    if shards == 0 {
        return Err(IngestError::InvalidArgument("shards must be >= 1".into()));
    }
    params.validate()?;
    let started = Instant::now();
    let mut malformed = 0u64;

    let (filter, tally) = if shards == 1 {
        let mut filter = BloomFilter::new(params.clone())?;
        let mut tally = Tally::default();
        produce(&mut |record| {
            match record {
                Record::Document(doc) => tally.add(ingest_one(&mut filter, &doc)),
                Record::Malformed { .. } => malformed += 1,
            }
            Ok(())
        })?;
        (filter, tally)
    } else {
        std::thread::scope(|scope| -> Result<(BloomFilter, Tally)> {
            let mut senders = Vec::with_capacity(shards);
            let mut workers = Vec::with_capacity(shards);
            for _ in 0..shards {
                let (tx, rx) = mpsc::sync_channel::<Vec<String>>(4);
                senders.push(tx);
                let shard_params = params.clone();
                workers.push(scope.spawn(move || -> Result<(BloomFilter, Tally)> {
                    let mut filter = BloomFilter::new(shard_params)?;
                    let mut tally = Tally::default();
                    for batch in rx {
                        for doc in &batch {
                            tally.add(ingest_one(&mut filter, doc));
                        }
                    }
                    Ok((filter, tally))
                }));
            }

            let mut batch = Vec::with_capacity(BATCH_DOCS);
            let mut batch_bytes = 0usize;
            let mut next = 0usize;
            let produced = produce(&mut |record| {
                match record {
                    Record::Document(doc) => {
                        batch_bytes += doc.len();
                        batch.push(doc);
                        if batch.len() >= BATCH_DOCS || batch_bytes >= BATCH_BYTES {
                            let full = std::mem::replace(&mut batch, Vec::with_capacity(BATCH_DOCS));
                            batch_bytes = 0;
                            // a closed channel means the worker failed; its error surfaces on join
                            let _ = senders[next].send(full);
                            next = (next + 1) % shards;
                        }
                    }
                    Record::Malformed { .. } => malformed += 1,
                }
                Ok(())
            });
            if !batch.is_empty() {
                let _ = senders[next].send(std::mem::take(&mut batch));
            }
            drop(senders);

            let mut merged: Option<BloomFilter> = None;
            let mut tally = Tally::default();
            for worker in workers {
                let (filter, t) = worker.join().expect("shard worker panicked")?;
                tally.add(t);
                match merged.as_mut() {
                    None => merged = Some(filter),
                    Some(m) => m.merge_from(&filter)?,
                }
            }
            produced?;
            Ok((merged.expect("at least one shard"), tally))
        })?
    };

    let report = BuildReport {
        documents: tally.documents,
        malformed_records: malformed,
        tiles_hashed: tally.tiles,
        chars_in: tally.chars,
        elapsed_secs: started.elapsed().as_secs_f64(),
        final_saturation: filter.saturation(),
    };
    Ok((filter, report))
}

/// Streams `source` into a new portrait with geometry `params`.
pub fn build_portrait(source: &DocumentSource, params: &FilterParams, shards: usize) -> Result<(BloomFilter, BuildReport)> {
    build_with(params, shards, |sink| source.for_each_record(|r| sink(r)))
}

/// Same as [`build_portrait`] over in-memory documents.
pub fn build_from_documents<I, S>(docs: I, params: &FilterParams, shards: usize) -> Result<(BloomFilter, BuildReport)>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    build_with(params, shards, |sink| {
        for d in docs {
            sink(Record::Document(d.into()))?;
        }
        Ok(())
    })
}

/// Estimated number of tiles `source` will produce.
///
/// A document is sampled when a seeded hash of its index falls below
/// `sample_fraction` (the first document is always sampled). The tile count of
/// sampled documents is scaled by total raw characters over sampled raw
/// characters. With `sample_fraction == 1.0` the result is exact.
pub fn estimate_elements(source: &DocumentSource, width: usize, stride: usize, sample_fraction: f64, seed: u64) -> Result<u64> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(IngestError::InvalidArgument(format!("sample_fraction must be in (0, 1], got {sample_fraction}")));
    }
    if width == 0 || stride == 0 {
        return Err(IngestError::InvalidArgument("width and stride must be >= 1".into()));
    }
    let threshold = if sample_fraction >= 1.0 { u64::MAX } else { (sample_fraction * u64::MAX as f64) as u64 };
    let mut index = 0u64;
    let (mut total_chars, mut sampled_chars, mut sampled_tiles) = (0u64, 0u64, 0u64);
    source.for_each_record(|r| {
        if let Record::Document(doc) = r {
            let chars = doc.chars().count() as u64;
            total_chars += chars;
            if index == 0 || xxh3_64_with_seed(&index.to_le_bytes(), seed) <= threshold {
                sampled_chars += chars;
                sampled_tiles += strided_count(normalize(&doc).len(), width, stride) as u64;
            }
            index += 1;
        }
        Ok(())
    })?;
    if sample_fraction >= 1.0 || sampled_chars == total_chars {
        return Ok(sampled_tiles);
    }
    if sampled_chars == 0 {
        return Ok(0);
    }
    Ok((sampled_tiles as f64 * total_chars as f64 / sampled_chars as f64).round() as u64)
}
