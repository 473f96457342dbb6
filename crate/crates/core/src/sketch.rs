//! Bloom filter backing a portrait.
//!
//! Probes use double hashing over two seeded xxh3-64 evaluations of the
//! element: `index_i = (h1 + i * h2) mod m_bits` with `h2` forced odd and the
//! sum computed in wrapping 64-bit arithmetic before the reduction.
//!
//! On-disk layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DPBF"
//!      4     4  format_version (1)
//!      8     4  hash_algorithm_id
//!     12     8  seed
//!     20     4  ngram_width
//!     24     4  stride
//!     28     4  k_hashes
//!     32     8  m_bits
//!     40     8  inserted
//!     48    16  reserved, zero
//!     64     *  payload, ceil(m_bits / 8) bytes, bit j at byte j >> 3, position j & 7
//!      *     8  FNV-1a 64 over header and payload
//! ```

use std::hash::Hasher;
use std::io::{self, Read, Write};

use fnv::FnvHasher;
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub const MAGIC: [u8; 4] = *b"DPBF";
pub const FORMAT_VERSION: u32 = 1;
/// Double hashing over two xxh3-64 evaluations (second seed = seed ^ [`SECOND_SEED_MASK`]).
pub const HASH_XXH3_DOUBLE: u32 = 1;
pub const HEADER_LEN: usize = 64;
pub const TRAILER_LEN: usize = 8;

const SECOND_SEED_MASK: u64 = 0x9E37_79B9_7F4A_7C15;

pub const DEFAULT_WIDTH: usize = 50;
pub const DEFAULT_FPR: f64 = 1e-3;
pub const DEFAULT_SEED: u64 = 0;
pub const MAX_HASHES: u32 = 64;

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parameter mismatch: {0}")]
    ParamsMismatch(String),
    #[error("bad magic: expected \"DPBF\", found {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("unsupported hash algorithm id {0}")]
    HashUnsupported(u32),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = SketchError> = std::result::Result<T, E>;

/// Geometry of a portrait.
///
/// `target_fpr` is a planning input and is not stored in the file format; it
/// is `None` for filters read back from disk and is ignored by
/// [`FilterParams::compatible_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub m_bits: u64,
    pub k_hashes: u32,
    pub ngram_width: usize,
    pub stride: usize,
    pub seed: u64,
    pub target_fpr: Option<f64>,
}

impl FilterParams {
    pub fn new(m_bits: u64, k_hashes: u32, ngram_width: usize, stride: usize, seed: u64) -> Result<Self> {
        let params = FilterParams { m_bits, k_hashes, ngram_width, stride, seed, target_fpr: None };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_bits < 8 {
            return Err(SketchError::InvalidArgument(format!("m_bits must be >= 8, got {}", self.m_bits)));
        }
        if self.k_hashes == 0 || self.k_hashes > MAX_HASHES {
            return Err(SketchError::InvalidArgument(format!(
                "k_hashes must be in 1..={MAX_HASHES}, got {}",
                self.k_hashes
            )));
        }
        if self.ngram_width == 0 || self.ngram_width > u32::MAX as usize {
            return Err(SketchError::InvalidArgument(format!("ngram_width must be >= 1, got {}", self.ngram_width)));
        }
        if self.stride == 0 || self.stride > self.ngram_width {
            return Err(SketchError::InvalidArgument(format!(
                "stride must be in 1..={}, got {}",
                self.ngram_width, self.stride
            )));
        }
        if let Some(p) = self.target_fpr {
            if !(p > 0.0 && p < 1.0) {
                return Err(SketchError::InvalidArgument(format!("target_fpr must be in (0, 1), got {p}")));
            }
        }
        Ok(())
    }

    pub fn with_ngrams(mut self, width: usize, stride: usize) -> Result<Self> {
        self.ngram_width = width;
        self.stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// True when two filters can be merged: every persisted field agrees.
    pub fn compatible_with(&self, other: &FilterParams) -> bool {
        self.m_bits == other.m_bits
            && self.k_hashes == other.k_hashes
            && self.ngram_width == other.ngram_width
            && self.stride == other.stride
            && self.seed == other.seed
    }

    pub fn payload_len(&self) -> usize {
        payload_len(self.m_bits)
    }
}

fn payload_len(m_bits: u64) -> usize {
    m_bits.div_ceil(8) as usize
}

/// Optimal Bloom sizing for `expected_elements` at `target_fpr`.
///
/// The returned params use the default n-gram width and stride (50/50) and
/// seed 0; adjust with [`FilterParams::with_ngrams`] and [`FilterParams::with_seed`].
pub fn plan_parameters(expected_elements: u64, target_fpr: f64) -> Result<FilterParams> {
    if expected_elements == 0 {
        return Err(SketchError::InvalidArgument("expected_elements must be >= 1".into()));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(SketchError::InvalidArgument(format!("target_fpr must be in (0, 1), got {target_fpr}")));
    }
    let ln2 = std::f64::consts::LN_2;
    let n = expected_elements as f64;
    let m = (-n * target_fpr.ln() / (ln2 * ln2)).ceil() as u64;
    let k = ((m as f64 / n) * ln2).round().clamp(1.0, MAX_HASHES as f64) as u32;
    Ok(FilterParams {
        // the file format needs at least one byte of payload
        m_bits: m.max(8),
        k_hashes: k,
        ngram_width: DEFAULT_WIDTH,
        stride: DEFAULT_WIDTH,
        seed: DEFAULT_SEED,
        target_fpr: Some(target_fpr),
    })
}

/// Raw `m_bits` from the closed form, before the 8-bit floor the file format imposes.
pub fn planned_bits(expected_elements: u64, target_fpr: f64) -> u64 {
    let ln2 = std::f64::consts::LN_2;
    (-(expected_elements as f64) * target_fpr.ln() / (ln2 * ln2)).ceil() as u64
}

/// The `(h1, h2)` pair from which all probes of `element` are derived.
#[inline]
pub fn base_hashes(element: &[u8], seed: u64) -> (u64, u64) {
    let h1 = xxh3_64_with_seed(element, seed);
    let h2 = xxh3_64_with_seed(element, seed ^ SECOND_SEED_MASK) | 1;
    (h1, h2)
}

/// Probe positions of `element`, in probe order.
pub fn hash_indices(element: &[u8], params: &FilterParams) -> Vec<u64> {
    probes(element, params).collect()
}

#[inline]
fn probes(element: &[u8], params: &FilterParams) -> impl Iterator<Item = u64> {
    let (h1, h2) = base_hashes(element, params.seed);
    let m = params.m_bits;
    (0..params.k_hashes as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % m)
}

#[derive(Clone)]
pub struct BloomFilter {
    params: FilterParams,
    words: Vec<u64>,
    inserted: u64,
}

impl std::fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BloomFilter")
            .field("params", &self.params)
            .field("inserted", &self.inserted)
            .field("ones", &self.count_ones())
            .finish()
    }
}

/// Equality over persisted state: geometry, counter and every bit.
impl PartialEq for BloomFilter {
    fn eq(&self, other: &Self) -> bool {
        self.params.compatible_with(&other.params) && self.inserted == other.inserted && self.words == other.words
    }
}

impl Eq for BloomFilter {}

impl BloomFilter {
    pub fn new(params: FilterParams) -> Result<Self> {
        params.validate()?;
        let words = vec![0u64; params.m_bits.div_ceil(64) as usize];
        Ok(BloomFilter { params, words, inserted: 0 })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn m_bits(&self) -> u64 {
        self.params.m_bits
    }

    pub fn insert(&mut self, element: &[u8]) {
        let (h1, h2) = base_hashes(element, self.params.seed);
        let m = self.params.m_bits;
        for i in 0..self.params.k_hashes as u64 {
            let j = h1.wrapping_add(i.wrapping_mul(h2)) % m;
            self.words[(j >> 6) as usize] |= 1u64 << (j & 63);
        }
        self.inserted += 1;
    }

    pub fn contains(&self, element: &[u8]) -> bool {
        probes(element, &self.params).all(|j| self.bit(j))
    }

    #[inline]
    pub fn bit(&self, j: u64) -> bool {
        self.words[(j >> 6) as usize] >> (j & 63) & 1 == 1
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Fraction of set bits.
    pub fn saturation(&self) -> f64 {
        self.count_ones() as f64 / self.params.m_bits as f64
    }

    /// False-positive rate implied by the current fill: `saturation^k`.
    pub fn estimated_fpr(&self) -> f64 {
        self.saturation().powi(self.params.k_hashes as i32)
    }

    pub fn bits_per_element(&self) -> Option<f64> {
        (self.inserted > 0).then(|| self.params.m_bits as f64 / self.inserted as f64)
    }

    /// OR `other` into `self`.
    pub fn merge_from(&mut self, other: &BloomFilter) -> Result<()> {
        if !self.params.compatible_with(&other.params) {
            return Err(SketchError::ParamsMismatch(format!("{:?} vs {:?}", self.params, other.params)));
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
        self.inserted += other.inserted;
        Ok(())
    }

    pub fn merge(a: &BloomFilter, b: &BloomFilter) -> Result<BloomFilter> {
        let mut out = a.clone();
        out.merge_from(b)?;
        Ok(out)
    }

    /// Sets every bit. Used for saturation tests and canaries.
    pub fn fill_all(&mut self) {
        self.words.iter_mut().for_each(|w| *w = u64::MAX);
        self.clear_tail();
    }

    fn clear_tail(&mut self) {
        let rem = self.params.m_bits % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let p = &self.params;
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        h[8..12].copy_from_slice(&HASH_XXH3_DOUBLE.to_le_bytes());
        h[12..20].copy_from_slice(&p.seed.to_le_bytes());
        h[20..24].copy_from_slice(&(p.ngram_width as u32).to_le_bytes());
        h[24..28].copy_from_slice(&(p.stride as u32).to_le_bytes());
        h[28..32].copy_from_slice(&p.k_hashes.to_le_bytes());
        h[32..40].copy_from_slice(&p.m_bits.to_le_bytes());
        h[40..48].copy_from_slice(&self.inserted.to_le_bytes());
        h
    }

    /// Total encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.params.payload_len() + TRAILER_LEN
    }

    pub fn serialize<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut fnv = FnvHasher::default();
        let header = self.header();
        fnv.write(&header);
        sink.write_all(&header)?;

        let total = self.params.payload_len();
        let mut buf = Vec::with_capacity(8 * 8192);
        let mut written = 0usize;
        for chunk in self.words.chunks(8192) {
            buf.clear();
            for w in chunk {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            let take = buf.len().min(total - written);
            fnv.write(&buf[..take]);
            sink.write_all(&buf[..take])?;
            written += take;
        }
        sink.write_all(&fnv.finish().to_le_bytes())?;
        sink.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.serialize(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads one portrait and requires the source to end right after the trailer.
    pub fn deserialize<R: Read>(mut source: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        read_exact_or_truncated(&mut source, &mut header, "header")?;
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&header[0..4]);
        if magic != MAGIC {
            return Err(SketchError::BadMagic(magic));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(SketchError::VersionUnsupported(version));
        }
        let hash_id = u32_at(8);
        if hash_id != HASH_XXH3_DOUBLE {
            return Err(SketchError::HashUnsupported(hash_id));
        }
        if header[48..64].iter().any(|&b| b != 0) {
            return Err(SketchError::InvalidHeader("reserved bytes are not zero".into()));
        }
        let params = FilterParams {
            seed: u64_at(12),
            ngram_width: u32_at(20) as usize,
            stride: u32_at(24) as usize,
            k_hashes: u32_at(28),
            m_bits: u64_at(32),
            target_fpr: None,
        };
        params.validate().map_err(|e| SketchError::InvalidHeader(e.to_string()))?;
        let inserted = u64_at(40);

        let mut fnv = FnvHasher::default();
        fnv.write(&header);

        let payload_len = params.payload_len();
        let n_words = params.m_bits.div_ceil(64) as usize;
        let mut words = Vec::with_capacity(n_words);
        let mut buf = vec![0u8; 8 * 8192];
        let mut remaining = payload_len;
        while remaining > 0 {
            let take = remaining.min(buf.len());
            read_exact_or_truncated(&mut source, &mut buf[..take], "payload").map_err(|e| match e {
                SketchError::Truncated(_) => SketchError::Truncated(format!(
                    "header declares m_bits = {} ({} payload bytes) but the stream ended early",
                    params.m_bits, payload_len
                )),
                other => other,
            })?;
            fnv.write(&buf[..take]);
            for chunk in buf[..take].chunks(8) {
                let mut w = [0u8; 8];
                w[..chunk.len()].copy_from_slice(chunk);
                words.push(u64::from_le_bytes(w));
            }
            remaining -= take;
        }
        debug_assert_eq!(words.len(), n_words);

        let mut trailer = [0u8; TRAILER_LEN];
        read_exact_or_truncated(&mut source, &mut trailer, "checksum trailer")?;
        let stored = u64::from_le_bytes(trailer);
        let computed = fnv.finish();
        if stored != computed {
            return Err(SketchError::ChecksumMismatch { stored, computed });
        }
        let mut extra = [0u8; 1];
        loop {
            match source.read(&mut extra) {
                Ok(0) => break,
                Ok(_) => {
                    return Err(SketchError::Truncated(format!(
                        "stream continues past the {} bytes implied by m_bits = {}",
                        HEADER_LEN + payload_len + TRAILER_LEN,
                        params.m_bits
                    )))
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }

        let filter = BloomFilter { params, words, inserted };
        let rem = filter.params.m_bits % 64;
        if rem != 0 && filter.words.last().is_some_and(|w| w >> rem != 0) {
            return Err(SketchError::InvalidHeader("payload has bits set beyond m_bits".into()));
        }
        Ok(filter)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::deserialize(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.serialize(io::BufWriter::with_capacity(1 << 20, file))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::deserialize(io::BufReader::with_capacity(1 << 20, file))
    }
}

fn read_exact_or_truncated<R: Read>(source: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            SketchError::Truncated(format!("stream ended inside the {what}"))
        } else {
            SketchError::Io(e)
        }
    })
}
