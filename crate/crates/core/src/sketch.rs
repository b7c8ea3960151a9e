//! MinHash signatures and a banded LSH index for approximate max-Jaccard lookup.
//!
//! Signatures use a seeded family of universal hashes
//! `h_i(x) = (a_i * x + b_i) mod (2^61 - 1)`. Two signatures are only
//! comparable when they share length and seed.

use std::collections::HashMap;
use std::fs::{self, File};
use std::hash::Hasher;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use indexmap::IndexMap;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexshingle::{self, LexError, Lexer, ShingleSet};

pub const DEFAULT_NUM_PERM: usize = 256;
pub const DEFAULT_RETRIEVAL_THRESHOLD: f64 = 0.85;
pub const MIN_NUM_PERM: usize = 16;

const MERSENNE_61: u64 = (1 << 61) - 1;
const SNAPSHOT_MAGIC: &[u8; 8] = b"ALSHIDX\0";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("num_perm must be at least {MIN_NUM_PERM}, got {0}")]
    TooFewPermutations(usize),
    #[error("incompatible signatures: {0}")]
    Incompatible(String),
    #[error("id {0:?} is already in the index")]
    DuplicateId(String),
    #[error("invalid banding: {bands} bands x {rows} rows != {num_perm} permutations")]
    InvalidBanding {
        bands: usize,
        rows: usize,
        num_perm: usize,
    },
    #[error("corrupt index snapshot: {0}")]
    CorruptSnapshot(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-coordinate minima of a shingle set under `values.len()` hash functions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MinHashSignature {
    pub seed: u64,
    pub values: Vec<u64>,
}

impl MinHashSignature {
    pub fn num_perm(&self) -> usize {
        self.values.len()
    }

    /// Signature of the empty set: every coordinate at the sentinel maximum.
    pub fn empty(num_perm: usize, seed: u64) -> Self {
        Self {
            seed,
            values: vec![u64::MAX; num_perm],
        }
    }

    pub fn is_empty_set(&self) -> bool {
        self.values.iter().all(|&v| v == u64::MAX)
    }

    fn check_compatible(&self, other: &Self) -> Result<(), SketchError> {
        if self.values.len() != other.values.len() {
            return Err(SketchError::Incompatible(format!(
                "lengths {} and {}",
                self.values.len(),
                other.values.len()
            )));
        }
        if self.seed != other.seed {
            return Err(SketchError::Incompatible(format!(
                "seeds {:#x} and {:#x}",
                self.seed, other.seed
            )));
        }
        Ok(())
    }

    /// Little-endian bytes of the values, the on-disk form.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(seed: u64, bytes: &[u8]) -> Result<Self, SketchError> {
        if !bytes.len().is_multiple_of(8) {
            return Err(SketchError::CorruptSnapshot(format!(
                "signature byte length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { seed, values })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_le_bytes())
    }

    pub fn from_hex(seed: u64, text: &str) -> Result<Self, SketchError> {
        let bytes = hex::decode(text)
            .map_err(|e| SketchError::CorruptSnapshot(format!("signature hex: {e}")))?;
        Self::from_le_bytes(seed, &bytes)
    }
}

/// Fraction of coordinates on which the two signatures agree.
///
/// The empty-set signature estimates 0 against anything but another empty-set
/// signature, against which it estimates 1.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, SketchError> {
    a.check_compatible(b)?;
    match (a.is_empty_set(), b.is_empty_set()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    if a.values.is_empty() {
        return Ok(1.0);
    }
    let equal = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x == y)
        .count();
    Ok(equal as f64 / a.values.len() as f64)
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    // x < 2^122 here, so two folds suffice
    let folded = (x & MERSENNE_61 as u128) + (x >> 61);
    let folded = (folded & MERSENNE_61 as u128) + (folded >> 61);
    let mut r = folded as u64;
    if r >= MERSENNE_61 {
        r -= MERSENNE_61;
    }
    r
}

/// Seeded universal hash family producing MinHash signatures.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    coefficients: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(num_perm: usize, seed: u64) -> Result<Self, SketchError> {
        if num_perm < MIN_NUM_PERM {
            return Err(SketchError::TooFewPermutations(num_perm));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |nonzero: bool| loop {
            let v = rng.next_u64() >> 3;
            if v < MERSENNE_61 && (!nonzero || v != 0) {
                break v;
            }
        };
        let coefficients = (0..num_perm).map(|_| (draw(true), draw(false))).collect();
        Ok(Self { seed, coefficients })
    }

    pub fn num_perm(&self) -> usize {
        self.coefficients.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signature(&self, shingles: &ShingleSet) -> MinHashSignature {
        self.signature_of(shingles.iter())
    }

    pub fn signature_of(&self, items: impl IntoIterator<Item = u64>) -> MinHashSignature {
        let mut values = vec![u64::MAX; self.coefficients.len()];
        for item in items {
            let x = mod_mersenne(item as u128) as u128;
            for (slot, &(a, b)) in values.iter_mut().zip(&self.coefficients) {
                let h = mod_mersenne(a as u128 * x + b as u128);
                if h < *slot {
                    *slot = h;
                }
            }
        }
        MinHashSignature {
            seed: self.seed,
            values,
        }
    }
}

/// Parameters that fully determine how source text maps to a signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    pub k: usize,
    pub num_perm: usize,
    pub seed: u64,
    pub bands: usize,
    pub rows: usize,
    pub retrieval_threshold: f64,
    pub max_source_bytes: usize,
}

impl SketchParams {
    pub fn new(k: usize, num_perm: usize, seed: u64) -> Result<Self, SketchError> {
        let banding = LshParams::for_threshold(num_perm, DEFAULT_RETRIEVAL_THRESHOLD)?;
        Ok(Self {
            k,
            num_perm,
            seed,
            bands: banding.bands,
            rows: banding.rows,
            retrieval_threshold: DEFAULT_RETRIEVAL_THRESHOLD,
            max_source_bytes: lexshingle::DEFAULT_MAX_SOURCE_BYTES,
        })
    }

    pub fn lsh(&self) -> LshParams {
        LshParams {
            bands: self.bands,
            rows: self.rows,
        }
    }
}

/// Source text to signature: lex, shingle, MinHash.
#[derive(Debug, Clone)]
pub struct Sketcher {
    params: SketchParams,
    lexer: Lexer,
    hasher: MinHasher,
}

impl Sketcher {
    pub fn new(params: SketchParams) -> Result<Self, SketchError> {
        params.lsh().validate(params.num_perm)?;
        Ok(Self {
            params,
            lexer: Lexer::new(params.max_source_bytes),
            hasher: MinHasher::new(params.num_perm, params.seed)?,
        })
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn lexer(&self) -> &Lexer {
        &self.lexer
    }

    pub fn shingles(&self, source: &str) -> Result<ShingleSet, LexError> {
        let tokens = self.lexer.tokenize(source)?;
        Ok(lexshingle::shingle(&tokens, self.params.k))
    }

    pub fn sketch(&self, source: &str) -> Result<MinHashSignature, LexError> {
        Ok(self.hasher.signature(&self.shingles(source)?))
    }

    pub fn empty_index(&self) -> LshIndex {
        LshIndex::new(
            self.params.lsh(),
            self.params.num_perm,
            self.params.seed,
            self.params.retrieval_threshold,
        )
        .expect("banding validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshParams {
    pub bands: usize,
    pub rows: usize,
}

impl LshParams {
    /// Picks the `bands x rows` factorization of `num_perm` whose collision
    /// curve midpoint `(1/b)^(1/r)` lies closest to `threshold`.
    pub fn for_threshold(num_perm: usize, threshold: f64) -> Result<Self, SketchError> {
        if num_perm < MIN_NUM_PERM {
            return Err(SketchError::TooFewPermutations(num_perm));
        }
        let best = (1..=num_perm)
            .filter(|b| num_perm.is_multiple_of(*b))
            .map(|b| Self {
                bands: b,
                rows: num_perm / b,
            })
            .min_by(|x, y| {
                let dx = (x.operating_point() - threshold).abs();
                let dy = (y.operating_point() - threshold).abs();
                dx.total_cmp(&dy)
            })
            .expect("num_perm has at least one divisor");
        Ok(best)
    }

    pub fn operating_point(&self) -> f64 {
        (1.0 / self.bands as f64).powf(1.0 / self.rows as f64)
    }

    /// Probability that a pair with per-coordinate agreement `j` shares at least one band.
    pub fn collision_probability(&self, j: f64) -> f64 {
        1.0 - (1.0 - j.powi(self.rows as i32)).powi(self.bands as i32)
    }

    fn validate(&self, num_perm: usize) -> Result<(), SketchError> {
        if self.bands == 0 || self.rows == 0 || self.bands * self.rows != num_perm {
            return Err(SketchError::InvalidBanding {
                bands: self.bands,
                rows: self.rows,
                num_perm,
            });
        }
        Ok(())
    }
}

/// Best match returned by [`LshIndex::max_jaccard`].
#[derive(Debug, Clone, PartialEq)]
pub struct Nearest {
    pub id: Option<String>,
    pub similarity: f64,
}

impl Nearest {
    pub fn none() -> Self {
        Self {
            id: None,
            similarity: 0.0,
        }
    }
}

/// Append-only banded index. Entries keep insertion order, which also breaks
/// ties in [`LshIndex::max_jaccard`].
#[derive(Debug, Clone)]
pub struct LshIndex {
    params: LshParams,
    num_perm: usize,
    seed: u64,
    retrieval_threshold: f64,
    entries: IndexMap<String, MinHashSignature>,
    tables: Vec<HashMap<u64, Vec<u32>>>,
}

impl LshIndex {
    pub fn new(
        params: LshParams,
        num_perm: usize,
        seed: u64,
        retrieval_threshold: f64,
    ) -> Result<Self, SketchError> {
        params.validate(num_perm)?;
        Ok(Self {
            params,
            num_perm,
            seed,
            retrieval_threshold,
            entries: IndexMap::new(),
            tables: vec![HashMap::new(); params.bands],
        })
    }

    pub fn params(&self) -> LshParams {
        self.params
    }

    pub fn num_perm(&self) -> usize {
        self.num_perm
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn retrieval_threshold(&self) -> f64 {
        self.retrieval_threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&MinHashSignature> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &MinHashSignature)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// A new empty index with the same parameters.
    pub fn empty_like(&self) -> Self {
        Self::new(
            self.params,
            self.num_perm,
            self.seed,
            self.retrieval_threshold,
        )
        .expect("parameters already validated")
    }

    fn check(&self, sig: &MinHashSignature) -> Result<(), SketchError> {
        if sig.values.len() != self.num_perm || sig.seed != self.seed {
            return Err(SketchError::Incompatible(format!(
                "index expects {} permutations with seed {:#x}, signature has {} with seed {:#x}",
                self.num_perm,
                self.seed,
                sig.values.len(),
                sig.seed
            )));
        }
        Ok(())
    }

    fn band_digest(&self, band: usize, sig: &MinHashSignature) -> u64 {
        let start = band * self.params.rows;
        let mut h = FnvHasher::default();
        for v in &sig.values[start..start + self.params.rows] {
            h.write(&v.to_le_bytes());
        }
        h.finish()
    }

    pub fn insert(
        &mut self,
        id: impl Into<String>,
        sig: MinHashSignature,
    ) -> Result<(), SketchError> {
        let id = id.into();
        self.check(&sig)?;
        if self.entries.contains_key(&id) {
            return Err(SketchError::DuplicateId(id));
        }
        let pos = self.entries.len() as u32;
        for band in 0..self.params.bands {
            let digest = self.band_digest(band, &sig);
            self.tables[band].entry(digest).or_default().push(pos);
        }
        self.entries.insert(id, sig);
        Ok(())
    }

    /// Positions of entries sharing at least one band with `sig`, ascending.
    pub fn candidates(&self, sig: &MinHashSignature) -> Result<Vec<usize>, SketchError> {
        self.check(sig)?;
        let mut out: Vec<usize> = Vec::new();
        for band in 0..self.params.bands {
            if let Some(bucket) = self.tables[band].get(&self.band_digest(band, sig)) {
                out.extend(bucket.iter().map(|&p| p as usize));
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn candidate_ids(&self, sig: &MinHashSignature) -> Result<Vec<&str>, SketchError> {
        Ok(self
            .candidates(sig)?
            .into_iter()
            .map(|p| {
                self.entries
                    .get_index(p)
                    .expect("bucket position")
                    .0
                    .as_str()
            })
            .collect())
    }

    /// Highest MinHash estimate among band-colliding entries.
    pub fn max_jaccard(&self, sig: &MinHashSignature) -> Result<Nearest, SketchError> {
        let mut best = Nearest::none();
        for pos in self.candidates(sig)? {
            let (id, other) = self.entries.get_index(pos).expect("bucket position");
            let est = estimate_jaccard(sig, other)?;
            if best.id.is_none() || est > best.similarity {
                best = Nearest {
                    id: Some(id.clone()),
                    similarity: est,
                };
            }
        }
        Ok(best)
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), SketchError> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_perm as u32).to_le_bytes())?;
        w.write_all(&(self.params.bands as u32).to_le_bytes())?;
        w.write_all(&(self.params.rows as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.retrieval_threshold.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (id, sig) in &self.entries {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            w.write_all(&sig.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, SketchError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(SketchError::CorruptSnapshot("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(SketchError::CorruptSnapshot(format!(
                "unsupported version {version}"
            )));
        }
        let num_perm = read_u32(&mut r)? as usize;
        let bands = read_u32(&mut r)? as usize;
        let rows = read_u32(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let threshold = f64::from_le_bytes(read_array(&mut r)?);
        let count = read_u64(&mut r)?;
        let mut index = Self::new(LshParams { bands, rows }, num_perm, seed, threshold)?;
        let mut sig_bytes = vec![0u8; num_perm * 8];
        for _ in 0..count {
            let id_len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id)
                .map_err(|_| SketchError::CorruptSnapshot("id is not utf-8".into()))?;
            r.read_exact(&mut sig_bytes)?;
            index.insert(id, MinHashSignature::from_le_bytes(seed, &sig_bytes)?)?;
        }
        Ok(index)
    }

    /// Writes the snapshot to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), SketchError> {
        let tmp = path.with_extension("tmp");
        {
            let file = File::create(&tmp)?;
            let mut w = BufWriter::new(file);
            self.write_snapshot(&mut w)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SketchError> {
        Self::read_snapshot(BufReader::new(File::open(path)?))
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], SketchError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SketchError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, SketchError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}
