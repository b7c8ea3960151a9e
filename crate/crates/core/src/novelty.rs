//! Novelty assessment against the training corpus and the cycle-local archive.

use serde::{Deserialize, Serialize, Serializer};

use crate::sketch::{LshIndex, MinHashSignature, SketchError};

pub const DEFAULT_TAU: f64 = 0.90;

/// Which assessed candidates become references for later ones in the same cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchiveMembership {
    /// Every assessed candidate, accepted or not.
    #[default]
    AllAssessed,
    /// Only candidates that were finally accepted.
    AcceptedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoveltyPolicy {
    pub tau: f64,
    /// When false, similarities are still computed but never reject.
    pub enabled: bool,
}

impl Default for NoveltyPolicy {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            enabled: true,
        }
    }
}

impl NoveltyPolicy {
    /// Strictly above `tau` is a near-duplicate; exactly `tau` is not.
    pub fn is_near_duplicate(&self, similarity: f64) -> bool {
        similarity > self.tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyVerdict {
    pub j_train: f64,
    pub j_gen: f64,
    pub near_dup_text_train: bool,
    pub near_dup_text_gen: bool,
    pub accepted: bool,
    pub rejection_count: u32,
    pub nearest_train_id: Option<String>,
    pub nearest_gen_id: Option<String>,
}

impl NoveltyVerdict {
    pub fn is_near_duplicate(&self) -> bool {
        self.near_dup_text_train || self.near_dup_text_gen
    }

    pub fn log_fields(&self) -> NoveltyLog {
        NoveltyLog {
            nn_jaccard_train: self.j_train,
            near_dup_text_train: self.near_dup_text_train,
            nn_jaccard_gen: self.j_gen,
            near_dup_text_gen: self.near_dup_text_gen,
            rejection_count: self.rejection_count,
        }
    }
}

/// Serialized form of a verdict inside a candidate log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyLog {
    #[serde(serialize_with = "four_decimals")]
    pub nn_jaccard_train: f64,
    pub near_dup_text_train: bool,
    #[serde(serialize_with = "four_decimals")]
    pub nn_jaccard_gen: f64,
    pub near_dup_text_gen: bool,
    pub rejection_count: u32,
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn four_decimals<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round4(*x))
}

/// Signatures of candidates assessed earlier in the current cycle.
#[derive(Debug, Clone)]
pub struct CycleArchive {
    cycle: u32,
    index: LshIndex,
}

impl CycleArchive {
    pub fn new(cycle: u32, template: &LshIndex) -> Self {
        Self {
            cycle,
            index: template.empty_like(),
        }
    }

    pub fn cycle(&self) -> u32 {
        self.cycle
    }

    pub fn index(&self) -> &LshIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Drops every reference and moves to `cycle`.
    pub fn reset(&mut self, cycle: u32) {
        self.cycle = cycle;
        self.index = self.index.empty_like();
    }

    pub fn commit(
        &mut self,
        id: impl Into<String>,
        sig: MinHashSignature,
    ) -> Result<(), SketchError> {
        self.index.insert(id, sig)
    }
}

/// Computes both similarities and the verdict. `rejection_count` is left at
/// zero for the caller to fill in.
pub fn assess(
    candidate: &MinHashSignature,
    train_index: &LshIndex,
    archive: &CycleArchive,
    policy: &NoveltyPolicy,
) -> Result<NoveltyVerdict, SketchError> {
    let train = train_index.max_jaccard(candidate)?;
    let generated = archive.index.max_jaccard(candidate)?;
    let near_dup_text_train = policy.is_near_duplicate(train.similarity);
    let near_dup_text_gen = policy.is_near_duplicate(generated.similarity);
    let accepted = !policy.enabled || !(near_dup_text_train || near_dup_text_gen);
    Ok(NoveltyVerdict {
        j_train: train.similarity,
        j_gen: generated.similarity,
        near_dup_text_train,
        near_dup_text_gen,
        accepted,
        rejection_count: 0,
        nearest_train_id: train.id,
        nearest_gen_id: generated.id,
    })
}

/// Number of novelty rejections since the last acceptance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectionCounter {
    pending: u32,
}

impl RejectionCounter {
    pub fn current(&self) -> u32 {
        self.pending
    }

    pub fn record_rejection(&mut self) {
        self.pending += 1;
    }

    /// Returns the count attributed to the accepted candidate and resets.
    pub fn record_acceptance(&mut self) -> u32 {
        std::mem::take(&mut self.pending)
    }

    pub fn reset(&mut self) {
        self.pending = 0;
    }
}
