//! Training-corpus store: seed ingestion, chat-pair conversion and appends.
//!
//! A corpus directory holds `corpus.json` (sketch parameters), `records.jsonl`
//! (one [`CorpusRecord`] per line, append-only) and `index.snap` (an LSH
//! snapshot of the record signatures).

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexshingle::{LexError, TokenKind};
use crate::novelty::NoveltyPolicy;
use crate::sketch::{LshIndex, MinHashSignature, SketchError, SketchParams, Sketcher};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const INDEX_FILE: &str = "index.snap";
pub const META_FILE: &str = "corpus.json";
const FORMAT_VERSION: u32 = 1;

pub const SYSTEM_MESSAGE: &str = "You are an expert PyTorch architecture designer. \
Write compact convolutional networks that reach the highest possible validation \
accuracy after a single training epoch while respecting every stated constraint.";

const CONTRACT_TEXT: &str = "Output a single nn.Module definition named Net with __init__, \
forward, train_setup and learn, plus a function supported_hyperparameters() returning \
{\"lr\", \"momentum\"}. Start with `import torch` and `import torch.nn as nn`. Use only \
standard convolution, pooling, normalization and activation layers; no pretrained weights, \
no data loading, no training loops. At most 500,000 parameters.";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("record id {0:?} already present")]
    DuplicateId(String),
    #[error("stored signature of {0:?} does not match its source")]
    SignatureMismatch(String),
    #[error("record {id:?} cannot be converted: {reason}")]
    Conversion { id: String, reason: ConversionError },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("corpus already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("snapshot does not match records: {0}")]
    SnapshotMismatch(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConversionError {
    #[error("no `class Net` definition")]
    MissingClass,
    #[error("source is empty")]
    Empty,
    #[error("source exceeds {limit} bytes")]
    Oversize { limit: usize },
}

impl ConversionError {
    /// Stable reason code used in ingest reports.
    pub fn code(&self) -> &'static str {
        match self {
            ConversionError::MissingClass => "missing_class_net",
            ConversionError::Empty => "empty_source",
            ConversionError::Oversize { .. } => "oversize",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVariant {
    /// CIFAR-10 task description.
    #[serde(rename = "description-A")]
    DescriptionA,
    /// MNIST task description.
    #[serde(rename = "description-B")]
    DescriptionB,
}

impl PromptVariant {
    pub fn user_message(self) -> String {
        let task = match self {
            PromptVariant::DescriptionA => {
                "Design an image classifier for CIFAR-10. Input shape (N, 3, 32, 32), output 10 logits."
            }
            PromptVariant::DescriptionB => {
                "Design an image classifier for MNIST. Input shape (N, 1, 28, 28), output 10 logits."
            }
        };
        format!("{task} {CONTRACT_TEXT}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub source_code: String,
    pub origin: Origin,
    /// 0 for seed records.
    pub cycle_added: u32,
    pub accuracy: Option<f64>,
    pub j_train_at_accept: Option<f64>,
    pub j_gen_at_accept: Option<f64>,
    /// Little-endian hex of the MinHash values.
    pub signature: String,
}

impl CorpusRecord {
    pub fn seed(
        id: impl Into<String>,
        source_code: impl Into<String>,
        sig: &MinHashSignature,
    ) -> Self {
        Self {
            id: id.into(),
            source_code: source_code.into(),
            origin: Origin::Seed,
            cycle_added: 0,
            accuracy: None,
            j_train_at_accept: None,
            j_gen_at_accept: None,
            signature: sig.to_hex(),
        }
    }

    pub fn signature(&self, seed: u64) -> Result<MinHashSignature, SketchError> {
        MinHashSignature::from_hex(seed, &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPair {
    pub record_id: String,
    pub variant: PromptVariant,
    pub system_message: String,
    pub user_message: String,
    pub assistant_code: String,
}

/// How many pairs each kind of record contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPolicy {
    pub seed_variants: u32,
    pub generated_variants: u32,
}

impl Default for PairPolicy {
    fn default() -> Self {
        Self {
            seed_variants: 2,
            generated_variants: 1,
        }
    }
}

impl PairPolicy {
    pub fn variants(&self, origin: Origin) -> &'static [PromptVariant] {
        const BOTH: [PromptVariant; 2] = [PromptVariant::DescriptionA, PromptVariant::DescriptionB];
        let n = match origin {
            Origin::Seed => self.seed_variants,
            Origin::Generated => self.generated_variants,
        };
        &BOTH[..(n as usize).min(2)]
    }
}

/// True when the token stream contains `class Net`.
pub fn has_net_class(sketcher: &Sketcher, source: &str) -> Result<bool, ConversionError> {
    if source.trim().is_empty() {
        return Err(ConversionError::Empty);
    }
    let tokens = sketcher.lexer().tokenize(source).map_err(|e| match e {
        LexError::Oversize { limit, .. } => ConversionError::Oversize { limit },
    })?;
    let toks: Vec<_> = tokens.iter().collect();
    Ok(toks.windows(2).any(|w| {
        w[0].kind == TokenKind::Keyword
            && w[0].text == "class"
            && w[1].kind == TokenKind::Identifier
            && w[1].text == "Net"
    }))
}

pub fn to_chat_pairs(
    sketcher: &Sketcher,
    record: &CorpusRecord,
    policy: &PairPolicy,
) -> Result<Vec<ChatPair>, ConversionError> {
    if !has_net_class(sketcher, &record.source_code)? {
        return Err(ConversionError::MissingClass);
    }
    Ok(policy
        .variants(record.origin)
        .iter()
        .map(|&variant| ChatPair {
            record_id: record.id.clone(),
            variant,
            system_message: SYSTEM_MESSAGE.to_string(),
            user_message: variant.user_message(),
            assistant_code: record.source_code.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusMeta {
    format: u32,
    sketch: SketchParams,
    pairs: PairPolicy,
}

#[derive(Debug)]
pub struct Corpus {
    dir: PathBuf,
    meta: CorpusMeta,
    sketcher: Sketcher,
    records: Vec<CorpusRecord>,
    ids: HashSet<String>,
    index: LshIndex,
    pair_count: u64,
    writer: File,
}

impl Corpus {
    /// Creates an empty corpus in `dir`. Fails if one already exists there.
    pub fn create(
        dir: &Path,
        params: SketchParams,
        pairs: PairPolicy,
    ) -> Result<Self, CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meta_path = dir.join(META_FILE);
        if meta_path.exists() {
            return Err(CorpusError::AlreadyExists(dir.to_path_buf()));
        }
        let meta = CorpusMeta {
            format: FORMAT_VERSION,
            sketch: params,
            pairs,
        };
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&meta_path, text + "\n").map_err(io_err(&meta_path))?;
        let records_path = dir.join(RECORDS_FILE);
        File::create(&records_path).map_err(io_err(&records_path))?;
        let sketcher = Sketcher::new(params)?;
        let corpus = Self {
            dir: dir.to_path_buf(),
            index: sketcher.empty_index(),
            sketcher,
            meta,
            records: Vec::new(),
            ids: HashSet::new(),
            pair_count: 0,
            writer: open_append(&records_path)?,
        };
        corpus.snapshot()?;
        Ok(corpus)
    }

    /// Reopens a corpus. Records appended after the last snapshot are
    /// re-indexed from their stored signatures.
    pub fn open(dir: &Path) -> Result<Self, CorpusError> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: CorpusMeta = serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let sketcher = Sketcher::new(meta.sketch)?;
        let records_path = dir.join(RECORDS_FILE);
        let records = read_records(&records_path)?;

        let index_path = dir.join(INDEX_FILE);
        let mut index = if index_path.exists() {
            LshIndex::load(&index_path)?
        } else {
            sketcher.empty_index()
        };
        if index.len() > records.len() {
            return Err(CorpusError::SnapshotMismatch(format!(
                "snapshot has {} entries, records file {}",
                index.len(),
                records.len()
            )));
        }
        let seed = meta.sketch.seed;
        for ((id, sig), rec) in index.entries().zip(&records) {
            if id != rec.id || *sig != rec.signature(seed)? {
                return Err(CorpusError::SnapshotMismatch(format!(
                    "entry {id:?} differs from record {:?}",
                    rec.id
                )));
            }
        }
        let indexed = index.len();
        for rec in &records[indexed..] {
            index.insert(rec.id.clone(), rec.signature(seed)?)?;
        }
        let mut ids = HashSet::new();
        let mut pair_count = 0;
        for rec in &records {
            if !ids.insert(rec.id.clone()) {
                return Err(CorpusError::DuplicateId(rec.id.clone()));
            }
            pair_count += meta.pairs.variants(rec.origin).len() as u64;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            writer: open_append(&records_path)?,
            meta,
            sketcher,
            records,
            ids,
            index,
            pair_count,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn params(&self) -> &SketchParams {
        &self.meta.sketch
    }

    pub fn pair_policy(&self) -> &PairPolicy {
        &self.meta.pairs
    }

    pub fn sketcher(&self) -> &Sketcher {
        &self.sketcher
    }

    pub fn index(&self) -> &LshIndex {
        &self.index
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    /// Corpus size in prompt-code pairs.
    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    /// Appends one record durably and indexes it. Returns the new size in pairs.
    pub fn append_accepted(&mut self, record: CorpusRecord) -> Result<u64, CorpusError> {
        if self.ids.contains(&record.id) {
            return Err(CorpusError::DuplicateId(record.id));
        }
        let stored = record.signature(self.meta.sketch.seed)?;
        let fresh = self
            .sketcher
            .sketch(&record.source_code)
            .map_err(|_| CorpusError::SignatureMismatch(record.id.clone()))?;
        if stored != fresh {
            return Err(CorpusError::SignatureMismatch(record.id));
        }
        let pairs = to_chat_pairs(&self.sketcher, &record, &self.meta.pairs).map_err(|reason| {
            CorpusError::Conversion {
                id: record.id.clone(),
                reason,
            }
        })?;
        let path = self.dir.join(RECORDS_FILE);
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.sync_data())
            .map_err(io_err(&path))?;
        self.index.insert(record.id.clone(), stored)?;
        self.ids.insert(record.id.clone());
        self.pair_count += pairs.len() as u64;
        self.records.push(record);
        Ok(self.pair_count)
    }

    /// Rewrites the index snapshot.
    pub fn snapshot(&self) -> Result<(), CorpusError> {
        self.index.save(&self.dir.join(INDEX_FILE))?;
        Ok(())
    }

    /// Recomputes every signature from source and compares it with the stored one.
    pub fn verify_signatures(&self) -> Result<(), CorpusError> {
        for rec in &self.records {
            let stored = rec.signature(self.meta.sketch.seed)?;
            match self.sketcher.sketch(&rec.source_code) {
                Ok(fresh) if fresh == stored => {}
                _ => return Err(CorpusError::SignatureMismatch(rec.id.clone())),
            }
        }
        Ok(())
    }

    /// Canonical serialization of the records file.
    pub fn canonical_records(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn chat_pairs(&self) -> Vec<ChatPair> {
        self.records
            .iter()
            .flat_map(|r| to_chat_pairs(&self.sketcher, r, &self.meta.pairs).unwrap_or_default())
            .collect()
    }

    /// Copies the corpus files into `dest` and opens the copy.
    pub fn fork(&self, dest: &Path) -> Result<Self, CorpusError> {
        self.snapshot()?;
        fs::create_dir_all(dest).map_err(io_err(dest))?;
        for name in [META_FILE, RECORDS_FILE, INDEX_FILE] {
            let to = dest.join(name);
            fs::copy(self.dir.join(name), &to).map_err(io_err(&to))?;
        }
        Self::open(dest)
    }

    pub fn finetune_manifest(&self, cycle: u32, generator_round: u32) -> FinetuneManifest {
        let pairs = self
            .records
            .iter()
            .flat_map(|r| {
                self.meta
                    .pairs
                    .variants(r.origin)
                    .iter()
                    .map(|&variant| PairRef {
                        record_id: r.id.clone(),
                        variant,
                    })
            })
            .collect();
        FinetuneManifest {
            cycle,
            generator_round,
            pair_count: self.pair_count,
            record_count: self.records.len() as u64,
            hyperparameters: FinetuneHyperparameters::default(),
            pairs,
        }
    }
}

fn open_append(path: &Path) -> Result<File, CorpusError> {
    OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

fn read_records(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub record_id: String,
    pub variant: PromptVariant,
}

/// Adaptation settings handed to the external trainer verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneHyperparameters {
    pub base_model: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub target_modules: Vec<String>,
    pub layers: String,
    pub epochs: u32,
    pub learning_rate: f64,
    pub per_device_batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub effective_batch_size: u32,
    pub optimizer: String,
    pub lr_scheduler: String,
    pub warmup_steps: u32,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub precision: String,
}

impl Default for FinetuneHyperparameters {
    fn default() -> Self {
        Self {
            base_model: "deepseek-coder-7b-instruct-v1.5".into(),
            lora_rank: 32,
            lora_alpha: 32,
            lora_dropout: 0.05,
            target_modules: [
                "q_proj",
                "k_proj",
                "v_proj",
                "o_proj",
                "up_proj",
                "down_proj",
                "gate_proj",
            ]
            .map(String::from)
            .to_vec(),
            layers: "0-23".into(),
            epochs: 5,
            learning_rate: 1e-5,
            per_device_batch_size: 1,
            gradient_accumulation_steps: 4,
            effective_batch_size: 4,
            optimizer: "paged_adamw_8bit".into(),
            lr_scheduler: "cosine".into(),
            warmup_steps: 20,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            precision: "bfloat16".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneManifest {
    pub cycle: u32,
    pub generator_round: u32,
    pub pair_count: u64,
    pub record_count: u64,
    pub hyperparameters: FinetuneHyperparameters,
    pub pairs: Vec<PairRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Well-formed input records.
    pub total: u64,
    pub malformed: u64,
    pub unique_after_dedup: u64,
    pub converted: u64,
    /// Unique records that failed conversion, by reason code.
    pub dropped: BTreeMap<String, u64>,
    pub pairs: u64,
}

impl IngestReport {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn duplicates(&self) -> u64 {
        self.total - self.unique_after_dedup
    }
}

/// Incremental near-duplicate pruning and conversion of seed snippets.
pub struct SeedIngestor {
    sketcher: Sketcher,
    policy: NoveltyPolicy,
    pairs: PairPolicy,
    unique: LshIndex,
    seen_ids: HashSet<String>,
    kept: Vec<CorpusRecord>,
    report: IngestReport,
}

impl SeedIngestor {
    pub fn new(params: SketchParams, tau: f64, pairs: PairPolicy) -> Result<Self, SketchError> {
        let sketcher = Sketcher::new(params)?;
        Ok(Self {
            unique: sketcher.empty_index(),
            sketcher,
            policy: NoveltyPolicy { tau, enabled: true },
            pairs,
            seen_ids: HashSet::new(),
            kept: Vec::new(),
            report: IngestReport::default(),
        })
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    fn drop_as(&mut self, code: &str) {
        *self.report.dropped.entry(code.to_string()).or_default() += 1;
    }

    pub fn record_malformed(&mut self) {
        self.report.malformed += 1;
    }

    /// Offers one snippet. `id` defaults to its position in the stream.
    pub fn offer(&mut self, id: Option<String>, source: String) -> Result<(), SketchError> {
        self.report.total += 1;
        let id = id.unwrap_or_else(|| format!("seed-{:06}", self.report.total));
        if !self.seen_ids.insert(id.clone()) {
            self.report.total -= 1;
            self.report.malformed += 1;
            return Ok(());
        }
        let sig = match self.sketcher.sketch(&source) {
            Ok(sig) => sig,
            Err(LexError::Oversize { limit, .. }) => {
                self.report.unique_after_dedup += 1;
                self.drop_as(ConversionError::Oversize { limit }.code());
                return Ok(());
            }
        };
        let nearest = self.unique.max_jaccard(&sig)?;
        if self.policy.is_near_duplicate(nearest.similarity) {
            return Ok(());
        }
        self.report.unique_after_dedup += 1;
        self.unique.insert(id.clone(), sig.clone())?;
        let record = CorpusRecord::seed(id, source, &sig);
        match to_chat_pairs(&self.sketcher, &record, &self.pairs) {
            Ok(pairs) => {
                self.report.converted += 1;
                self.report.pairs += pairs.len() as u64;
                self.kept.push(record);
            }
            Err(e) => self.drop_as(e.code()),
        }
        Ok(())
    }

    /// Persists the converted records as a new corpus in `dir`.
    pub fn finish(self, dir: &Path) -> Result<(Corpus, IngestReport), CorpusError> {
        let params = *self.sketcher.params();
        let corpus = Corpus::create(dir, params, self.pairs)?;
        let records_path = dir.join(RECORDS_FILE);
        {
            let file = OpenOptions::new()
                .append(true)
                .open(&records_path)
                .map_err(io_err(&records_path))?;
            let mut w = BufWriter::new(file);
            for rec in &self.kept {
                serde_json::to_writer(&mut w, rec).expect("record serializes");
                w.write_all(b"\n").map_err(io_err(&records_path))?;
            }
            w.into_inner()
                .map_err(|e| e.into_error())
                .and_then(|f| f.sync_all())
                .map_err(io_err(&records_path))?;
        }
        drop(corpus);
        let corpus = Corpus::open(dir)?;
        corpus.snapshot()?;
        Ok((corpus, self.report))
    }
}

#[derive(Debug, Deserialize)]
struct SeedLine {
    id: Option<String>,
    code: Option<String>,
    source: Option<String>,
}

/// Reads JSON lines carrying a `code` or `source` field and builds a corpus.
pub fn ingest_seed<R: BufRead>(
    input: R,
    dir: &Path,
    params: SketchParams,
    tau: f64,
    pairs: PairPolicy,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let mut ingestor = SeedIngestor::new(params, tau, pairs)?;
    for line in input.lines() {
        let line = line.map_err(io_err(Path::new("<input>")))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SeedLine>(&line) {
            Ok(SeedLine {
                id,
                code: Some(src),
                ..
            })
            | Ok(SeedLine {
                id,
                code: None,
                source: Some(src),
            }) => ingestor.offer(id, src)?,
            _ => ingestor.record_malformed(),
        }
    }
    ingestor.finish(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::DEFAULT_NUM_PERM;

    fn params() -> SketchParams {
        SketchParams::new(10, DEFAULT_NUM_PERM, 7).unwrap()
    }

    fn net(width: usize, extra: &str) -> String {
        format!(
            "import torch\nimport torch.nn as nn\n\nclass Net(nn.Module):\n    def __init__(self):\n        \
             super().__init__()\n        self.conv = nn.Conv2d(3, {width}, 3, padding=1)\n        \
             self.fc = nn.Linear({width}, 10)\n        {extra}\n\n    def forward(self, x):\n        \
             x = torch.relu(self.conv(x)).mean((2, 3))\n        return self.fc(x)\n"
        )
    }

    fn generated(corpus: &Corpus, id: &str, src: &str) -> CorpusRecord {
        let sig = corpus.sketcher().sketch(src).unwrap();
        CorpusRecord {
            id: id.into(),
            source_code: src.into(),
            origin: Origin::Generated,
            cycle_added: 1,
            accuracy: Some(0.41),
            j_train_at_accept: Some(0.12),
            j_gen_at_accept: Some(0.0),
            signature: sig.to_hex(),
        }
    }

    fn ingest(lines: &[String], dir: &Path) -> (Corpus, IngestReport) {
        let input = lines.join("\n");
        ingest_seed(input.as_bytes(), dir, params(), 0.90, PairPolicy::default()).unwrap()
    }

    fn line(src: &str) -> String {
        serde_json::json!({ "code": src }).to_string()
    }

    #[test]
    fn repeated_snippet_dedups_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<_> = (0..100).map(|_| line(&net(16, "pass"))).collect();
        let (corpus, report) = ingest(&lines, dir.path());
        assert_eq!(report.total, 100);
        assert_eq!(report.unique_after_dedup, 1);
        assert_eq!(corpus.pair_count(), 2);
    }

    #[test]
    fn one_failing_conversion_among_three() {
        let dir = tempfile::tempdir().unwrap();
        let lines = vec![
            line(&net(16, "self.a = nn.ReLU()")),
            line(&net(32, "self.b = nn.Dropout(0.1)").replace("class Net", "class Model")),
            line("def helper(x):\n    return [v * 2 for v in x if v is not None and v > 0]\n# tail\n"),
        ];
        let (corpus, report) = ingest(&lines, dir.path());
        assert_eq!(report.unique_after_dedup, 3);
        assert_eq!(report.converted, 1);
        assert_eq!(report.dropped.get("missing_class_net"), Some(&2));
        assert_eq!(report.pairs, 2);
        assert_eq!(corpus.record_count(), 1);

        let dir = tempfile::tempdir().unwrap();
        let lines = vec![
            line(&net(16, "self.a = nn.ReLU()")),
            line(&format!(
                "{}\nclass Head(nn.Module):\n    pass\n",
                net(24, "self.c = nn.Identity()")
            )),
            line(&net(32, "self.b = nn.Dropout(0.1)").replace("class Net", "class Model")),
        ];
        let (_, report) = ingest(&lines, dir.path());
        assert_eq!((report.converted, report.pairs), (2, 4));
        assert_eq!(
            report.unique_after_dedup - report.dropped_total(),
            report.converted
        );
    }

    #[test]
    fn malformed_lines_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let lines = vec![
            "{not json".to_string(),
            r#"{"other": 1}"#.to_string(),
            line(&net(8, "pass")),
        ];
        let (_, report) = ingest(&lines, dir.path());
        assert_eq!(report.malformed, 2);
        assert_eq!(report.total, 1);
    }

    #[test]
    fn seed_record_gives_two_pairs_with_same_code() {
        let dir = tempfile::tempdir().unwrap();
        let (corpus, _) = ingest(&[line(&net(16, "pass"))], dir.path());
        let pairs = corpus.chat_pairs();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].assistant_code, pairs[1].assistant_code);
        assert_ne!(pairs[0].user_message, pairs[1].user_message);
        assert_eq!(pairs[0].variant, PromptVariant::DescriptionA);
        assert_eq!(pairs[1].variant, PromptVariant::DescriptionB);
        assert_eq!(pairs[0].system_message, SYSTEM_MESSAGE);
    }

    #[test]
    fn generated_record_gives_one_pair() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::create(dir.path(), params(), PairPolicy::default()).unwrap();
        let rec = generated(&corpus, "c01-0000", &net(16, "pass"));
        let pairs = to_chat_pairs(corpus.sketcher(), &rec, corpus.pair_policy()).unwrap();
        assert_eq!(pairs.len(), 1);
        let mut bad = rec.clone();
        bad.source_code = "x = 1".into();
        assert_eq!(
            to_chat_pairs(corpus.sketcher(), &bad, corpus.pair_policy()),
            Err(ConversionError::MissingClass)
        );
    }

    #[test]
    fn append_to_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus = Corpus::create(dir.path(), params(), PairPolicy::default()).unwrap();
        let rec = generated(&corpus, "c01-0000", &net(16, "pass"));
        assert_eq!(corpus.append_accepted(rec.clone()).unwrap(), 1);
        assert!(matches!(
            corpus.append_accepted(rec),
            Err(CorpusError::DuplicateId(_))
        ));
    }

    #[test]
    fn signature_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus = Corpus::create(dir.path(), params(), PairPolicy::default()).unwrap();
        let mut rec = generated(&corpus, "c01-0000", &net(16, "pass"));
        rec.signature = generated(&corpus, "x", &net(64, "self.q = 3")).signature;
        assert!(matches!(
            corpus.append_accepted(rec),
            Err(CorpusError::SignatureMismatch(_))
        ));
        assert_eq!(corpus.pair_count(), 0);
    }

    #[test]
    fn reload_after_append_without_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let (mut corpus, _) = ingest(
            &[line(&net(16, "pass")), line(&net(48, "self.z = nn.GELU()"))],
            dir.path(),
        );
        let src = net(96, "self.w = nn.BatchNorm2d(96)");
        corpus
            .append_accepted(generated(&corpus, "c03-0001", &src))
            .unwrap();
        let probe = corpus.sketcher().sketch(&src).unwrap();
        let before = corpus.index().max_jaccard(&probe).unwrap();
        let size = corpus.pair_count();
        drop(corpus);

        let reopened = Corpus::open(dir.path()).unwrap();
        assert_eq!(reopened.pair_count(), size);
        assert_eq!(reopened.pair_count(), 5);
        assert_eq!(reopened.index().max_jaccard(&probe).unwrap(), before);
        reopened.verify_signatures().unwrap();
        let on_disk = fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap();
        assert_eq!(on_disk, reopened.canonical_records());
    }

    #[test]
    fn fork_leaves_source_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let (corpus, _) = ingest(&[line(&net(16, "pass"))], dir.path());
        let dest = tempfile::tempdir().unwrap();
        let mut copy = corpus.fork(&dest.path().join("c")).unwrap();
        copy.append_accepted(generated(&copy, "c01-0002", &net(80, "self.k = 1")))
            .unwrap();
        assert_eq!(Corpus::open(dir.path()).unwrap().pair_count(), 2);
        assert_eq!(copy.pair_count(), 3);
    }

    #[test]
    fn manifest_lists_every_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (corpus, _) = ingest(
            &[line(&net(16, "pass")), line(&net(40, "self.y = nn.Tanh()"))],
            dir.path(),
        );
        let m = corpus.finetune_manifest(1, 0);
        assert_eq!(m.pairs.len() as u64, m.pair_count);
        assert_eq!(m.hyperparameters.lora_rank, 32);
        assert_eq!(m.hyperparameters.effective_batch_size, 4);
        assert_eq!(m.hyperparameters.warmup_steps, 20);
    }

    #[test]
    fn create_refuses_existing_corpus() {
        let dir = tempfile::tempdir().unwrap();
        Corpus::create(dir.path(), params(), PairPolicy::default()).unwrap();
        assert!(matches!(
            Corpus::create(dir.path(), params(), PairPolicy::default()),
            Err(CorpusError::AlreadyExists(_))
        ));
    }
}
