//! The generate, evaluate, select and fine-tune loop.
//!
//! Within a cycle, candidates are generated in slot order, validated and
//! trained in parallel, then assessed for novelty and committed one at a time
//! in slot order, so results never depend on worker scheduling.

use std::fs::{self, File};
use std::hash::Hasher;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, CorpusRecord, FinetuneManifest, Origin};
use crate::gateway::{
    EvalContext, EvalResult, Evaluator, GatewayError, Generated, GenerationRequest, Generator,
    GeneratorState, TrainingHyperparameters, ValidityReport, ValidityStage,
};
use crate::lexshingle::LexError;
use crate::novelty::{
    self, ArchiveMembership, CycleArchive, NoveltyLog, NoveltyPolicy, NoveltyVerdict,
    RejectionCounter,
};
use crate::report::{self, ReportFormat};
use crate::sketch::{MinHashSignature, SketchError, SketchParams, Sketcher};
use crate::stats::{self, CycleStats, PooledStats};

pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub novelty_filter_enabled: bool,
    pub accuracy_threshold_enabled: bool,
    pub iteration_enabled: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            novelty_filter_enabled: true,
            accuracy_threshold_enabled: true,
            iteration_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cycles: u32,
    /// Sampling budget per cycle.
    pub samples_per_cycle: u32,
    pub accuracy_threshold: f64,
    pub tau: f64,
    pub k: usize,
    pub num_perm: usize,
    pub seed: u64,
    pub ablations: Ablations,
    pub workers: usize,
    pub archive_membership: ArchiveMembership,
    /// Per-cycle acceptance counts; sampling in a cycle stops once its target
    /// is met or the budget runs out.
    pub acceptance_targets: Option<Vec<u32>>,
    pub hyperparameters: TrainingHyperparameters,
    /// Retries per evaluator call on infrastructure failure.
    pub retry_budget: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cycles: 22,
            samples_per_cycle: 50,
            accuracy_threshold: 0.40,
            tau: novelty::DEFAULT_TAU,
            k: crate::lexshingle::DEFAULT_SHINGLE_K,
            num_perm: crate::sketch::DEFAULT_NUM_PERM,
            seed: 0,
            ablations: Ablations::default(),
            workers: 1,
            archive_membership: ArchiveMembership::default(),
            acceptance_targets: None,
            hyperparameters: TrainingHyperparameters::default(),
            retry_budget: 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{name} = {value} must lie in [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("{targets} acceptance targets given for {cycles} cycles")]
    TargetCount { targets: usize, cycles: u32 },
    #[error("run asks for {field} = {run} but the corpus was built with {corpus}")]
    CorpusMismatch {
        field: &'static str,
        run: usize,
        corpus: usize,
    },
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("accuracy_threshold", self.accuracy_threshold),
            ("tau", self.tau),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::OutOfUnitRange { name, value });
            }
        }
        for (name, value) in [
            ("cycles", self.cycles as usize),
            ("samples_per_cycle", self.samples_per_cycle as usize),
            ("workers", self.workers),
            ("k", self.k),
        ] {
            if value == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if let Some(t) = &self.acceptance_targets {
            if t.len() != self.cycles as usize {
                return Err(ConfigError::TargetCount {
                    targets: t.len(),
                    cycles: self.cycles,
                });
            }
        }
        Ok(())
    }

    pub fn novelty_policy(&self) -> NoveltyPolicy {
        NoveltyPolicy {
            tau: self.tau,
            enabled: self.ablations.novelty_filter_enabled,
        }
    }

    fn passes_threshold(&self, accuracy: f64) -> bool {
        !self.ablations.accuracy_threshold_enabled || accuracy >= self.accuracy_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Invalid,
    BelowThreshold,
    NearDuplicate,
    Accepted,
}

/// One sampled candidate and everything decided about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CandidateLine", from = "CandidateLine")]
pub struct CandidateRecord {
    pub id: String,
    pub cycle: u32,
    pub slot: u32,
    pub disposition: Disposition,
    pub generation_error: Option<String>,
    pub validity: ValidityReport,
    pub eval: Option<EvalResult>,
    pub train_error: Option<String>,
    pub novelty: Option<NoveltyVerdict>,
    pub source_code: String,
}

impl CandidateRecord {
    /// Compiled and trained.
    pub fn is_valid(&self) -> bool {
        self.eval.is_some()
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.eval.as_ref().map(|e| e.accuracy)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// On-disk layout of a candidate log line. Novelty fields sit at top level.
#[derive(Serialize, Deserialize)]
struct CandidateLine {
    id: String,
    cycle: u32,
    slot: u32,
    disposition: Disposition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generation_error: Option<String>,
    validity: ValidityReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eval: Option<EvalResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_error: Option<String>,
    #[serde(flatten)]
    novelty: Option<NoveltyLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nearest_train_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nearest_gen_id: Option<String>,
    source_code: String,
}

impl From<CandidateRecord> for CandidateLine {
    fn from(r: CandidateRecord) -> Self {
        let (novelty, nearest_train_id, nearest_gen_id) = match r.novelty {
            Some(v) => (Some(v.log_fields()), v.nearest_train_id, v.nearest_gen_id),
            None => (None, None, None),
        };
        Self {
            id: r.id,
            cycle: r.cycle,
            slot: r.slot,
            disposition: r.disposition,
            generation_error: r.generation_error,
            validity: r.validity,
            eval: r.eval,
            train_error: r.train_error,
            novelty,
            nearest_train_id,
            nearest_gen_id,
            source_code: r.source_code,
        }
    }
}

impl From<CandidateLine> for CandidateRecord {
    /// Similarities come back rounded to four decimals.
    fn from(l: CandidateLine) -> Self {
        let disposition = l.disposition;
        let novelty = l.novelty.map(|n| NoveltyVerdict {
            j_train: n.nn_jaccard_train,
            j_gen: n.nn_jaccard_gen,
            near_dup_text_train: n.near_dup_text_train,
            near_dup_text_gen: n.near_dup_text_gen,
            accepted: disposition == Disposition::Accepted
                || !(n.near_dup_text_train || n.near_dup_text_gen),
            rejection_count: n.rejection_count,
            nearest_train_id: l.nearest_train_id,
            nearest_gen_id: l.nearest_gen_id,
        });
        Self {
            id: l.id,
            cycle: l.cycle,
            slot: l.slot,
            disposition,
            generation_error: l.generation_error,
            validity: l.validity,
            eval: l.eval,
            train_error: l.train_error,
            novelty,
            source_code: l.source_code,
        }
    }
}

pub fn candidate_id(cycle: u32, slot: u32) -> String {
    format!("c{cycle:02}-{slot:04}")
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("writing run output: {0}")]
    Output(#[from] io::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleOutcome {
    pub stats: CycleStats,
    /// False when the cycle stopped early on an evaluator failure.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub generator_state: GeneratorState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { cycle: u32, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub evaluator_id: String,
    pub config: RunConfig,
    pub corpus_initial_pairs: u64,
    pub corpus_final_pairs: u64,
    pub cycles: Vec<CycleOutcome>,
    pub pooled: PooledStats,
}

impl RunReport {
    pub fn cycle_stats(&self) -> Vec<CycleStats> {
        self.cycles.iter().map(|c| c.stats.clone()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Receives run progress. All methods default to doing nothing.
pub trait RunObserver {
    fn on_candidate(&mut self, _record: &CandidateRecord) -> io::Result<()> {
        Ok(())
    }

    fn on_cycle_end(
        &mut self,
        _outcome: &CycleOutcome,
        _manifest: Option<&FinetuneManifest>,
    ) -> io::Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// Collects every record in memory.
#[derive(Debug, Default)]
pub struct Collect {
    pub records: Vec<CandidateRecord>,
    pub manifests: Vec<FinetuneManifest>,
}

impl RunObserver for Collect {
    fn on_candidate(&mut self, record: &CandidateRecord) -> io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn on_cycle_end(
        &mut self,
        _outcome: &CycleOutcome,
        manifest: Option<&FinetuneManifest>,
    ) -> io::Result<()> {
        self.manifests.extend(manifest.cloned());
        Ok(())
    }
}

struct Evaluated {
    validity: ValidityReport,
    eval: Option<EvalResult>,
    train_error: Option<String>,
    signature: Option<Result<MinHashSignature, LexError>>,
}

enum SlotOutcome {
    GenerationFailed(String),
    Evaluated(Evaluated),
}

struct EvalEnv<'e> {
    evaluator: &'e dyn Evaluator,
    sketcher: &'e Sketcher,
    hp: TrainingHyperparameters,
    retry_budget: u32,
}

impl EvalEnv<'_> {
    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e @ (GatewayError::Unavailable(_) | GatewayError::Protocol(_))) => {
                    if attempt >= self.retry_budget {
                        return Err(e);
                    }
                    attempt += 1;
                    warn!(
                        "evaluator call failed ({e}), retry {attempt}/{}",
                        self.retry_budget
                    );
                }
                other => return other,
            }
        }
    }

    fn evaluate(
        &self,
        ctx: &EvalContext,
        id: &str,
        source: &str,
    ) -> Result<Evaluated, GatewayError> {
        let validity = match self.with_retries(|| self.evaluator.validate(ctx, id, source)) {
            Ok(v) => v,
            Err(GatewayError::RuntimeFailure(m)) => {
                ValidityReport::failed_at(ValidityStage::Parse, m)
            }
            Err(e) => return Err(e),
        };
        if !validity.is_valid() {
            return Ok(Evaluated {
                validity,
                eval: None,
                train_error: None,
                signature: None,
            });
        }
        let (eval, train_error) =
            match self.with_retries(|| self.evaluator.train_one_epoch(ctx, id, source, &self.hp)) {
                Ok(r) => (Some(r), None),
                Err(GatewayError::RuntimeFailure(m)) => (None, Some(m)),
                Err(e) => return Err(e),
            };
        let signature = eval.as_ref().map(|_| self.sketcher.sketch(source));
        Ok(Evaluated {
            validity,
            eval,
            train_error,
            signature,
        })
    }
}

pub struct Orchestrator<'a> {
    config: RunConfig,
    corpus: Corpus,
    generator: &'a mut dyn Generator,
    evaluator: &'a dyn Evaluator,
    pool: rayon::ThreadPool,
    state: GeneratorState,
}

impl<'a> Orchestrator<'a> {
    pub fn new(
        config: RunConfig,
        corpus: Corpus,
        generator: &'a mut dyn Generator,
        evaluator: &'a dyn Evaluator,
    ) -> Result<Self, RunError> {
        config.validate()?;
        let params = corpus.params();
        for (field, run, built) in [
            ("k", config.k, params.k),
            ("num_perm", config.num_perm, params.num_perm),
        ] {
            if run != built {
                return Err(ConfigError::CorpusMismatch {
                    field,
                    run,
                    corpus: built,
                }
                .into());
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| RunError::Pool(e.to_string()))?;
        let state = GeneratorState {
            round: 0,
            corpus_pairs: corpus.pair_count() as usize,
        };
        Ok(Self {
            config,
            corpus,
            generator,
            evaluator,
            pool,
            state,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn into_corpus(self) -> Corpus {
        self.corpus
    }

    pub fn generator_state(&self) -> GeneratorState {
        self.state
    }

    /// Runs one cycle; `cycle` starts at 1.
    pub fn run_cycle(
        &mut self,
        cycle: u32,
        observer: &mut dyn RunObserver,
    ) -> Result<CycleOutcome, RunError> {
        let cfg = self.config.clone();
        let policy = cfg.novelty_policy();
        let target = cfg
            .acceptance_targets
            .as_ref()
            .map(|t| t[(cycle as usize - 1) % t.len()]);
        let chunk = if target.is_some() {
            cfg.workers as u32
        } else {
            cfg.samples_per_cycle
        };
        let ctx = EvalContext {
            cycle,
            generator_round: self.state.round,
        };
        let size_before = self.corpus.pair_count();
        let mut archive = CycleArchive::new(cycle, self.corpus.index());
        let mut counter = RejectionCounter::default();
        let mut records: Vec<CandidateRecord> = Vec::new();
        let mut accepted = 0u32;
        let mut abort_reason = None;
        let mut next_slot = 0u32;

        'sampling: while next_slot < cfg.samples_per_cycle && target.is_none_or(|t| accepted < t) {
            let count = chunk.min(cfg.samples_per_cycle - next_slot);
            let request = GenerationRequest {
                cycle,
                first_slot: next_slot,
                count,
                seed: cfg.seed,
                state: self.state,
            };
            let generated: Vec<Generated> = self.generator.generate(&request);
            assert_eq!(
                generated.len(),
                count as usize,
                "generator returned the wrong number of candidates"
            );
            let env = EvalEnv {
                evaluator: self.evaluator,
                sketcher: self.corpus.sketcher(),
                hp: cfg.hyperparameters,
                retry_budget: cfg.retry_budget,
            };
            let outcomes: Vec<Result<SlotOutcome, GatewayError>> = self.pool.install(|| {
                generated
                    .par_iter()
                    .enumerate()
                    .map(|(i, g)| match g {
                        Err(f) => Ok(SlotOutcome::GenerationFailed(f.0.clone())),
                        Ok(src) => env
                            .evaluate(&ctx, &candidate_id(cycle, next_slot + i as u32), src)
                            .map(SlotOutcome::Evaluated),
                    })
                    .collect()
            });

            for (i, (g, outcome)) in generated.into_iter().zip(outcomes).enumerate() {
                let slot = next_slot + i as u32;
                let outcome = match outcome {
                    Ok(o) => o,
                    Err(e) => {
                        abort_reason = Some(format!("{}: {e}", candidate_id(cycle, slot)));
                        break 'sampling;
                    }
                };
                let record = self.decide(
                    cycle,
                    slot,
                    g.unwrap_or_default(),
                    outcome,
                    &policy,
                    &mut archive,
                    &mut counter,
                )?;
                if record.disposition == Disposition::Accepted {
                    accepted += 1;
                }
                observer.on_candidate(&record)?;
                records.push(record);
                if target.is_some_and(|t| accepted >= t) {
                    break 'sampling;
                }
            }
            next_slot += count;
        }

        self.corpus.snapshot()?;
        let complete = abort_reason.is_none();
        if cfg.ablations.iteration_enabled && complete {
            self.state.round += 1;
        }
        self.state.corpus_pairs = self.corpus.pair_count() as usize;
        let stats = if records.is_empty() {
            empty_cycle_stats(cycle, cfg.accuracy_threshold)
        } else {
            stats::summarize_cycle(&records, cfg.accuracy_threshold)
                .expect("records share one cycle")
        }
        .with_corpus_sizes(size_before, self.corpus.pair_count());
        let outcome = CycleOutcome {
            stats,
            complete,
            abort_reason,
            generator_state: self.state,
        };
        let manifest = (cfg.ablations.iteration_enabled && complete)
            .then(|| self.corpus.finetune_manifest(cycle, self.state.round));
        observer.on_cycle_end(&outcome, manifest.as_ref())?;
        info!(
            "cycle {cycle}: {} sampled, {} valid, {} accepted, corpus {} pairs",
            outcome.stats.n_gen,
            outcome.stats.n_valid,
            outcome.stats.n_unique_accepted,
            self.state.corpus_pairs
        );
        Ok(outcome)
    }

    #[allow(clippy::too_many_arguments)]
    fn decide(
        &mut self,
        cycle: u32,
        slot: u32,
        source_code: String,
        outcome: SlotOutcome,
        policy: &NoveltyPolicy,
        archive: &mut CycleArchive,
        counter: &mut RejectionCounter,
    ) -> Result<CandidateRecord, RunError> {
        let id = candidate_id(cycle, slot);
        let mut record = CandidateRecord {
            id: id.clone(),
            cycle,
            slot,
            disposition: Disposition::Invalid,
            generation_error: None,
            validity: ValidityReport::passed(),
            eval: None,
            train_error: None,
            novelty: None,
            source_code,
        };
        let ev = match outcome {
            SlotOutcome::GenerationFailed(msg) => {
                record.validity = ValidityReport::failed_at(
                    ValidityStage::Parse,
                    format!("generation failed: {msg}"),
                );
                record.generation_error = Some(msg);
                return Ok(record);
            }
            SlotOutcome::Evaluated(ev) => ev,
        };
        record.validity = ev.validity;
        record.eval = ev.eval;
        record.train_error = ev.train_error;
        let Some(accuracy) = record.accuracy() else {
            return Ok(record);
        };
        let sig = match ev.signature.expect("sketched when trained") {
            Ok(sig) => sig,
            Err(e) => {
                record.validity = ValidityReport::failed_at(ValidityStage::Parse, e.to_string());
                record.eval = None;
                return Ok(record);
            }
        };

        let mut verdict = novelty::assess(&sig, self.corpus.index(), archive, policy)?;
        verdict.rejection_count = counter.current();
        record.disposition = if !self.config.passes_threshold(accuracy) {
            Disposition::BelowThreshold
        } else if !verdict.accepted {
            Disposition::NearDuplicate
        } else {
            Disposition::Accepted
        };
        match record.disposition {
            Disposition::NearDuplicate => counter.record_rejection(),
            Disposition::Accepted => {
                counter.record_acceptance();
            }
            _ => {}
        }
        let commit = match self.config.archive_membership {
            ArchiveMembership::AllAssessed => true,
            ArchiveMembership::AcceptedOnly => record.disposition == Disposition::Accepted,
        };
        if record.disposition == Disposition::Accepted && self.config.ablations.iteration_enabled {
            self.corpus.append_accepted(CorpusRecord {
                id: id.clone(),
                source_code: record.source_code.clone(),
                origin: Origin::Generated,
                cycle_added: cycle,
                accuracy: Some(accuracy),
                j_train_at_accept: Some(verdict.j_train),
                j_gen_at_accept: Some(verdict.j_gen),
                signature: sig.to_hex(),
            })?;
        }
        if commit {
            archive.commit(id, sig)?;
        }
        record.novelty = Some(verdict);
        Ok(record)
    }

    /// Runs every configured cycle, stopping at the first aborted one.
    pub fn run(&mut self, observer: &mut dyn RunObserver) -> Result<RunReport, RunError> {
        struct Tee<'o> {
            inner: &'o mut dyn RunObserver,
            records: Vec<CandidateRecord>,
        }
        impl RunObserver for Tee<'_> {
            fn on_candidate(&mut self, record: &CandidateRecord) -> io::Result<()> {
                let mut light = record.clone();
                light.source_code.clear();
                self.records.push(light);
                self.inner.on_candidate(record)
            }

            fn on_cycle_end(
                &mut self,
                o: &CycleOutcome,
                m: Option<&FinetuneManifest>,
            ) -> io::Result<()> {
                self.inner.on_cycle_end(o, m)
            }
        }

        let initial = self.corpus.pair_count();
        let mut tee = Tee {
            inner: observer,
            records: Vec::new(),
        };
        let mut cycles = Vec::new();
        let mut status = RunStatus::Completed;
        for cycle in 1..=self.config.cycles {
            let outcome = self.run_cycle(cycle, &mut tee)?;
            let aborted = outcome.abort_reason.clone();
            cycles.push(outcome);
            if let Some(reason) = aborted {
                status = RunStatus::Aborted { cycle, reason };
                break;
            }
        }
        Ok(RunReport {
            status,
            evaluator_id: self.evaluator.evaluator_id(),
            config: self.config.clone(),
            corpus_initial_pairs: initial,
            corpus_final_pairs: self.corpus.pair_count(),
            cycles,
            pooled: stats::pool(&tee.records, self.config.accuracy_threshold),
        })
    }
}

fn empty_cycle_stats(cycle: u32, threshold: f64) -> CycleStats {
    CycleStats {
        cycle,
        threshold,
        n_gen: 0,
        n_valid: 0,
        n_above_threshold: 0,
        n_selected: 0,
        n_unique_accepted: 0,
        dispositions: Default::default(),
        valid_rate: 0.0,
        valid_rate_ci: stats::Interval { lo: 0.0, hi: 1.0 },
        accuracy: None,
        frac_above_threshold: None,
        corpus_size_before: 0,
        corpus_size_after: 0,
    }
}

/// Writes a run directory: the candidate log as it happens, per-cycle stats
/// and fine-tune manifests, and the final reports.
pub struct RunDirWriter {
    dir: PathBuf,
    candidates: BufWriter<File>,
}

impl RunDirWriter {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir.join("stats"))?;
        fs::create_dir_all(dir.join("finetune"))?;
        let candidates = BufWriter::new(File::create(dir.join(CANDIDATES_FILE))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            candidates,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the run report, tables, plot data and run manifest.
    pub fn finish(mut self, report: &RunReport, manifest: &RunManifest) -> io::Result<()> {
        self.candidates.flush()?;
        write_json(&self.dir.join(RUN_REPORT_FILE), report)?;
        write_json(&self.dir.join(MANIFEST_FILE), manifest)?;
        let stats = report.cycle_stats();
        if !stats.is_empty() {
            for (fmt, name) in [
                (ReportFormat::Csv, "report.csv"),
                (ReportFormat::Markdown, "report.md"),
            ] {
                let doc = report::emit_report(&stats, fmt).expect("nonempty stats");
                fs::write(self.dir.join(name), doc)?;
            }
            fs::write(self.dir.join("plot_data.csv"), report::plot_data(&stats))?;
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text)
}

impl RunObserver for RunDirWriter {
    fn on_candidate(&mut self, record: &CandidateRecord) -> io::Result<()> {
        writeln!(self.candidates, "{}", record.to_json_line())
    }

    fn on_cycle_end(
        &mut self,
        outcome: &CycleOutcome,
        manifest: Option<&FinetuneManifest>,
    ) -> io::Result<()> {
        self.candidates.flush()?;
        let cycle = outcome.stats.cycle;
        write_json(
            &self
                .dir
                .join("stats")
                .join(format!("cycle-{cycle:02}.json")),
            outcome,
        )?;
        if let Some(m) = manifest {
            write_json(
                &self
                    .dir
                    .join("finetune")
                    .join(format!("cycle-{cycle:02}.json")),
                m,
            )?;
        }
        Ok(())
    }
}

/// What produced a run: configuration, seed and code version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Shingle and MinHash parameters, including the hash seed, of the corpus.
    pub sketch: SketchParams,
    pub generator: String,
    pub evaluator: String,
    pub corpus_records: u64,
    pub corpus_pairs: u64,
    /// FNV-1a of the initial records file.
    pub corpus_fingerprint: String,
}

impl RunManifest {
    pub fn new(config: &RunConfig, generator: &str, evaluator: &str, corpus: &Corpus) -> Self {
        let mut h = FnvHasher::default();
        h.write(corpus.canonical_records().as_bytes());
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            sketch: *corpus.params(),
            generator: generator.to_string(),
            evaluator: evaluator.to_string(),
            corpus_records: corpus.record_count() as u64,
            corpus_pairs: corpus.pair_count(),
            corpus_fingerprint: format!("{:016x}", h.finish()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (c.cycles, c.samples_per_cycle, c.k, c.num_perm),
            (22, 50, 10, 256)
        );
        assert_eq!(c.accuracy_threshold, 0.40);
        assert_eq!(c.tau, 0.90);
        assert_eq!(c.retry_budget, 2);
    }

    #[test]
    fn config_validation() {
        let bad = RunConfig {
            tau: 1.5,
            ..RunConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::OutOfUnitRange { name: "tau", .. })
        ));
        let bad = RunConfig {
            cycles: 0,
            ..RunConfig::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::Zero("cycles")));
        let bad = RunConfig {
            cycles: 3,
            acceptance_targets: Some(vec![1, 2]),
            ..RunConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::TargetCount { .. })
        ));
    }

    #[test]
    fn threshold_tie_passes() {
        let c = RunConfig::default();
        assert!(c.passes_threshold(0.40));
        assert!(!c.passes_threshold(0.3999));
        let off = RunConfig {
            ablations: Ablations {
                accuracy_threshold_enabled: false,
                ..Ablations::default()
            },
            ..RunConfig::default()
        };
        assert!(off.passes_threshold(0.01));
    }

    #[test]
    fn candidate_line_round_trip() {
        let rec = CandidateRecord {
            id: candidate_id(3, 7),
            cycle: 3,
            slot: 7,
            disposition: Disposition::Accepted,
            generation_error: None,
            validity: ValidityReport::passed(),
            eval: Some(EvalResult::new(0.4211, 1.5, "e").unwrap()),
            train_error: None,
            novelty: Some(NoveltyVerdict {
                j_train: 0.0,
                j_gen: 0.8047,
                near_dup_text_train: false,
                near_dup_text_gen: false,
                accepted: true,
                rejection_count: 1,
                nearest_train_id: None,
                nearest_gen_id: Some("c03-0002".into()),
            }),
            source_code: "class Net: pass".into(),
        };
        let line = rec.to_json_line();
        assert_eq!(serde_json::from_str::<CandidateRecord>(&line).unwrap(), rec);
        assert_eq!(rec.id, "c03-0007");
    }

    #[test]
    fn invalid_line_has_no_novelty_fields() {
        let rec = CandidateRecord {
            id: candidate_id(1, 0),
            cycle: 1,
            slot: 0,
            disposition: Disposition::Invalid,
            generation_error: None,
            validity: ValidityReport::failed_at(ValidityStage::Forward, "shape"),
            eval: None,
            train_error: None,
            novelty: None,
            source_code: String::new(),
        };
        let v: serde_json::Value = serde_json::from_str(&rec.to_json_line()).unwrap();
        assert!(v.get("nn_jaccard_train").is_none());
        assert_eq!(serde_json::from_value::<CandidateRecord>(v).unwrap(), rec);
    }
}
