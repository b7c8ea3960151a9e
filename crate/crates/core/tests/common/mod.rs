#![allow(dead_code)]

use std::path::Path;

use archloop::corpus::{Corpus, PairPolicy, SeedIngestor};
use archloop::gateway::{
    check_markers, EvalContext, EvalResult, Evaluator, GatewayError, Generated, GenerationRequest,
    Generator, SimulatedGenerator, SimulatedGeneratorConfig, TrainingHyperparameters,
    ValidityReport, ValidityStage,
};
use archloop::sketch::{SketchParams, DEFAULT_NUM_PERM};

pub const SKETCH_SEED: u64 = 0x5eed;

pub fn sketch_params() -> SketchParams {
    SketchParams::new(10, DEFAULT_NUM_PERM, SKETCH_SEED).unwrap()
}

/// A corpus holding exactly `records` converted seed records.
pub fn seed_corpus(dir: &Path, records: u64) -> Corpus {
    let mut ing = SeedIngestor::new(sketch_params(), 0.90, PairPolicy::default()).unwrap();
    let mut i = 0;
    while ing.report().converted < records {
        ing.offer(None, SimulatedGenerator::seed_snippet(SKETCH_SEED, i))
            .unwrap();
        i += 1;
    }
    let (corpus, report) = ing.finish(dir).unwrap();
    assert_eq!(report.converted, records);
    corpus
}

pub fn fault_free() -> SimulatedGeneratorConfig {
    SimulatedGeneratorConfig {
        syntax_fault_rate: 0.0,
        semantic_fault_rate: 0.0,
        near_duplicate_rate: 0.0,
    }
}

/// Emits every fault-free architecture twice in a row: slots 2i and 2i+1
/// carry identical source.
pub struct DuplicatingGenerator {
    pub inner: SimulatedGenerator,
}

impl Default for DuplicatingGenerator {
    fn default() -> Self {
        Self {
            inner: SimulatedGenerator::new(fault_free()),
        }
    }
}

impl Generator for DuplicatingGenerator {
    fn generate(&mut self, r: &GenerationRequest) -> Vec<Generated> {
        (r.first_slot..r.first_slot + r.count)
            .map(|slot| {
                Ok(self
                    .inner
                    .candidate(r.seed, r.cycle, slot / 2, r.state.round))
            })
            .collect()
    }
}

/// Generator driven by a closure of `(cycle, slot)`.
pub struct FnGenerator<F>(pub F);

impl<F: FnMut(u32, u32) -> Generated + Send> Generator for FnGenerator<F> {
    fn generate(&mut self, r: &GenerationRequest) -> Vec<Generated> {
        (r.first_slot..r.first_slot + r.count)
            .map(|s| (self.0)(r.cycle, s))
            .collect()
    }
}

/// Reads behaviour from comment markers in the source:
/// `# acc=<f>` sets the accuracy, `# fail=<stage>` fails validation at that
/// stage, `# raise` makes training fail. Comments never affect shingles, so
/// sources differing only in markers sketch identically.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarkerEvaluator;

pub fn marker<'a>(source: &'a str, key: &str) -> Option<&'a str> {
    source
        .lines()
        .find_map(|l| l.trim().strip_prefix("# ")?.strip_prefix(key))
}

impl Evaluator for MarkerEvaluator {
    fn evaluator_id(&self) -> String {
        "marker".into()
    }

    fn validate(
        &self,
        _: &EvalContext,
        _: &str,
        source: &str,
    ) -> Result<ValidityReport, GatewayError> {
        Ok(match marker(source, "fail=") {
            Some("parse") => ValidityReport::failed_at(ValidityStage::Parse, "syntax"),
            Some("instantiate") => ValidityReport::failed_at(ValidityStage::Instantiate, "ctor"),
            Some("forward") => ValidityReport::failed_at(ValidityStage::Forward, "shape"),
            Some(_) => ValidityReport::failed_at(ValidityStage::Contract, "contract"),
            None => ValidityReport::passed(),
        })
    }

    fn train_one_epoch(
        &self,
        _: &EvalContext,
        _: &str,
        source: &str,
        _: &TrainingHyperparameters,
    ) -> Result<EvalResult, GatewayError> {
        if marker(source, "raise").is_some() {
            return Err(GatewayError::RuntimeFailure("boom".into()));
        }
        let acc = marker(source, "acc=").map_or(0.5, |v| v.parse().unwrap());
        EvalResult::new(acc, 0.1, "marker")
    }
}

/// A distinct, contract-satisfying network; `variant` changes its structure.
pub fn distinct_net(variant: u32) -> String {
    SimulatedGenerator::new(fault_free()).candidate(0xd15, 99, variant, 0)
}

/// Validates with the marker check and trains with a fixed accuracy.
pub struct FixedAccuracy(pub f64);

impl Evaluator for FixedAccuracy {
    fn evaluator_id(&self) -> String {
        "fixed".into()
    }

    fn validate(
        &self,
        _: &EvalContext,
        _: &str,
        source: &str,
    ) -> Result<ValidityReport, GatewayError> {
        Ok(check_markers(source))
    }

    fn train_one_epoch(
        &self,
        _: &EvalContext,
        _: &str,
        _: &str,
        _: &TrainingHyperparameters,
    ) -> Result<EvalResult, GatewayError> {
        EvalResult::new(self.0, 0.0, "fixed")
    }
}
