use std::collections::BTreeMap;
use std::hash::Hasher;
use std::sync::Mutex;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{
    EvalContext, EvalResult, Evaluator, GatewayError, TrainingHyperparameters, ValidityReport,
};

/// Everything an evaluator said about one source text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub validity: ValidityReport,
    /// `Ok` accuracy report, or the runtime-failure message.
    pub training: Option<Result<EvalResult, String>>,
}

fn source_key(source: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(source.as_bytes());
    h.finish()
}

/// Replays responses captured from another evaluator, keyed by source text.
#[derive(Debug, Clone, Default)]
pub struct RecordedEvaluator {
    evaluator_id: String,
    responses: BTreeMap<u64, RecordedResponse>,
}

impl RecordedEvaluator {
    pub fn new(evaluator_id: impl Into<String>) -> Self {
        Self {
            evaluator_id: evaluator_id.into(),
            responses: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, source: &str, response: RecordedResponse) {
        self.responses.insert(source_key(source), response);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    fn lookup(&self, source: &str) -> Result<&RecordedResponse, GatewayError> {
        self.responses
            .get(&source_key(source))
            .ok_or_else(|| GatewayError::Unavailable("no recorded response for source".into()))
    }
}

impl Evaluator for RecordedEvaluator {
    fn evaluator_id(&self) -> String {
        self.evaluator_id.clone()
    }

    fn validate(
        &self,
        _ctx: &EvalContext,
        _id: &str,
        source: &str,
    ) -> Result<ValidityReport, GatewayError> {
        Ok(self.lookup(source)?.validity.clone())
    }

    fn train_one_epoch(
        &self,
        _ctx: &EvalContext,
        _id: &str,
        source: &str,
        _hp: &TrainingHyperparameters,
    ) -> Result<EvalResult, GatewayError> {
        match &self.lookup(source)?.training {
            Some(Ok(r)) => Ok(r.clone()),
            Some(Err(msg)) => Err(GatewayError::RuntimeFailure(msg.clone())),
            None => Err(GatewayError::Unavailable(
                "no recorded training response".into(),
            )),
        }
    }
}

/// Wraps an evaluator and captures its answers for later replay.
pub struct RecordingEvaluator<E> {
    inner: E,
    recorded: Mutex<RecordedEvaluator>,
}

impl<E: Evaluator> RecordingEvaluator<E> {
    pub fn new(inner: E) -> Self {
        let id = inner.evaluator_id();
        Self {
            inner,
            recorded: Mutex::new(RecordedEvaluator::new(id)),
        }
    }

    pub fn into_recording(self) -> RecordedEvaluator {
        self.recorded
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
    }
}

impl<E: Evaluator> Evaluator for RecordingEvaluator<E> {
    fn evaluator_id(&self) -> String {
        self.inner.evaluator_id()
    }

    fn validate(
        &self,
        ctx: &EvalContext,
        id: &str,
        source: &str,
    ) -> Result<ValidityReport, GatewayError> {
        let report = self.inner.validate(ctx, id, source)?;
        let mut rec = self.recorded.lock().unwrap_or_else(|p| p.into_inner());
        rec.responses
            .entry(source_key(source))
            .or_insert_with(|| RecordedResponse {
                validity: report.clone(),
                training: None,
            });
        Ok(report)
    }

    fn train_one_epoch(
        &self,
        ctx: &EvalContext,
        id: &str,
        source: &str,
        hp: &TrainingHyperparameters,
    ) -> Result<EvalResult, GatewayError> {
        let result = self.inner.train_one_epoch(ctx, id, source, hp);
        let captured = match &result {
            Ok(r) => Some(Ok(r.clone())),
            Err(GatewayError::RuntimeFailure(m)) => Some(Err(m.clone())),
            Err(_) => None,
        };
        if let Some(c) = captured {
            let mut rec = self.recorded.lock().unwrap_or_else(|p| p.into_inner());
            if let Some(entry) = rec.responses.get_mut(&source_key(source)) {
                entry.training.get_or_insert(c);
            }
        }
        result
    }
}
