//! Generation and evaluation backends.
//!
//! The orchestrator only talks to the [`Generator`] and [`Evaluator`] traits.
//! Simulated implementations are deterministic in `(seed, config)`; the
//! command generator and sidecar evaluator shell out to external processes.

mod command;
mod recorded;
mod sidecar;
mod simulated;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use command::CommandGenerator;
pub use recorded::{RecordedEvaluator, RecordedResponse, RecordingEvaluator};
pub use sidecar::{SidecarConfig, SidecarEvaluator, PROTOCOL_VERSION};
pub use simulated::{
    check_markers, SimulatedEvaluator, SimulatedEvaluatorConfig, SimulatedGenerator,
    SimulatedGeneratorConfig,
};

/// Upper bound on trainable parameters for a candidate.
pub const PARAMETER_BUDGET: u64 = 500_000;

/// Dummy forward input, NCHW, and expected logit count.
pub const DUMMY_INPUT_SHAPE: [usize; 4] = [1, 3, 32, 32];
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    /// Infrastructure failure; the orchestrator may retry.
    #[error("evaluator unavailable: {0}")]
    Unavailable(String),
    /// The candidate itself failed while training.
    #[error("runtime failure: {0}")]
    RuntimeFailure(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("generation failed: {0}")]
pub struct GenerationFailure(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("validity stages out of order: {0}")]
pub struct StageOrderError(String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityStage {
    Parse,
    Instantiate,
    Forward,
    Contract,
}

impl ValidityStage {
    pub const ALL: [ValidityStage; 4] = [
        ValidityStage::Parse,
        ValidityStage::Instantiate,
        ValidityStage::Forward,
        ValidityStage::Contract,
    ];
}

#[derive(Debug, Deserialize)]
struct RawValidity {
    parse_ok: bool,
    instantiate_ok: bool,
    forward_ok: bool,
    contract_ok: bool,
    failure_stage: Option<ValidityStage>,
    #[serde(default)]
    message: String,
}

/// Outcome of the staged validity checks. A failure at one stage forces every
/// later stage to false; this is enforced at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawValidity")]
pub struct ValidityReport {
    parse_ok: bool,
    instantiate_ok: bool,
    forward_ok: bool,
    contract_ok: bool,
    failure_stage: Option<ValidityStage>,
    message: String,
}

impl TryFrom<RawValidity> for ValidityReport {
    type Error = StageOrderError;

    fn try_from(raw: RawValidity) -> Result<Self, Self::Error> {
        let report = Self::from_flags(
            raw.parse_ok,
            raw.instantiate_ok,
            raw.forward_ok,
            raw.contract_ok,
            raw.message,
        )?;
        if report.failure_stage != raw.failure_stage {
            return Err(StageOrderError(format!(
                "failure_stage {:?} does not match flags (expected {:?})",
                raw.failure_stage, report.failure_stage
            )));
        }
        Ok(report)
    }
}

impl ValidityReport {
    pub fn passed() -> Self {
        Self {
            parse_ok: true,
            instantiate_ok: true,
            forward_ok: true,
            contract_ok: true,
            failure_stage: None,
            message: String::new(),
        }
    }

    pub fn failed_at(stage: ValidityStage, message: impl Into<String>) -> Self {
        let ok = |s: ValidityStage| s < stage;
        Self {
            parse_ok: ok(ValidityStage::Parse),
            instantiate_ok: ok(ValidityStage::Instantiate),
            forward_ok: ok(ValidityStage::Forward),
            contract_ok: ok(ValidityStage::Contract),
            failure_stage: Some(stage),
            message: message.into(),
        }
    }

    pub fn from_flags(
        parse_ok: bool,
        instantiate_ok: bool,
        forward_ok: bool,
        contract_ok: bool,
        message: impl Into<String>,
    ) -> Result<Self, StageOrderError> {
        let flags = [parse_ok, instantiate_ok, forward_ok, contract_ok];
        let first_fail = flags.iter().position(|ok| !ok);
        if let Some(i) = first_fail {
            if flags[i..].iter().any(|&ok| ok) {
                return Err(StageOrderError(format!(
                    "{:?} failed but a later stage passed",
                    ValidityStage::ALL[i]
                )));
            }
            Ok(Self::failed_at(ValidityStage::ALL[i], message))
        } else {
            let mut r = Self::passed();
            r.message = message.into();
            Ok(r)
        }
    }

    pub fn parse_ok(&self) -> bool {
        self.parse_ok
    }

    pub fn instantiate_ok(&self) -> bool {
        self.instantiate_ok
    }

    pub fn forward_ok(&self) -> bool {
        self.forward_ok
    }

    pub fn contract_ok(&self) -> bool {
        self.contract_ok
    }

    pub fn failure_stage(&self) -> Option<ValidityStage> {
        self.failure_stage
    }

    pub fn message(&self) -> &str {
        &self.message
    }

    pub fn is_valid(&self) -> bool {
        self.parse_ok && self.instantiate_ok && self.forward_ok && self.contract_ok
    }
}

/// First-epoch validation accuracy of a valid candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub evaluator_id: String,
}

impl EvalResult {
    pub fn new(
        accuracy: f64,
        wall_time_s: f64,
        evaluator_id: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(GatewayError::Protocol(format!(
                "accuracy {accuracy} outside [0, 1]"
            )));
        }
        Ok(Self {
            accuracy,
            wall_time_s,
            evaluator_id: evaluator_id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyperparameters {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for TrainingHyperparameters {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
        }
    }
}

/// Where in the run an evaluation happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalContext {
    pub cycle: u32,
    /// Number of fine-tuning rounds the generator has been through.
    pub generator_round: u32,
}

pub trait Evaluator: Send + Sync {
    fn evaluator_id(&self) -> String;

    fn validate(
        &self,
        ctx: &EvalContext,
        id: &str,
        source: &str,
    ) -> Result<ValidityReport, GatewayError>;

    fn train_one_epoch(
        &self,
        ctx: &EvalContext,
        id: &str,
        source: &str,
        hp: &TrainingHyperparameters,
    ) -> Result<EvalResult, GatewayError>;
}

/// Opaque progress token advanced once per emitted fine-tune manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GeneratorState {
    pub round: u32,
    pub corpus_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationRequest {
    pub cycle: u32,
    pub first_slot: u32,
    pub count: u32,
    pub seed: u64,
    pub state: GeneratorState,
}

pub type Generated = Result<String, GenerationFailure>;

pub trait Generator: Send {
    /// Produces exactly `request.count` outcomes, one per slot, in slot order.
    fn generate(&mut self, request: &GenerationRequest) -> Vec<Generated>;
}

/// `n` candidates for slots `0..n` of `cycle`.
pub fn generate_batch(
    generator: &mut dyn Generator,
    n: u32,
    cycle: u32,
    seed: u64,
    state: GeneratorState,
) -> Vec<Generated> {
    generator.generate(&GenerationRequest {
        cycle,
        first_slot: 0,
        count: n,
        seed,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn failed_at_forces_later_stages_false() {
        let r = ValidityReport::failed_at(ValidityStage::Forward, "shape mismatch");
        assert!(r.parse_ok() && r.instantiate_ok());
        assert!(!r.forward_ok() && !r.contract_ok());
        assert_eq!(r.failure_stage(), Some(ValidityStage::Forward));
        assert!(!r.is_valid());
    }

    #[test]
    fn out_of_order_flags_rejected() {
        assert!(ValidityReport::from_flags(false, true, false, false, "").is_err());
        let json = r#"{"parse_ok":false,"instantiate_ok":true,"forward_ok":true,"contract_ok":true,"failure_stage":"parse","message":""}"#;
        assert!(serde_json::from_str::<ValidityReport>(json).is_err());
    }

    #[test]
    fn mismatched_failure_stage_rejected() {
        let json = r#"{"parse_ok":true,"instantiate_ok":false,"forward_ok":false,"contract_ok":false,"failure_stage":"parse","message":""}"#;
        assert!(serde_json::from_str::<ValidityReport>(json).is_err());
    }

    #[test]
    fn accuracy_must_be_a_fraction() {
        assert!(EvalResult::new(1.2, 0.0, "x").is_err());
        assert!(EvalResult::new(-0.1, 0.0, "x").is_err());
        assert!(EvalResult::new(0.4, 0.0, "x").is_ok());
    }

    proptest! {
        #[test]
        fn constructed_reports_respect_stage_order(flags in prop::array::uniform4(any::<bool>())) {
            let [p, i, f, c] = flags;
            match ValidityReport::from_flags(p, i, f, c, "m") {
                Ok(r) => {
                    let got = [r.parse_ok(), r.instantiate_ok(), r.forward_ok(), r.contract_ok()];
                    prop_assert_eq!(got, flags);
                    // once false, stays false
                    prop_assert!(got.windows(2).all(|w| w[0] || !w[1]));
                    prop_assert_eq!(r.is_valid(), flags.iter().all(|&b| b));
                    let json = serde_json::to_string(&r).unwrap();
                    prop_assert_eq!(serde_json::from_str::<ValidityReport>(&json).unwrap(), r);
                }
                Err(_) => prop_assert!(flags.windows(2).any(|w| !w[0] && w[1])),
            }
        }
    }
}
