//! Client for an external evaluator speaking line-delimited JSON over stdio.
//!
//! Requests and responses are one JSON object per line:
//!
//! ```text
//! {"op":"hello"}                                     -> {"protocol":1,"evaluator_id":"..."}
//! {"op":"validate","id":"..","source":".."}          -> {"id":"..","parse_ok":b,"instantiate_ok":b,
//!                                                        "forward_ok":b,"contract_ok":b,
//!                                                        "param_count":n,"error":s|null}
//! {"op":"train_epoch","id":"..","source":"..","lr":f,"momentum":f}
//!                                                    -> {"id":"..","accuracy":f,"wall_time_s":f,"error":s|null}
//! ```
//!
//! Each worker thread owns one sidecar process. A process that times out or
//! misbehaves is killed and respawned on the next request.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{
    EvalContext, EvalResult, Evaluator, GatewayError, TrainingHyperparameters, ValidityReport,
    ValidityStage, PARAMETER_BUDGET,
};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SidecarConfig {
    /// Shell command line that starts one sidecar process.
    pub command: String,
    pub timeout: Duration,
    pub workers: usize,
}

impl SidecarConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            timeout: Duration::from_secs(300),
            workers: 1,
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request<'a> {
    Hello,
    Validate {
        id: &'a str,
        source: &'a str,
    },
    TrainEpoch {
        id: &'a str,
        source: &'a str,
        lr: f64,
        momentum: f64,
    },
}

#[derive(Debug, Deserialize)]
struct HelloResponse {
    protocol: u32,
    evaluator_id: String,
}

#[derive(Debug, Deserialize)]
struct ValidateResponse {
    id: String,
    parse_ok: bool,
    instantiate_ok: bool,
    forward_ok: bool,
    contract_ok: bool,
    #[serde(default)]
    param_count: u64,
    error: Option<String>,
}

#[derive(Debug, Deserialize)]
struct TrainResponse {
    id: String,
    accuracy: Option<f64>,
    #[serde(default)]
    wall_time_s: f64,
    error: Option<String>,
}

struct SidecarProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    evaluator_id: String,
}

impl SidecarProcess {
    fn spawn(command: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GatewayError::Unavailable(format!("spawn {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut proc = Self {
            child,
            stdin,
            lines,
            evaluator_id: String::new(),
        };
        let hello: HelloResponse = proc.call(&Request::Hello, timeout)?;
        if hello.protocol != PROTOCOL_VERSION {
            return Err(GatewayError::Protocol(format!(
                "sidecar speaks protocol {}, expected {PROTOCOL_VERSION}",
                hello.protocol
            )));
        }
        debug!("sidecar {} ready", hello.evaluator_id);
        proc.evaluator_id = hello.evaluator_id;
        Ok(proc)
    }

    fn call<T: for<'de> Deserialize<'de>>(
        &mut self,
        request: &Request<'_>,
        timeout: Duration,
    ) -> Result<T, GatewayError> {
        let line = serde_json::to_string(request).expect("request serializes");
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| GatewayError::Unavailable(format!("write to sidecar: {e}")))?;
        let reply = match self.lines.recv_timeout(timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                return Err(GatewayError::Unavailable(format!(
                    "sidecar did not answer within {timeout:?}"
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(GatewayError::Unavailable(
                    "sidecar closed its output".into(),
                ))
            }
        };
        serde_json::from_str(&reply)
            .map_err(|e| GatewayError::Protocol(format!("bad response {reply:?}: {e}")))
    }
}

impl Drop for SidecarProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct SidecarEvaluator {
    config: SidecarConfig,
    slots: Vec<Mutex<Option<SidecarProcess>>>,
    evaluator_id: Mutex<String>,
}

impl SidecarEvaluator {
    /// Starts one process eagerly so that a broken command fails fast.
    pub fn start(config: SidecarConfig) -> Result<Self, GatewayError> {
        let first = SidecarProcess::spawn(&config.command, config.timeout)?;
        let evaluator_id = first.evaluator_id.clone();
        let mut slots: Vec<Mutex<Option<SidecarProcess>>> = (0..config.workers.max(1))
            .map(|_| Mutex::new(None))
            .collect();
        *slots[0].get_mut().expect("fresh mutex") = Some(first);
        Ok(Self {
            config,
            slots,
            evaluator_id: Mutex::new(evaluator_id),
        })
    }

    fn with_process<T>(
        &self,
        f: impl FnOnce(&mut SidecarProcess) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let slot = rayon::current_thread_index().unwrap_or(0) % self.slots.len();
        let mut guard = self.slots[slot].lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            let proc = SidecarProcess::spawn(&self.config.command, self.config.timeout)?;
            *self.evaluator_id.lock().unwrap_or_else(|p| p.into_inner()) =
                proc.evaluator_id.clone();
            *guard = Some(proc);
        }
        let result = f(guard.as_mut().expect("process present"));
        if matches!(
            result,
            Err(GatewayError::Unavailable(_) | GatewayError::Protocol(_))
        ) {
            warn!(
                "dropping sidecar in slot {slot}: {:?}",
                result.as_ref().err()
            );
            *guard = None;
        }
        result
    }
}

fn check_id(expected: &str, got: &str) -> Result<(), GatewayError> {
    if expected != got {
        return Err(GatewayError::Protocol(format!(
            "response id {got:?} does not match request id {expected:?}"
        )));
    }
    Ok(())
}

impl Evaluator for SidecarEvaluator {
    fn evaluator_id(&self) -> String {
        self.evaluator_id
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    fn validate(
        &self,
        _ctx: &EvalContext,
        id: &str,
        source: &str,
    ) -> Result<ValidityReport, GatewayError> {
        let timeout = self.config.timeout;
        let resp: ValidateResponse =
            self.with_process(|p| p.call(&Request::Validate { id, source }, timeout))?;
        check_id(id, &resp.id)?;
        let message = resp.error.unwrap_or_default();
        let report = ValidityReport::from_flags(
            resp.parse_ok,
            resp.instantiate_ok,
            resp.forward_ok,
            resp.contract_ok,
            message,
        )
        .map_err(|e| GatewayError::Protocol(e.to_string()))?;
        if report.is_valid() && resp.param_count > PARAMETER_BUDGET {
            return Ok(ValidityReport::failed_at(
                ValidityStage::Contract,
                format!(
                    "{} parameters exceed the budget of {PARAMETER_BUDGET}",
                    resp.param_count
                ),
            ));
        }
        Ok(report)
    }

    fn train_one_epoch(
        &self,
        _ctx: &EvalContext,
        id: &str,
        source: &str,
        hp: &TrainingHyperparameters,
    ) -> Result<EvalResult, GatewayError> {
        let timeout = self.config.timeout;
        let request = Request::TrainEpoch {
            id,
            source,
            lr: hp.lr,
            momentum: hp.momentum,
        };
        let (resp, evaluator_id): (TrainResponse, String) = self.with_process(|p| {
            let resp = p.call(&request, timeout)?;
            Ok((resp, p.evaluator_id.clone()))
        })?;
        check_id(id, &resp.id)?;
        if let Some(err) = resp.error {
            return Err(GatewayError::RuntimeFailure(err));
        }
        let accuracy = resp
            .accuracy
            .ok_or_else(|| GatewayError::Protocol("train response without accuracy".into()))?;
        EvalResult::new(accuracy, resp.wall_time_s, evaluator_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        assert_eq!(
            serde_json::to_string(&Request::Hello).unwrap(),
            r#"{"op":"hello"}"#
        );
        assert_eq!(
            serde_json::to_string(&Request::Validate {
                id: "c01-0003",
                source: "x = 1"
            })
            .unwrap(),
            r#"{"op":"validate","id":"c01-0003","source":"x = 1"}"#
        );
        assert_eq!(
            serde_json::to_string(&Request::TrainEpoch {
                id: "a",
                source: "s",
                lr: 0.01,
                momentum: 0.9
            })
            .unwrap(),
            r#"{"op":"train_epoch","id":"a","source":"s","lr":0.01,"momentum":0.9}"#
        );
    }

    #[test]
    fn missing_command_is_unavailable() {
        let mut cfg = SidecarConfig::new("exit 3");
        cfg.timeout = Duration::from_secs(5);
        assert!(matches!(
            SidecarEvaluator::start(cfg),
            Err(GatewayError::Unavailable(_))
        ));
    }

    #[test]
    fn wrong_protocol_aborts() {
        let mut cfg =
            SidecarConfig::new(r#"read l; echo '{"protocol":2,"evaluator_id":"x"}'; sleep 5"#);
        cfg.timeout = Duration::from_secs(5);
        assert!(matches!(
            SidecarEvaluator::start(cfg),
            Err(GatewayError::Protocol(_))
        ));
    }
}
