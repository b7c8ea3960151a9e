use std::io::Read;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{Generated, GenerationFailure, GenerationRequest, Generator};

/// Runs a shell command once per slot and takes its stdout as the candidate.
///
/// The command sees `ARCHLOOP_CYCLE`, `ARCHLOOP_SLOT`, `ARCHLOOP_SEED` and
/// `ARCHLOOP_ROUND` in its environment.
#[derive(Debug, Clone)]
pub struct CommandGenerator {
    pub command: String,
    pub timeout: Duration,
}

impl CommandGenerator {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            timeout: Duration::from_secs(120),
        }
    }

    fn run_one(&self, request: &GenerationRequest, slot: u32) -> Generated {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .env("ARCHLOOP_CYCLE", request.cycle.to_string())
            .env("ARCHLOOP_SLOT", slot.to_string())
            .env("ARCHLOOP_SEED", request.seed.to_string())
            .env("ARCHLOOP_ROUND", request.state.round.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| GenerationFailure(format!("spawn: {e}")))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let status = match child.wait_timeout(self.timeout) {
            Ok(Some(status)) => status,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(GenerationFailure(format!(
                    "timed out after {:?}",
                    self.timeout
                )));
            }
            Err(e) => return Err(GenerationFailure(format!("wait: {e}"))),
        };
        let bytes = reader
            .join()
            .map_err(|_| GenerationFailure("stdout reader panicked".into()))?
            .map_err(|e| GenerationFailure(format!("read stdout: {e}")))?;
        if !status.success() {
            return Err(GenerationFailure(format!("exited with {status}")));
        }
        String::from_utf8(bytes).map_err(|_| GenerationFailure("output is not utf-8".into()))
    }
}

impl Generator for CommandGenerator {
    fn generate(&mut self, request: &GenerationRequest) -> Vec<Generated> {
        (request.first_slot..request.first_slot + request.count)
            .map(|slot| self.run_one(request, slot))
            .collect()
    }
}
