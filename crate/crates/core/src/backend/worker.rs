use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    Acknowledgment, BackendError, EpochCallback, EpochEnd, SeqBackend, TrainConfig, TrainReport,
    TrainingPair,
};

/// Rewrites `<id_K>` into the T5 vocabulary's `<extra_id_K>`.
pub fn to_native_sentinels(text: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"<id_(\d+)>").expect("static regex"));
    re.replace_all(text, "<extra_id_$1>").into_owned()
}

/// Maps `<extra_id_K>` back to `<id_K>` and drops padding and end markers.
pub fn from_native_sentinels(text: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"<extra_id_(\d+)>").expect("static regex"));
    let text = text.replace("<pad>", "").replace("</s>", "");
    re.replace_all(&text, "<id_$1>").trim().to_string()
}

struct WorkerIo {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl WorkerIo {
    fn send(&mut self, request: &Value) -> Result<(), BackendError> {
        serde_json::to_writer(&mut self.stdin, request)
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        Ok(())
    }

    fn receive(&mut self) -> Result<Value, BackendError> {
        let mut line = String::new();
        if self.stdout.read_line(&mut line)? == 0 {
            return Err(BackendError::Protocol("worker closed its output".into()));
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| BackendError::Protocol(format!("bad worker reply {line:?}: {e}")))?;
        if value.get("ok") == Some(&Value::Bool(false)) {
            let msg = value["error"].as_str().unwrap_or("unspecified").to_string();
            return Err(BackendError::Protocol(msg));
        }
        Ok(value)
    }

    fn call(&mut self, request: &Value) -> Result<Value, BackendError> {
        self.send(request)?;
        self.receive()
    }
}

#[derive(Deserialize)]
struct GenerateReply {
    outputs: Vec<String>,
}

/// A model served by a child process speaking line-delimited JSON.
///
/// Requests are `{"op": "generate" | "register" | "fine_tune" | "resume" |
/// "shutdown", ...}`. During fine-tuning the worker emits
/// `{"event": "epoch", "epoch": k, "loss": x}` after each epoch and then
/// serves requests until it receives `resume`; it finishes with
/// `{"event": "done", ...}`.
pub struct WorkerBackend {
    name: String,
    io: Mutex<WorkerIo>,
    registered: BTreeSet<String>,
}

impl WorkerBackend {
    pub fn spawn(name: &str, argv: &[String], model_dir: &Path) -> Result<Self, BackendError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| BackendError::Unavailable("empty worker command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .arg("--model")
            .arg(model_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                BackendError::Unavailable(format!("cannot start worker {program}: {e}"))
            })?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            name: name.to_string(),
            io: Mutex::new(WorkerIo {
                child,
                stdin,
                stdout,
            }),
            registered: BTreeSet::new(),
        })
    }

    fn io(&self) -> std::sync::MutexGuard<'_, WorkerIo> {
        self.io.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl SeqBackend for WorkerBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, inputs: &[String]) -> Result<Vec<String>, BackendError> {
        let native: Vec<String> = inputs.iter().map(|i| to_native_sentinels(i)).collect();
        let reply = self
            .io()
            .call(&json!({"op": "generate", "inputs": native}))?;
        let reply: GenerateReply =
            serde_json::from_value(reply).map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(reply
            .outputs
            .iter()
            .map(|o| from_native_sentinels(o))
            .collect())
    }

    fn register_special_tokens(
        &mut self,
        tokens: &[String],
    ) -> Result<Acknowledgment, BackendError> {
        let fresh: Vec<&String> = tokens
            .iter()
            .filter(|t| !self.registered.contains(*t))
            .collect();
        if !fresh.is_empty() {
            self.io()
                .call(&json!({"op": "register", "tokens": fresh}))?;
            self.registered.extend(fresh.into_iter().cloned());
        }
        Ok(Acknowledgment {
            registered: self.registered.iter().cloned().collect(),
        })
    }

    fn fine_tune(
        &mut self,
        pairs: &[TrainingPair],
        config: &TrainConfig,
        on_epoch: &mut EpochCallback<'_>,
    ) -> Result<TrainReport, BackendError> {
        config.validate()?;
        let wire: Vec<Value> = pairs
            .iter()
            .map(|p| {
                json!({
                    "input": to_native_sentinels(&p.input),
                    "target": to_native_sentinels(&p.target),
                })
            })
            .collect();
        self.io()
            .send(&json!({"op": "fine_tune", "pairs": wire, "config": config}))?;

        loop {
            let event = self.io().receive()?;
            match event["event"].as_str() {
                Some("epoch") => {
                    let epoch = event["epoch"].as_u64().unwrap_or(0) as usize;
                    let loss = event["loss"].as_f64();
                    on_epoch(&EpochEnd {
                        epoch,
                        loss,
                        model: &*self,
                    })?;
                    self.io().send(&json!({"op": "resume"}))?;
                }
                Some("done") => {
                    return Ok(TrainReport {
                        epochs_completed: event["epochs"].as_u64().unwrap_or(0) as usize,
                        pairs_seen: event["pairs_seen"].as_u64().unwrap_or(0) as usize,
                        final_loss: event["loss"].as_f64(),
                        synthetic: false,
                    })
                }
                _ => {
                    return Err(BackendError::Protocol(format!(
                        "unexpected event during fine-tuning: {event}"
                    )))
                }
            }
        }
    }
}

impl Drop for WorkerBackend {
    fn drop(&mut self) {
        let io = self.io.get_mut().unwrap_or_else(|p| p.into_inner());
        let _ = io.send(&json!({"op": "shutdown"}));
        let _ = io.child.wait();
    }
}
