//! Realizers: turn one tuple cluster into one sentence. A deterministic
//! template realizer covers desk-scale end-to-end runs; an external-process
//! adapter (newline-delimited JSON over stdin/stdout) stands in for
//! fine-tuned LM generators.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::tokenize_predicate;
use crate::corpus::{normalize, CorpusRecord, Tuple};
use crate::decompose::Decomposition;

/// One cluster's tuples, sent to a realizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizerRequest {
    pub tuples: Vec<Tuple>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizerResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

#[derive(Debug, Error)]
pub enum RealizeError {
    #[error("realizer request timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed realizer response: {0}")]
    Malformed(String),
    #[error("realizer process exited: {0}")]
    ProcessExit(String),
    #[error("realizer failed at cluster {cluster}: {source}")]
    Cluster {
        cluster: usize,
        #[source]
        source: Box<RealizeError>,
    },
    #[error("empty realizer request")]
    EmptyRequest,
}

fn predicate_phrase(p: &str) -> String {
    // tokenize before normalizing so camelCase boundaries survive
    tokenize_predicate(p).join(" ")
}

/// Deterministic template: "subject predicate-phrase object" per tuple;
/// consecutive tuples sharing a subject are joined with "and" (subject not
/// repeated); distinct subjects start clauses joined by semicolons; one
/// trailing period; all lowercase.
pub fn realize_template(req: &RealizerRequest) -> Result<String, RealizeError> {
    if req.tuples.is_empty() {
        return Err(RealizeError::EmptyRequest);
    }
    let mut out = String::new();
    let mut current_subject: Option<String> = None;
    for t in &req.tuples {
        let subject = normalize(&t.subject);
        let fragment = format!("{} {}", predicate_phrase(&t.predicate), normalize(&t.object));
        if current_subject.as_deref() == Some(subject.as_str()) {
            out.push_str(" and ");
            out.push_str(&fragment);
        } else {
            if current_subject.is_some() {
                out.push_str("; ");
            }
            out.push_str(&subject);
            out.push(' ');
            out.push_str(&fragment);
            current_subject = Some(subject);
        }
    }
    out.push('.');
    Ok(out)
}

/// Handle to an external realizer child process speaking the line-JSON
/// protocol. Exclusively owned; requests are strictly sequential.
pub struct ExternalRealizer {
    child: Child,
    stdin: ChildStdin,
    reader: mpsc::Receiver<std::io::Result<String>>,
    pub timeout: Duration,
}

impl ExternalRealizer {
    /// Spawn `cmd` (a shell-less argv) as the adapter process.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, RealizeError> {
        if argv.is_empty() {
            return Err(RealizeError::Malformed("empty realizer command".into()));
        }
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| RealizeError::ProcessExit(e.to_string()))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        // a reader thread lets us enforce the timeout on blocking line reads
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(ExternalRealizer { child, stdin, reader: rx, timeout })
    }

    /// One request/response round trip.
    pub fn realize(&mut self, req: &RealizerRequest) -> Result<RealizerResponse, RealizeError> {
        if req.tuples.is_empty() {
            return Err(RealizeError::EmptyRequest);
        }
        let line = serde_json::to_string(req)
            .map_err(|e| RealizeError::Malformed(e.to_string()))?;
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| RealizeError::ProcessExit(e.to_string()))?;
        match self.reader.recv_timeout(self.timeout) {
            Ok(Ok(line)) => serde_json::from_str(line.trim())
                .map_err(|e| RealizeError::Malformed(e.to_string())),
            Ok(Err(e)) => Err(RealizeError::ProcessExit(e.to_string())),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(RealizeError::Timeout(self.timeout)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "stdout closed".into());
                Err(RealizeError::ProcessExit(status))
            }
        }
    }
}

impl Drop for ExternalRealizer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Something that can turn a cluster into one sentence.
pub trait Realizer {
    fn realize(&mut self, req: &RealizerRequest) -> Result<RealizerResponse, RealizeError>;
}

/// The built-in template realizer as a `Realizer`.
pub struct TemplateRealizer;

impl Realizer for TemplateRealizer {
    fn realize(&mut self, req: &RealizerRequest) -> Result<RealizerResponse, RealizeError> {
        Ok(RealizerResponse { text: realize_template(req)?, logprob: None })
    }
}

/// External adapter with optional fallback to the template on failure.
pub struct ExternalWithFallback {
    pub external: ExternalRealizer,
    pub fallback_to_template: bool,
}

impl Realizer for ExternalWithFallback {
    fn realize(&mut self, req: &RealizerRequest) -> Result<RealizerResponse, RealizeError> {
        match self.external.realize(req) {
            Ok(r) => Ok(r),
            Err(e) if self.fallback_to_template => {
                let _ = e;
                Ok(RealizerResponse { text: realize_template(req)?, logprob: None })
            }
            Err(e) => Err(e),
        }
    }
}

impl Realizer for ExternalRealizer {
    fn realize(&mut self, req: &RealizerRequest) -> Result<RealizerResponse, RealizeError> {
        ExternalRealizer::realize(self, req)
    }
}

/// Realize each ordered cluster of a decomposition and join the sentences
/// with single spaces. Errors carry the failing cluster index.
pub fn generate(
    record: &CorpusRecord,
    d: &Decomposition,
    realizer: &mut dyn Realizer,
) -> Result<String, RealizeError> {
    let mut sentences = Vec::with_capacity(d.clusters.len());
    for (c, cluster) in d.clusters.iter().enumerate() {
        let req = RealizerRequest {
            tuples: cluster.iter().map(|&i| record.tuples[i].clone()).collect(),
        };
        let resp = realizer
            .realize(&req)
            .map_err(|e| RealizeError::Cluster { cluster: c, source: Box::new(e) })?;
        sentences.push(resp.text);
    }
    Ok(sentences.join(" "))
}
