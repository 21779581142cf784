//! Child-process simulator speaking line-delimited JSON.
//!
//! Wire protocol (UTF-8, one request in flight per process):
//!
//! ```text
//! -> {"x":[41.0,47.0,48.0,45.0,18.0],"n":3,"seed":12345}\n
//! <- {"draws":[-1.25,0.5,2.125]}\n
//! ```
//!
//! The child owns its randomness but must honor the seed contract: the same
//! `(x, n, seed)` request must always produce the same draws. Responses are
//! awaited under a timeout; stderr is captured for diagnostics.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{InputSpace, Simulator, SimulatorError};
use crate::gp::InputPoint;

#[derive(Debug, Serialize)]
struct Request<'a> {
    x: &'a [f64],
    n: usize,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct Response {
    draws: Vec<f64>,
}

/// Stderr tail kept for error reports.
const STDERR_CAP: usize = 8 * 1024;

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    stderr_tail: Arc<Mutex<Vec<u8>>>,
}

impl Process {
    fn diagnostics(&self) -> String {
        let tail = self.stderr_tail.lock().unwrap();
        String::from_utf8_lossy(&tail).into_owned()
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Drives one external simulator process; requests are serialized through a
/// mutex, so one instance may be shared across threads (a pool of instances
/// gives parallel batches).
pub struct ExternalSimulator {
    space: InputSpace,
    process: Mutex<Process>,
    timeout: Duration,
    command: Vec<String>,
}

impl std::fmt::Debug for ExternalSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalSimulator")
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl ExternalSimulator {
    /// Spawns `command` (program plus arguments) with piped stdio.
    pub fn spawn(
        command: &[String],
        space: InputSpace,
        timeout: Duration,
    ) -> Result<Self, SimulatorError> {
        let (program, args) = command.split_first().ok_or_else(|| SimulatorError::Spawn {
            cmd: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| SimulatorError::Spawn {
                cmd: command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");

        let (tx, lines) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });

        let stderr_tail = Arc::new(Mutex::new(Vec::new()));
        let tail = stderr_tail.clone();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stderr);
            let mut buf = [0u8; 1024];
            while let Ok(count) = reader.read(&mut buf) {
                if count == 0 {
                    break;
                }
                let mut tail = tail.lock().unwrap();
                tail.extend_from_slice(&buf[..count]);
                let excess = tail.len().saturating_sub(STDERR_CAP);
                if excess > 0 {
                    tail.drain(..excess);
                }
            }
        });

        Ok(Self {
            space,
            process: Mutex::new(Process {
                child,
                stdin,
                lines,
                stderr_tail,
            }),
            timeout,
            command: command.to_vec(),
        })
    }
}

impl Simulator for ExternalSimulator {
    fn input_space(&self) -> &InputSpace {
        &self.space
    }

    fn draw_batch(&self, x: &InputPoint, n: usize, seed: u64) -> Result<Vec<f64>, SimulatorError> {
        let mut proc = self.process.lock().unwrap();
        let request = Request {
            x: x.coords(),
            n,
            seed,
        };
        let mut line = serde_json::to_string(&request).expect("serializable request");
        line.push('\n');
        proc.stdin
            .write_all(line.as_bytes())
            .and_then(|()| proc.stdin.flush())
            .map_err(|_| SimulatorError::ProcessGone {
                diagnostics: proc.diagnostics(),
            })?;
        let reply = match proc.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => {
                return Err(SimulatorError::ProcessGone {
                    diagnostics: proc.diagnostics(),
                })
            }
            Err(RecvTimeoutError::Timeout) => {
                return Err(SimulatorError::Timeout(self.timeout.as_secs_f64()))
            }
        };
        let response: Response =
            serde_json::from_str(&reply).map_err(|e| SimulatorError::MalformedResponse {
                detail: e.to_string(),
                line: truncate(&reply),
            })?;
        if response.draws.len() != n {
            return Err(SimulatorError::MalformedResponse {
                detail: format!("expected {n} draws, got {}", response.draws.len()),
                line: truncate(&reply),
            });
        }
        if response.draws.iter().any(|d| !d.is_finite()) {
            return Err(SimulatorError::NonFiniteDraw(x.coords().to_vec()));
        }
        Ok(response.draws)
    }
}

fn truncate(line: &str) -> String {
    if line.len() > 200 {
        format!("{}...", &line[..200])
    } else {
        line.to_string()
    }
}
