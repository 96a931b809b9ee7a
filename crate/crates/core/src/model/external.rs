//! Clients for out-of-process model servers.
//!
//! Both transports carry the same newline-delimited JSON messages. Over stdio
//! the server writes `hello` first, then answers one `predict` per line. Over
//! HTTP the `hello` message is served by `GET <base>/hello` and each
//! `predict` message is the body of `POST <base>/predict`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, Classifier, ModelError, ModelHandle};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        name: String,
        labels: Vec<String>,
        version: u32,
    },
    Predict {
        id: u64,
        texts: Vec<String>,
    },
    Probs {
        id: u64,
        probs: Vec<f64>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct ExternalOptions {
    pub handshake_timeout: Duration,
    /// Extra attempts after a failed HTTP request.
    pub retries: u32,
    pub request_timeout: Duration,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        Self {
            handshake_timeout: Duration::from_secs(30),
            retries: 3,
            request_timeout: Duration::from_secs(300),
        }
    }
}

pub fn open_external(spec: &str) -> Result<ModelHandle, ModelError> {
    open_external_with(spec, &ExternalOptions::default())
}

pub fn open_external_with(spec: &str, opts: &ExternalOptions) -> Result<ModelHandle, ModelError> {
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        let argv = shell_words::split(cmd).map_err(|_| ModelError::Spec(spec.to_string()))?;
        let (clf, hello) = SubprocessClassifier::spawn(&argv, opts)?;
        let (name, labels) = hello;
        Ok(ModelHandle::new(name, Backend::Subprocess, labels, clf))
    } else if let Some(url) = spec.strip_prefix("http:") {
        // Accept both `http:http://host` and `http://host`.
        let base = if url.starts_with("//") {
            format!("http:{url}")
        } else {
            url.to_string()
        };
        let (clf, (name, labels)) = HttpClassifier::connect(&base, opts)?;
        Ok(ModelHandle::new(name, Backend::Http, labels, clf))
    } else {
        Err(ModelError::Spec(spec.to_string()))
    }
}

type Hello = (String, (String, String));

fn check_hello(line: &str) -> Result<Hello, ModelError> {
    let msg: Message = serde_json::from_str(line.trim())
        .map_err(|e| ModelError::Protocol(format!("expected hello message, got `{}`: {e}", line.trim())))?;
    match msg {
        Message::Hello {
            name,
            labels,
            version,
        } => {
            if version != PROTOCOL_VERSION {
                return Err(ModelError::Protocol(format!(
                    "unsupported protocol version {version}"
                )));
            }
            match <[String; 2]>::try_from(labels) {
                Ok([neg, pos]) => Ok((name, (neg, pos))),
                Err(labels) => Err(ModelError::Capability(format!(
                    "server advertises {} labels, expected 2",
                    labels.len()
                ))),
            }
        }
        other => Err(ModelError::Protocol(format!(
            "expected hello message, got {other:?}"
        ))),
    }
}

fn check_reply(id: u64, expected: usize, line: &str) -> Result<Vec<f64>, ModelError> {
    let msg: Message = serde_json::from_str(line.trim())
        .map_err(|e| ModelError::Protocol(format!("malformed reply `{}`: {e}", line.trim())))?;
    match msg {
        Message::Probs { id: got, probs } if got == id => {
            if probs.len() != expected {
                return Err(ModelError::Protocol(format!(
                    "reply {id} carries {} probabilities for {expected} texts",
                    probs.len()
                )));
            }
            Ok(probs)
        }
        Message::Probs { id: got, .. } => Err(ModelError::Protocol(format!(
            "reply id {got} does not echo request id {id}"
        ))),
        Message::Error { message, .. } => Err(ModelError::Protocol(format!(
            "server error for request {id}: {message}"
        ))),
        other => Err(ModelError::Protocol(format!("unexpected reply {other:?}"))),
    }
}

struct Pipe {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

/// A model server spoken to over the stdin/stdout of a child process.
/// Requests are serialized on the single pipe.
pub struct SubprocessClassifier {
    child: Mutex<Child>,
    pipe: Mutex<Pipe>,
}

impl SubprocessClassifier {
    fn spawn(argv: &[String], opts: &ExternalOptions) -> Result<(Self, Hello), ModelError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| ModelError::Spec("cmd:".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::Startup(format!("cannot spawn `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut line = String::new();
            let res = reader.read_line(&mut line).map(|_| line);
            let _ = tx.send((reader, res));
        });
        let (stdout, first) = match rx.recv_timeout(opts.handshake_timeout) {
            Ok(v) => v,
            Err(_) => {
                let _ = child.kill();
                return Err(ModelError::Startup(format!(
                    "no hello from `{program}` within {:?}",
                    opts.handshake_timeout
                )));
            }
        };
        let hello = first.map_err(ModelError::Io).and_then(|line| {
            if line.is_empty() {
                Err(ModelError::Protocol(format!(
                    "`{program}` closed stdout before sending hello"
                )))
            } else {
                check_hello(&line)
            }
        });
        let hello = match hello {
            Ok(h) => h,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(e);
            }
        };
        Ok((
            Self {
                child: Mutex::new(child),
                pipe: Mutex::new(Pipe {
                    stdin,
                    stdout,
                    next_id: 1,
                }),
            },
            hello,
        ))
    }
}

impl Classifier for SubprocessClassifier {
    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>, ModelError> {
        let mut pipe = self.pipe.lock().expect("model pipe poisoned");
        let id = pipe.next_id;
        pipe.next_id += 1;
        let request = Message::Predict {
            id,
            texts: texts.to_vec(),
        };
        let transport = |e: std::io::Error| ModelError::Transport {
            retries: 0,
            message: e.to_string(),
        };
        let mut body = serde_json::to_string(&request).expect("serializable request");
        body.push('\n');
        pipe.stdin.write_all(body.as_bytes()).map_err(transport)?;
        pipe.stdin.flush().map_err(transport)?;
        let mut line = String::new();
        let n = pipe.stdout.read_line(&mut line).map_err(transport)?;
        if n == 0 {
            return Err(ModelError::Transport {
                retries: 0,
                message: "model process closed its output".into(),
            });
        }
        check_reply(id, texts.len(), &line)
    }
}

impl Drop for SubprocessClassifier {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A model server reached over HTTP.
pub struct HttpClassifier {
    base: String,
    agent: ureq::Agent,
    retries: u32,
    next_id: AtomicU64,
}

impl HttpClassifier {
    fn connect(base: &str, opts: &ExternalOptions) -> Result<(Self, Hello), ModelError> {
        let base = base.trim_end_matches('/').to_string();
        let handshake_agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(opts.handshake_timeout))
            .build()
            .into();
        let hello_url = format!("{base}/hello");
        let body = with_retries(opts.retries, || {
            handshake_agent
                .get(&hello_url)
                .call()
                .and_then(|mut r| r.body_mut().read_to_string())
        })?;
        let hello = check_hello(&body)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(opts.request_timeout))
            .build()
            .into();
        Ok((
            Self {
                base,
                agent,
                retries: opts.retries,
                next_id: AtomicU64::new(1),
            },
            hello,
        ))
    }
}

fn with_retries<F>(retries: u32, mut attempt: F) -> Result<String, ModelError>
where
    F: FnMut() -> Result<String, ureq::Error>,
{
    let mut last = String::new();
    for n in 0..=retries {
        match attempt() {
            Ok(body) => return Ok(body),
            Err(e) => {
                last = e.to_string();
                if n < retries {
                    thread::sleep(Duration::from_millis(50 * (1 << n.min(5))));
                }
            }
        }
    }
    Err(ModelError::Transport {
        retries,
        message: last,
    })
}

impl Classifier for HttpClassifier {
    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>, ModelError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = serde_json::to_string(&Message::Predict {
            id,
            texts: texts.to_vec(),
        })
        .expect("serializable request");
        let url = format!("{}/predict", self.base);
        let reply = with_retries(self.retries, || {
            self.agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body.as_str())
                .and_then(|mut r| r.body_mut().read_to_string())
        })?;
        check_reply(id, texts.len(), &reply)
    }
}
