//! Adapter for models served out of process.
//!
//! Newline-delimited JSON over a child's stdin/stdout or a TCP socket:
//! request `{"id": str, "items": [int...]}`, response `{"id": str, "p_bf": float}`.
//! One request is in flight per connection at a time.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, ClassifierError};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalEndpoint {
    Subprocess {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Tcp {
        addr: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub endpoint: ExternalEndpoint,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub expected_len: Option<usize>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Serialize)]
struct Request<'a> {
    id: &'a str,
    items: &'a [u32],
}

#[derive(Deserialize)]
struct Response {
    id: String,
    p_bf: f64,
}

enum Transport {
    Subprocess {
        child: Child,
        stdin: ChildStdin,
        lines: Receiver<std::io::Result<String>>,
    },
    Tcp {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    },
}

struct Connection {
    transport: Transport,
    next_id: u64,
}

pub struct ExternalBackend {
    conn: Mutex<Connection>,
    timeout: Duration,
    expected_len: Option<usize>,
}

fn unavailable(e: impl std::fmt::Display) -> ClassifierError {
    ClassifierError::Unavailable(e.to_string())
}

impl ExternalBackend {
    pub fn connect(config: &ExternalConfig) -> Result<Self, ClassifierError> {
        let timeout = Duration::from_millis(config.timeout_ms);
        let transport = match &config.endpoint {
            ExternalEndpoint::Subprocess { command, args } => {
                let mut child = Command::new(command)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| unavailable(format!("cannot spawn `{command}`: {e}")))?;
                let stdin = child.stdin.take().expect("stdin piped");
                let stdout = child.stdout.take().expect("stdout piped");
                let (tx, rx) = mpsc::channel();
                thread::spawn(move || {
                    for line in BufReader::new(stdout).lines() {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                });
                Transport::Subprocess {
                    child,
                    stdin,
                    lines: rx,
                }
            }
            ExternalEndpoint::Tcp { addr } => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| unavailable(format!("cannot resolve {addr}: {e}")))?
                    .next()
                    .ok_or_else(|| unavailable(format!("no address for {addr}")))?;
                let stream = TcpStream::connect_timeout(&sock, timeout)
                    .map_err(|e| unavailable(format!("cannot connect to {addr}: {e}")))?;
                stream.set_read_timeout(Some(timeout)).map_err(unavailable)?;
                stream.set_nodelay(true).ok();
                let writer = stream.try_clone().map_err(unavailable)?;
                Transport::Tcp {
                    reader: BufReader::new(stream),
                    writer,
                }
            }
        };
        Ok(ExternalBackend {
            conn: Mutex::new(Connection { transport, next_id: 0 }),
            timeout,
            expected_len: config.expected_len,
        })
    }

    fn round_trip(&self, items: &[u32]) -> Result<f64, ClassifierError> {
        let mut conn = self.conn.lock().map_err(|_| unavailable("connection poisoned"))?;
        conn.next_id += 1;
        let id = conn.next_id.to_string();
        let mut line = serde_json::to_string(&Request { id: &id, items }).expect("request serializes");
        line.push('\n');
        let reply = match &mut conn.transport {
            Transport::Subprocess { stdin, lines, .. } => {
                stdin.write_all(line.as_bytes()).map_err(unavailable)?;
                stdin.flush().map_err(unavailable)?;
                match lines.recv_timeout(self.timeout) {
                    Ok(Ok(reply)) => reply,
                    Ok(Err(e)) => return Err(unavailable(e)),
                    Err(RecvTimeoutError::Timeout) => return Err(unavailable("timed out waiting for model")),
                    Err(RecvTimeoutError::Disconnected) => return Err(unavailable("model process closed its output")),
                }
            }
            Transport::Tcp { reader, writer } => {
                writer.write_all(line.as_bytes()).map_err(unavailable)?;
                let mut reply = String::new();
                let n = reader.read_line(&mut reply).map_err(unavailable)?;
                if n == 0 {
                    return Err(unavailable("model closed the connection"));
                }
                reply
            }
        };
        let response: Response = serde_json::from_str(reply.trim_end())
            .map_err(|e| ClassifierError::Protocol(format!("bad response {reply:?}: {e}")))?;
        if response.id != id {
            return Err(ClassifierError::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        Ok(response.p_bf)
    }
}

impl Backend for ExternalBackend {
    fn p_bf(&self, items: &[u32]) -> Result<f64, ClassifierError> {
        self.round_trip(items)
    }

    fn expected_len(&self) -> Option<usize> {
        self.expected_len
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            if let Transport::Subprocess { child, .. } = &mut conn.transport {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}
