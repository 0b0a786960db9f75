//! Out-of-process oracles over a line-delimited JSON protocol.
//!
//! Requests: `{"id": 1, "op": "alphabet"}` and
//! `{"id": 2, "op": "next_dist", "prefix": ["a", "b"]}`.
//! Responses echo the id and carry one of `alphabet` (list of tokens),
//! `dist` (map from every token and `$` to a probability) or `error`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{Alphabet, NextDist, Token};
use crate::oracle::Oracle;

/// Accepted deviation of a response distribution's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Alphabet,
    NextDist(Vec<String>),
}

pub fn encode_request(id: u64, req: &Request) -> String {
    let v = match req {
        Request::Alphabet => json!({"id": id, "op": "alphabet"}),
        Request::NextDist(prefix) => json!({"id": id, "op": "next_dist", "prefix": prefix}),
    };
    v.to_string()
}

fn protocol(msg: impl Into<String>) -> Error {
    Error::Oracle(msg.into())
}

fn parse_object(line: &str, expected_id: u64) -> Result<Map<String, Value>> {
    let v: Value =
        serde_json::from_str(line).map_err(|e| protocol(format!("bad response {line:?}: {e}")))?;
    let Value::Object(obj) = v else {
        return Err(protocol(format!("response is not an object: {line:?}")));
    };
    match obj.get("id").and_then(Value::as_i64) {
        Some(id) if id == expected_id as i64 => {}
        other => {
            return Err(protocol(format!(
                "response id {other:?} does not match request {expected_id}"
            )))
        }
    }
    if let Some(err) = obj.get("error") {
        return Err(protocol(format!("server error: {err}")));
    }
    Ok(obj)
}

pub fn parse_alphabet_response(line: &str, expected_id: u64) -> Result<Alphabet> {
    let obj = parse_object(line, expected_id)?;
    let list = obj
        .get("alphabet")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("response lacks an alphabet list"))?;
    let names = list
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| protocol("alphabet entry is not a string"))
        })
        .collect::<Result<Vec<_>>>()?;
    Alphabet::new(names).map_err(|e| protocol(format!("invalid alphabet: {e}")))
}

/// Parses a `dist` response; it must cover exactly Σ ∪ {$} and sum to 1
/// within [`SUM_TOLERANCE`]. The result is renormalized.
pub fn parse_dist_response(line: &str, expected_id: u64, alphabet: &Alphabet) -> Result<NextDist> {
    let obj = parse_object(line, expected_id)?;
    let dist = obj
        .get("dist")
        .and_then(Value::as_object)
        .ok_or_else(|| protocol("response lacks a dist object"))?;
    if dist.len() != alphabet.len() + 1 {
        return Err(protocol(format!(
            "dist has {} entries, expected {}",
            dist.len(),
            alphabet.len() + 1
        )));
    }
    let mut probs = Vec::with_capacity(alphabet.len() + 1);
    for sym in alphabet.symbols() {
        let name = alphabet.symbol_name(sym);
        let p = dist
            .get(name)
            .and_then(Value::as_f64)
            .ok_or_else(|| protocol(format!("dist lacks a number for {name:?}")))?;
        if !(0.0..=1.0 + SUM_TOLERANCE).contains(&p) {
            return Err(protocol(format!(
                "dist[{name:?}] = {p} is not a probability"
            )));
        }
        probs.push(p);
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(protocol(format!("dist sums to {sum}")));
    }
    if sum != 1.0 {
        for p in &mut probs {
            *p = (*p / sum).min(1.0);
        }
    }
    NextDist::new(probs).map_err(|e| protocol(e.to_string()))
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

impl Channel {
    fn call(&mut self, req: &Request) -> Result<(u64, String)> {
        let id = self.next_id;
        self.next_id += 1;
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| protocol("server input closed"))?;
        writeln!(stdin, "{}", encode_request(id, req))
            .and_then(|_| stdin.flush())
            .map_err(|e| protocol(format!("write to server failed: {e}")))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| protocol(format!("read from server failed: {e}")))?;
        if n == 0 {
            return Err(protocol("server closed its output"));
        }
        Ok((id, line))
    }
}

/// Oracle backed by a child process speaking the protocol on its standard
/// streams. Requests are serialized.
pub struct ExternalOracle {
    alphabet: Alphabet,
    channel: Mutex<Channel>,
}

impl ExternalOracle {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command);
        Self::from_command(cmd)
    }

    pub fn from_command(mut cmd: Command) -> Result<Self> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| protocol(format!("cannot start server: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut channel = Channel {
            child,
            stdin,
            stdout,
            next_id: 1,
        };
        let (id, line) = channel.call(&Request::Alphabet)?;
        let alphabet = parse_alphabet_response(&line, id)?;
        Ok(Self {
            alphabet,
            channel: Mutex::new(channel),
        })
    }
}

impl Oracle for ExternalOracle {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist> {
        self.alphabet.check(prefix)?;
        let names = prefix
            .iter()
            .map(|t| self.alphabet.name(*t).to_string())
            .collect();
        let mut channel = self
            .channel
            .lock()
            .map_err(|_| protocol("channel poisoned"))?;
        let (id, line) = channel.call(&Request::NextDist(names))?;
        parse_dist_response(&line, id, &self.alphabet)
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            // Closing stdin lets a well-behaved server exit on EOF.
            drop(ch.stdin.take());
            if !matches!(ch.child.try_wait(), Ok(Some(_))) {
                let _ = ch.child.kill();
            }
            let _ = ch.child.wait();
        }
    }
}

fn respond(oracle: &dyn Oracle, line: &str) -> Value {
    let req: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return json!({"id": -1, "error": format!("malformed request: {e}")}),
    };
    let id = req.get("id").cloned().unwrap_or(json!(-1));
    let alphabet = oracle.alphabet();
    match req.get("op").and_then(Value::as_str) {
        Some("alphabet") => json!({"id": id, "alphabet": alphabet.names()}),
        Some("next_dist") => {
            let prefix = req.get("prefix").and_then(Value::as_array);
            let names: Option<Vec<&str>> =
                prefix.and_then(|p| p.iter().map(Value::as_str).collect());
            let Some(names) = names else {
                return json!({"id": id, "error": "prefix must be a list of tokens"});
            };
            match alphabet.parse(&names).and_then(|w| oracle.next_dist(&w)) {
                Ok(d) => {
                    let dist: Map<String, Value> = alphabet
                        .symbols()
                        .map(|s| (alphabet.symbol_name(s).to_string(), json!(d.get(s))))
                        .collect();
                    json!({"id": id, "dist": dist})
                }
                Err(e) => json!({"id": id, "error": e.to_string()}),
            }
        }
        Some(op) => json!({"id": id, "error": format!("unknown op {op:?}")}),
        None => json!({"id": id, "error": "missing op"}),
    }
}

/// Serves `oracle` over the protocol until `input` reaches EOF.
pub fn serve<R: BufRead, W: Write>(oracle: &dyn Oracle, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", respond(oracle, &line))?;
        output.flush()?;
    }
    Ok(())
}
