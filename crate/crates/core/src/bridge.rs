//! Newline-delimited JSON scorer protocol.
//!
//! Requests carry an `id` and an `op` (`hello`, `next_tokens`,
//! `detokenize`, `bye`); every response echoes the `id` and either holds
//! the result fields or an `error` string. One request is in flight per
//! connection.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decode::{top_k_of, Scorer, SpecialIds};
use crate::error::{Error, Result};
use crate::prompt::{PromptTemplate, TaskId};

pub const PROTOCOL_VERSION: u32 = 1;
/// Normalization tolerance promised by bridge servers.
pub const BRIDGE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
    pub vocab_size: usize,
    pub bos_id: u32,
    pub eos_id: u32,
    pub pad_id: u32,
    pub model_name: String,
}

impl Handshake {
    pub fn validate(&self) -> Result<()> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(Error::Bridge(format!(
                "unsupported protocol version {}",
                self.protocol_version
            )));
        }
        let n = self.vocab_size;
        if n == 0 || [self.bos_id, self.eos_id, self.pad_id].iter().any(|&i| i as usize >= n) {
            return Err(Error::Bridge("special ids must be below vocab_size".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_id: u32,
    pub logprob: f64,
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

/// Remote scorer reached over TCP or a child process's stdio.
pub struct BridgeScorer {
    conn: Mutex<Connection>,
    next_id: AtomicU64,
    handshake: Handshake,
    prompts: Option<[String; 2]>,
}

impl BridgeScorer {
    /// Connects to `host:port`.
    pub fn connect_tcp(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Bridge(format!("connect {addr}: {e}")))?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::from_streams(Box::new(reader), Box::new(stream), None)
    }

    /// Spawns `command` (shell-quoted) and talks over its stdin/stdout.
    pub fn spawn(command: &str) -> Result<Self> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::Bridge(format!("bad bridge command `{command}`")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot start `{}`: {e}", argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::from_streams(Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child))
    }

    /// `stdio:<command>` spawns a child; anything else is a TCP address.
    pub fn open(addr: &str) -> Result<Self> {
        match addr.strip_prefix("stdio:") {
            Some(cmd) => Self::spawn(cmd),
            None => Self::connect_tcp(addr.strip_prefix("tcp:").unwrap_or(addr)),
        }
    }

    fn from_streams(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self> {
        let mut s = Self {
            conn: Mutex::new(Connection { reader, writer, child }),
            next_id: AtomicU64::new(1),
            handshake: Handshake {
                protocol_version: 0,
                vocab_size: 0,
                bos_id: 0,
                eos_id: 0,
                pad_id: 0,
                model_name: String::new(),
            },
            prompts: None,
        };
        let v = s.request("hello", json!({}))?;
        let hs: Handshake = serde_json::from_value(v).map_err(|e| Error::Bridge(format!("bad handshake: {e}")))?;
        hs.validate()?;
        s.handshake = hs;
        Ok(s)
    }

    /// Sends prompted `description` as the `input` of every scoring request.
    pub fn with_prompt(mut self, template: &PromptTemplate, description: &str) -> Self {
        self.prompts = Some([
            template.build(TaskId::Origin, description).0,
            template.build(TaskId::Syntax, description).0,
        ]);
        self
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn request(&self, op: &str, fields: Value) -> Result<Value> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut msg = fields;
        msg["id"] = json!(id);
        msg["op"] = json!(op);
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::Bridge("connection poisoned".into()))?;
        let mut line = serde_json::to_string(&msg)?;
        line.push('\n');
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.flush()?;
        let mut reply = String::new();
        if conn.reader.read_line(&mut reply)? == 0 {
            return Err(Error::Bridge("connection closed".into()));
        }
        let v: Value = serde_json::from_str(&reply).map_err(|e| Error::Bridge(format!("bad response: {e}")))?;
        if v.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(Error::Bridge(format!("response id mismatch for request {id}")));
        }
        if let Some(err) = v.get("error") {
            return Err(Error::Bridge(err.as_str().unwrap_or("unknown error").to_string()));
        }
        Ok(v)
    }

    /// Ends the session and reaps a spawned server.
    pub fn close(self) -> Result<()> {
        let r = self.request("bye", json!({})).map(|_| ());
        if let Ok(mut c) = self.conn.lock() {
            if let Some(mut child) = c.child.take() {
                let _ = child.wait();
            }
        }
        r
    }

    fn fetch(&self, prefix: &[u32], task: TaskId, k: usize) -> Result<Vec<(u32, f64)>> {
        let mut fields = json!({"prefix_ids": prefix, "task": task.as_str(), "k": k});
        if let Some(p) = &self.prompts {
            fields["input"] = json!(p[(task == TaskId::Syntax) as usize]);
        }
        let v = self.request("next_tokens", fields)?;
        let toks: Vec<TokenScore> = serde_json::from_value(v.get("tokens").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::Bridge(format!("bad next_tokens response: {e}")))?;
        let n = self.handshake.vocab_size;
        let mut out = Vec::with_capacity(toks.len());
        for t in toks {
            if t.token_id as usize >= n || t.logprob.is_nan() || t.logprob > BRIDGE_TOL {
                return Err(Error::ScorerContract(format!(
                    "bridge returned token {} with log-probability {}",
                    t.token_id, t.logprob
                )));
            }
            out.push((t.token_id, t.logprob));
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.truncate(k);
        Ok(out)
    }
}

impl Scorer for BridgeScorer {
    fn vocab_size(&self) -> usize {
        self.handshake.vocab_size
    }

    fn specials(&self) -> SpecialIds {
        SpecialIds {
            bos: Some(self.handshake.bos_id),
            eos: self.handshake.eos_id,
            pad: Some(self.handshake.pad_id),
        }
    }

    fn next_distribution(&self, prefix: &[u32], task: TaskId) -> Result<Vec<f64>> {
        let mut dist = vec![f64::NEG_INFINITY; self.vocab_size()];
        for (t, lp) in self.fetch(prefix, task, self.vocab_size())? {
            dist[t as usize] = lp;
        }
        Ok(dist)
    }

    fn top_k(&self, prefix: &[u32], task: TaskId, k: usize) -> Result<Vec<(u32, f64)>> {
        self.fetch(prefix, task, k)
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let v = self.request("detokenize", json!({"ids": ids}))?;
        v.get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Bridge("detokenize response lacks text".into()))
    }

    fn normalization_tolerance(&self) -> f64 {
        BRIDGE_TOL
    }
}

impl Drop for BridgeScorer {
    fn drop(&mut self) {
        if let Ok(c) = self.conn.get_mut() {
            if let Some(child) = c.child.as_mut() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

/// Serves `scorer` over one NDJSON connection until `bye` or end of input.
/// The `input` field of requests is ignored.
pub fn serve<S, R, W>(scorer: &S, model_name: &str, input: R, mut output: W) -> Result<()>
where
    S: Scorer + ?Sized,
    R: BufRead,
    W: Write,
{
    let sp = scorer.specials();
    let handshake = Handshake {
        protocol_version: PROTOCOL_VERSION,
        vocab_size: scorer.vocab_size(),
        bos_id: sp.bos.unwrap_or(sp.eos),
        eos_id: sp.eos,
        pad_id: sp.pad.unwrap_or(sp.eos),
        model_name: model_name.to_string(),
    };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                writeln!(output, "{}", json!({"id": null, "error": format!("bad request: {e}")}))?;
                output.flush()?;
                continue;
            }
        };
        let id = req.get("id").cloned().unwrap_or(Value::Null);
        let op = req.get("op").and_then(Value::as_str).unwrap_or("");
        let result: Result<Value> = match op {
            "hello" => Ok(serde_json::to_value(&handshake)?),
            "next_tokens" => (|| {
                let prefix: Vec<u32> = serde_json::from_value(req["prefix_ids"].clone())?;
                let task: TaskId = req["task"].as_str().unwrap_or("origin").parse()?;
                let k = req["k"].as_u64().unwrap_or(1) as usize;
                let dist = scorer.next_distribution(&prefix, task)?;
                let tokens: Vec<TokenScore> = top_k_of(&dist, k)
                    .into_iter()
                    .map(|(token_id, logprob)| TokenScore { token_id, logprob })
                    .collect();
                Ok(json!({"tokens": tokens}))
            })(),
            "detokenize" => (|| {
                let ids: Vec<u32> = serde_json::from_value(req["ids"].clone())?;
                Ok(json!({"text": scorer.detokenize(&ids)?}))
            })(),
            "bye" => Ok(json!({"ok": true})),
            other => Err(Error::Bridge(format!("unknown op `{other}`"))),
        };
        let mut resp = match result {
            Ok(v) => v,
            Err(e) => json!({"error": e.to_string()}),
        };
        resp["id"] = id;
        writeln!(output, "{resp}")?;
        output.flush()?;
        if op == "bye" {
            break;
        }
    }
    Ok(())
}
