//! Class-probability oracles consumed by occlusion sensitivity.
//!
//! Builtin oracles are small deterministic classifiers used for testing and
//! synthetic runs. [`ExternalOracle`] speaks the ORC1 line protocol to a model
//! server over a child process's stdio or a TCP socket.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the probability sum of locally produced vectors.
pub const SUM_TOLERANCE: f64 = 1e-6;
/// External replies within this distance of sum 1 are renormalized.
pub const EXTERNAL_SUM_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Log-energy threshold of the builtin energy classifier. With six labels
/// the argmax changes from the quiet to the loud label at `ln(3/5)` below
/// the threshold; that point sits midway between the mean log-Mel levels of
/// the quiet (about -6.2) and loud (about -4.7) clips produced by `synth`.
pub const DEFAULT_ENERGY_THRESHOLD: f64 = -4.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arousal {
    High,
    Low,
}

impl Arousal {
    pub fn flip(self) -> Self {
        match self {
            Arousal::High => Arousal::Low,
            Arousal::Low => Arousal::High,
        }
    }

    /// Default grouping of common emotion names into arousal classes.
    pub fn of_label(label: &str) -> Option<Arousal> {
        match label.to_ascii_lowercase().as_str() {
            "happy" | "happiness" | "angry" | "anger" | "fear" | "fearful" | "joy" | "surprise"
            | "surprised" | "ps" => Some(Arousal::High),
            "neutral" | "sad" | "sadness" | "calm" | "boredom" | "bored" | "disgust" => {
                Some(Arousal::Low)
            }
            _ => None,
        }
    }
}

impl fmt::Display for Arousal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arousal::High => "high",
            Arousal::Low => "low",
        })
    }
}

impl FromStr for Arousal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(Arousal::High),
            "low" => Ok(Arousal::Low),
            other => Err(Error::InvalidArgument(format!(
                "unknown arousal class {other:?}"
            ))),
        }
    }
}

/// Ordered emotion labels with an arousal tag per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionLabelSet {
    labels: Vec<String>,
    arousal: Vec<Arousal>,
}

impl Default for EmotionLabelSet {
    fn default() -> Self {
        Self::from_names(["angry", "disgust", "fear", "happy", "neutral", "sad"]).unwrap()
    }
}

impl EmotionLabelSet {
    pub fn new(labels: Vec<String>, arousal: Vec<Arousal>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("label set is empty".into()));
        }
        if labels.len() != arousal.len() {
            return Err(Error::InvalidArgument(
                "every label needs an arousal tag".into(),
            ));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid label {l:?}")));
            }
            if labels[..i].contains(l) {
                return Err(Error::InvalidArgument(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, arousal })
    }

    /// Builds a set using the default arousal grouping for each name.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = names.into_iter().map(Into::into).collect();
        let arousal = labels
            .iter()
            .map(|l| {
                Arousal::of_label(l).ok_or_else(|| {
                    Error::InvalidArgument(format!("no default arousal class for label {l:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, arousal)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn arousal_of(&self, label: &str) -> Option<Arousal> {
        self.index_of(label).map(|i| self.arousal[i])
    }

    pub fn set_arousal(&mut self, label: &str, arousal: Arousal) -> Result<()> {
        let i = self
            .index_of(label)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label {label:?}")))?;
        self.arousal[i] = arousal;
        Ok(())
    }

    /// Copy with every arousal tag inverted.
    pub fn flipped(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            arousal: self.arousal.iter().map(|a| a.flip()).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Arousal)> {
        self.labels
            .iter()
            .map(String::as_str)
            .zip(self.arousal.iter().copied())
    }
}

/// Per-label probabilities in label-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Data("empty probability vector".into()));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::Data(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Data(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// A class-probability function over log-Mel matrices.
///
/// A handle serves one caller at a time; open one handle per worker.
pub trait Oracle {
    fn labels(&self) -> &[String];

    /// `(H, W)` the oracle was declared for, if it is fixed.
    fn input_dims(&self) -> Option<(usize, usize)>;

    fn predict(&mut self, data: &Array2<f64>) -> Result<ProbabilityVector>;

    fn label_index(&self, label: &str) -> Result<usize> {
        self.labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::InvalidArgument(format!("oracle has no label {label:?}")))
    }
}

fn check_dims(expected: Option<(usize, usize)>, data: &Array2<f64>) -> Result<()> {
    match expected {
        Some(e) if e != data.dim() => Err(Error::Shape {
            expected: e,
            got: data.dim(),
        }),
        _ => Ok(()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Returns `1/n` for every label regardless of input.
#[derive(Debug, Clone)]
pub struct UniformOracle {
    labels: Vec<String>,
}

impl UniformOracle {
    pub fn new(labels: &EmotionLabelSet) -> Self {
        Self {
            labels: labels.labels().to_vec(),
        }
    }
}

impl Oracle for UniformOracle {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        None
    }

    fn predict(&mut self, _data: &Array2<f64>) -> Result<ProbabilityVector> {
        Ok(ProbabilityVector::uniform(self.labels.len()))
    }
}

/// `p(loud) = sigmoid(mean(spec) - threshold)`.
///
/// The remaining mass goes half to the quiet label, half spread evenly over
/// every non-loud label (quiet included), so quiet inputs argmax to the
/// quiet label.
#[derive(Debug, Clone)]
pub struct EnergyClassifier {
    labels: Vec<String>,
    threshold: f64,
    loud: usize,
    quiet: usize,
}

impl EnergyClassifier {
    pub fn new(
        labels: &EmotionLabelSet,
        threshold: f64,
        loud_label: &str,
        quiet_label: &str,
    ) -> Result<Self> {
        let find = |l: &str| {
            labels
                .index_of(l)
                .ok_or_else(|| Error::InvalidArgument(format!("label {l:?} not in label set")))
        };
        let loud = find(loud_label)?;
        let quiet = find(quiet_label)?;
        if loud == quiet {
            return Err(Error::InvalidArgument(
                "loud and quiet labels must differ".into(),
            ));
        }
        if !threshold.is_finite() {
            return Err(Error::InvalidArgument("threshold must be finite".into()));
        }
        Ok(Self {
            labels: labels.labels().to_vec(),
            threshold,
            loud,
            quiet,
        })
    }

    pub fn probabilities_for_mean(&self, mean: f64) -> Vec<f64> {
        let p_loud = sigmoid(mean - self.threshold);
        let rest = 1.0 - p_loud;
        let others = (self.labels.len() - 1) as f64;
        let mut probs = vec![rest / (2.0 * others); self.labels.len()];
        probs[self.loud] = p_loud;
        probs[self.quiet] += rest / 2.0;
        probs
    }
}

impl Oracle for EnergyClassifier {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        None
    }

    fn predict(&mut self, data: &Array2<f64>) -> Result<ProbabilityVector> {
        let mean = data
            .mean()
            .ok_or_else(|| Error::EmptyInput("empty spectrogram".into()))?;
        ProbabilityVector::new(self.probabilities_for_mean(mean))
    }
}

/// `softmax(<weights_c, spec>)` over labels.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    labels: Vec<String>,
    weights: Vec<Array2<f64>>,
}

impl LinearClassifier {
    pub fn new(labels: Vec<String>, weights: Vec<Array2<f64>>) -> Result<Self> {
        if labels.is_empty() || labels.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels but {} weight matrices",
                labels.len(),
                weights.len()
            )));
        }
        let dim = weights[0].dim();
        if let Some(w) = weights.iter().find(|w| w.dim() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: w.dim(),
            });
        }
        Ok(Self { labels, weights })
    }

    pub fn logits(&self, data: &Array2<f64>) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(data.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Reads a LIN1 weights file: `LIN1 H W n_labels`, then per label a line
    /// `label <name>` followed by H rows of W floats.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("empty weights file".into()))?
            .split_whitespace()
            .collect();
        if header.len() != 4 || header[0] != "LIN1" {
            return Err(Error::Format("expected header `LIN1 H W n_labels`".into()));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer {s:?} in LIN1 header")))
        };
        let (h, w, n) = (num(header[1])?, num(header[2])?, num(header[3])?);
        let mut labels = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let label_line = lines
                .next()
                .ok_or_else(|| Error::Format("truncated LIN1 file".into()))?;
            let name = label_line.strip_prefix("label ").ok_or_else(|| {
                Error::Format(format!("expected `label <name>`, got {label_line:?}"))
            })?;
            labels.push(name.trim().to_string());
            let mut m = Array2::zeros((h, w));
            for r in 0..h {
                let row = lines
                    .next()
                    .ok_or_else(|| Error::Format("truncated LIN1 matrix".into()))?;
                let vals = crate::formats::parse_row(row, w)?;
                for (c, v) in vals.into_iter().enumerate() {
                    m[(r, c)] = v;
                }
            }
            weights.push(m);
        }
        Self::new(labels, weights)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = self.weights[0].dim();
        let mut out = format!("LIN1 {h} {w} {}\n", self.labels.len());
        for (label, m) in self.labels.iter().zip(&self.weights) {
            out.push_str(&format!("label {label}\n"));
            crate::formats::push_matrix(&mut out, m);
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

impl Oracle for LinearClassifier {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        Some(self.weights[0].dim())
    }

    fn predict(&mut self, data: &Array2<f64>) -> Result<ProbabilityVector> {
        check_dims(self.input_dims(), data)?;
        let logits = self.logits(data);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        ProbabilityVector::new(exps.into_iter().map(|e| e / total).collect())
    }
}

#[derive(Serialize)]
struct Hello<'a> {
    hello: &'a str,
}

#[derive(Deserialize)]
struct HelloReply {
    labels: Vec<String>,
    #[serde(default)]
    h: Option<usize>,
    #[serde(default)]
    w: Option<usize>,
}

#[derive(Serialize)]
struct Request<'a> {
    id: &'a str,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct Reply {
    id: String,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

enum Incoming {
    Line(String),
    Closed { partial: usize },
    Failed(String),
}

fn spawn_line_reader<R: Read + Send + 'static>(reader: R) -> Receiver<Incoming> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut buf = Vec::new();
            let msg = match reader.read_until(b'\n', &mut buf) {
                Ok(0) => Incoming::Closed { partial: 0 },
                Ok(n) if buf.last() == Some(&b'\n') => {
                    Incoming::Line(String::from_utf8_lossy(&buf[..n - 1]).into_owned())
                }
                Ok(n) => Incoming::Closed { partial: n },
                Err(e) => Incoming::Failed(e.to_string()),
            };
            let done = !matches!(msg, Incoming::Line(_));
            if tx.send(msg).is_err() || done {
                break;
            }
        }
    });
    rx
}

/// Where an external oracle lives.
#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    /// Shell command whose stdin/stdout carry the protocol.
    Exec(String),
    Tcp(String),
}

/// ORC1 client.
pub struct ExternalOracle {
    endpoint: Endpoint,
    labels: Vec<String>,
    dims: Option<(usize, usize)>,
    writer: Box<dyn Write + Send>,
    incoming: Receiver<Incoming>,
    timeout: Duration,
    child: Option<Child>,
    socket: Option<TcpStream>,
    next_id: u64,
}

impl fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalOracle")
            .field("endpoint", &self.endpoint)
            .field("labels", &self.labels)
            .field("dims", &self.dims)
            .finish()
    }
}

impl ExternalOracle {
    pub fn connect(endpoint: Endpoint, timeout: Duration) -> Result<Self> {
        let (writer, incoming, child, socket): (Box<dyn Write + Send>, _, _, _) = match &endpoint {
            Endpoint::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Transport(format!("cannot start {cmd:?}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (
                    Box::new(stdin),
                    spawn_line_reader(stdout),
                    Some(child),
                    None,
                )
            }
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| Error::Transport(format!("cannot resolve {addr}: {e}")))?
                    .next()
                    .ok_or_else(|| Error::Transport(format!("{addr} resolves to nothing")))?;
                let stream = TcpStream::connect_timeout(&sock, timeout)
                    .map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
                stream.set_nodelay(true).ok();
                let clone = || {
                    stream
                        .try_clone()
                        .map_err(|e| Error::Transport(e.to_string()))
                };
                let (read_half, control) = (clone()?, clone()?);
                (
                    Box::new(stream),
                    spawn_line_reader(read_half),
                    None,
                    Some(control),
                )
            }
        };
        let mut oracle = Self {
            endpoint,
            labels: Vec::new(),
            dims: None,
            writer,
            incoming,
            timeout,
            child,
            socket,
            next_id: 0,
        };
        oracle.handshake()?;
        Ok(oracle)
    }

    fn send(&mut self, line: &str) -> Result<()> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(format!("write failed: {e}")))
    }

    fn recv(&mut self) -> Result<String> {
        match self.incoming.recv_timeout(self.timeout) {
            Ok(Incoming::Line(l)) => Ok(l),
            Ok(Incoming::Closed { partial: 0 }) => {
                Err(Error::Transport("connection closed before reply".into()))
            }
            Ok(Incoming::Closed { partial }) => Err(Error::Transport(format!(
                "connection closed mid-reply after {partial} bytes"
            ))),
            Ok(Incoming::Failed(e)) => Err(Error::Transport(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Transport(format!(
                "no reply within {:.1} s",
                self.timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Transport("connection closed".into()))
            }
        }
    }

    fn handshake(&mut self) -> Result<()> {
        let hello = serde_json::to_string(&Hello { hello: "ORC1" }).expect("serializable");
        self.send(&hello)?;
        let line = self.recv()?;
        let reply: HelloReply = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("bad handshake reply {line:?}: {e}")))?;
        if reply.labels.is_empty() {
            return Err(Error::Protocol("server announced no labels".into()));
        }
        self.labels = reply.labels;
        self.dims = match (reply.h, reply.w) {
            (Some(h), Some(w)) => Some((h, w)),
            _ => None,
        };
        Ok(())
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn validate_reply(&self, probs: Vec<f64>) -> Result<ProbabilityVector> {
        if probs.len() != self.labels.len() {
            return Err(Error::Protocol(format!(
                "{} probabilities for {} labels",
                probs.len(),
                self.labels.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| {
            !p.is_finite() || **p < -EXTERNAL_SUM_TOLERANCE || **p > 1.0 + EXTERNAL_SUM_TOLERANCE
        }) {
            return Err(Error::Protocol(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        let dev = (sum - 1.0).abs();
        if dev > EXTERNAL_SUM_TOLERANCE {
            return Err(Error::Protocol(format!("probabilities sum to {sum}")));
        }
        if dev <= SUM_TOLERANCE && probs.iter().all(|p| (0.0..=1.0).contains(p)) {
            return ProbabilityVector::new(probs);
        }
        log::warn!("renormalizing oracle reply summing to {sum}");
        let clipped: Vec<f64> = probs.iter().map(|p| p.clamp(0.0, 1.0)).collect();
        let total: f64 = clipped.iter().sum();
        ProbabilityVector::new(clipped.into_iter().map(|p| p / total).collect())
            .map_err(|e| Error::Protocol(e.to_string()))
    }
}

impl Oracle for ExternalOracle {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    fn predict(&mut self, data: &Array2<f64>) -> Result<ProbabilityVector> {
        check_dims(self.dims, data)?;
        let id = self.next_id.to_string();
        self.next_id += 1;
        let (h, w) = data.dim();
        let req = Request {
            id: &id,
            h,
            w,
            data: data.iter().copied().collect(),
        };
        let line = serde_json::to_string(&req).expect("serializable");
        self.send(&line)?;
        let reply_line = self.recv()?;
        let reply: Reply = serde_json::from_str(&reply_line)
            .map_err(|e| Error::Protocol(format!("malformed reply: {e}")))?;
        if reply.id != id {
            return Err(Error::Protocol(format!(
                "reply id {:?} does not match request {id:?}",
                reply.id
            )));
        }
        if let Some(err) = reply.error {
            return Err(Error::Protocol(format!("server error: {err}")));
        }
        let probs = reply
            .probs
            .ok_or_else(|| Error::Protocol("reply carries no probs".into()))?;
        self.validate_reply(probs)
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Some(sock) = self.socket.take() {
            let _ = sock.shutdown(std::net::Shutdown::Both);
        }
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Parsed `--oracle` argument; opens fresh handles on demand.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    Uniform,
    Energy {
        threshold: f64,
        loud: String,
        quiet: String,
    },
    Linear(PathBuf),
    External(Endpoint),
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec::Energy {
            threshold: DEFAULT_ENERGY_THRESHOLD,
            loud: "angry".into(),
            quiet: "sad".into(),
        }
    }
}

impl OracleSpec {
    pub fn open(
        &self,
        labels: &EmotionLabelSet,
        timeout: Duration,
    ) -> Result<Box<dyn Oracle + Send>> {
        Ok(match self {
            OracleSpec::Uniform => Box::new(UniformOracle::new(labels)),
            OracleSpec::Energy {
                threshold,
                loud,
                quiet,
            } => Box::new(EnergyClassifier::new(labels, *threshold, loud, quiet)?),
            OracleSpec::Linear(path) => Box::new(LinearClassifier::from_file(path)?),
            OracleSpec::External(ep) => Box::new(ExternalOracle::connect(ep.clone(), timeout)?),
        })
    }

    pub fn is_external(&self) -> bool {
        matches!(self, OracleSpec::External(_))
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Uniform => write!(f, "builtin:uniform"),
            OracleSpec::Energy {
                threshold,
                loud,
                quiet,
            } => {
                write!(f, "builtin:energy:{threshold:?}:{loud}:{quiet}")
            }
            OracleSpec::Linear(p) => write!(f, "builtin:linear:{}", p.display()),
            OracleSpec::External(Endpoint::Exec(cmd)) => write!(f, "exec:{cmd}"),
            OracleSpec::External(Endpoint::Tcp(addr)) => write!(f, "tcp:{addr}"),
        }
    }
}

impl FromStr for OracleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized oracle {s:?}"));
        if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(bad());
            }
            return Ok(OracleSpec::External(Endpoint::Exec(cmd.to_string())));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.is_empty() {
                return Err(bad());
            }
            return Ok(OracleSpec::External(Endpoint::Tcp(addr.to_string())));
        }
        if let Some(path) = s.strip_prefix("builtin:linear:") {
            return Ok(OracleSpec::Linear(PathBuf::from(path)));
        }
        if s == "builtin:uniform" {
            return Ok(OracleSpec::Uniform);
        }
        if let Some(rest) = s.strip_prefix("builtin:energy") {
            let OracleSpec::Energy {
                mut threshold,
                mut loud,
                mut quiet,
            } = OracleSpec::default()
            else {
                unreachable!()
            };
            let parts: Vec<&str> = rest.split(':').skip(1).collect();
            if !rest.is_empty() && !rest.starts_with(':') {
                return Err(bad());
            }
            match parts.as_slice() {
                [] => {}
                [t] => threshold = t.parse().map_err(|_| bad())?,
                [t, l, q] => {
                    threshold = t.parse().map_err(|_| bad())?;
                    loud = l.to_string();
                    quiet = q.to_string();
                }
                _ => return Err(bad()),
            }
            return Ok(OracleSpec::Energy {
                threshold,
                loud,
                quiet,
            });
        }
        Err(bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    fn spec(h: usize, w: usize, v: f64) -> Array2<f64> {
        Array2::from_elem((h, w), v)
    }

    #[test]
    fn uniform_oracle() {
        let labels = EmotionLabelSet::default();
        let mut o = UniformOracle::new(&labels);
        let p = o.predict(&spec(4, 5, 3.0)).unwrap();
        assert!(p.as_slice().iter().all(|&x| x == 1.0 / 6.0));
    }

    #[test]
    fn label_set_arousal() {
        let labels = EmotionLabelSet::default();
        assert_eq!(labels.arousal_of("angry"), Some(Arousal::High));
        assert_eq!(labels.arousal_of("sad"), Some(Arousal::Low));
        assert_eq!(labels.arousal_of("disgust"), Some(Arousal::Low));
        assert_eq!(labels.flipped().arousal_of("angry"), Some(Arousal::Low));
        assert!(EmotionLabelSet::from_names(["angry", "angry"]).is_err());
        assert!(EmotionLabelSet::from_names(["grumpy"]).is_err());
        let mut l = labels.clone();
        l.set_arousal("disgust", Arousal::High).unwrap();
        assert_eq!(l.arousal_of("disgust"), Some(Arousal::High));
    }

    #[test]
    fn energy_classifier_anchor_points() {
        let labels = EmotionLabelSet::default();
        let mut o = EnergyClassifier::new(&labels, -5.0, "angry", "sad").unwrap();
        let angry = labels.index_of("angry").unwrap();
        let sad = labels.index_of("sad").unwrap();
        assert_eq!(o.predict(&spec(3, 3, -5.0)).unwrap().get(angry), 0.5);
        let hot = o.predict(&spec(3, 3, 200.0)).unwrap();
        assert!(hot.get(angry) > 1.0 - 1e-12);
        let silent = o.predict(&spec(3, 3, 1e-10f64.ln())).unwrap();
        assert_eq!(silent.argmax(), sad);
        assert!(EnergyClassifier::new(&labels, 0.0, "angry", "bored").is_err());
    }

    #[test]
    fn energy_classifier_monotone_sweep() {
        let labels = EmotionLabelSet::default();
        let mut o = EnergyClassifier::new(&labels, 0.0, "angry", "sad").unwrap();
        let mut base = Array2::from_shape_fn((4, 6), |(r, c)| (r as f64 - c as f64) * 0.7);
        let mut last = o.predict(&base).unwrap().get(0);
        for step in 0..50 {
            let (r, c) = (step % 4, (step * 5) % 6);
            base[(r, c)] += 0.3;
            let p = o.predict(&base).unwrap().get(0);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn linear_classifier_properties() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let w = Array2::from_shape_fn((2, 3), |(r, c)| 0.1 * (r as f64 + 1.0) - 0.05 * c as f64);
        let mut o = LinearClassifier::new(labels.clone(), vec![w.clone(), -w.clone()]).unwrap();
        let x = Array2::from_shape_fn((2, 3), |(r, c)| (r * 3 + c) as f64 * 0.2 - 0.4);
        let dot: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let p = o.predict(&x).unwrap();
        assert!((p.get(0) - sigmoid(2.0 * dot)).abs() < 1e-12);

        let mut zero = LinearClassifier::new(labels, vec![Array2::zeros((2, 3)); 2]).unwrap();
        assert_eq!(zero.predict(&x).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(matches!(
            o.predict(&Array2::zeros((3, 3))),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn linear_weights_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lin");
        let w = Array2::from_shape_fn((2, 3), |(r, c)| (r as f64 - 0.3) * (c as f64 + 0.1) / 7.0);
        let o =
            LinearClassifier::new(vec!["x".into(), "y".into()], vec![w.clone(), w * -3.0]).unwrap();
        o.write_file(&path).unwrap();
        let back = LinearClassifier::from_file(&path).unwrap();
        assert_eq!(back.weights, o.weights);
        assert_eq!(back.labels, o.labels);
    }

    #[test]
    fn oracle_spec_parsing() {
        for s in [
            "builtin:uniform",
            "builtin:energy:-3.5:angry:sad",
            "builtin:linear:/tmp/w.lin",
            "exec:python3 serve.py --stdio",
            "tcp:127.0.0.1:9000",
        ] {
            let spec: OracleSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!(
            "builtin:energy".parse::<OracleSpec>().unwrap(),
            OracleSpec::default()
        );
        assert!("builtin:energyx".parse::<OracleSpec>().is_err());
        assert!("nope".parse::<OracleSpec>().is_err());
    }

    /// Minimal ORC1 server answering every request with a fixed vector.
    pub(crate) fn serve_fixed(reply: &'static str, drop_mid_reply: bool) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut writer = stream.try_clone().unwrap();
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            writeln!(writer, r#"{{"labels": ["angry", "sad", "neutral"]}}"#).unwrap();
            loop {
                line.clear();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let v: serde_json::Value = serde_json::from_str(&line).unwrap();
                let id = v["id"].as_str().unwrap().to_string();
                if drop_mid_reply {
                    write!(writer, r#"{{"id": "{id}", "probs": [0.2"#).unwrap();
                    writer.flush().unwrap();
                    break;
                }
                writeln!(writer, r#"{{"id": "{id}", "probs": {reply}}}"#).unwrap();
            }
        });
        addr
    }

    #[test]
    fn tcp_echo_round_trip() {
        let addr = serve_fixed("[0.25, 0.5, 0.25]", false);
        let mut o = ExternalOracle::connect(Endpoint::Tcp(addr), DEFAULT_TIMEOUT).unwrap();
        assert_eq!(o.labels(), &["angry", "sad", "neutral"]);
        for _ in 0..3 {
            let p = o.predict(&spec(2, 2, 0.0)).unwrap();
            assert_eq!(p.as_slice(), &[0.25, 0.5, 0.25]);
        }
    }

    #[test]
    fn tcp_bad_sum_is_protocol_error() {
        let addr = serve_fixed("[0.2, 0.4, 0.2]", false);
        let mut o = ExternalOracle::connect(Endpoint::Tcp(addr), DEFAULT_TIMEOUT).unwrap();
        assert!(matches!(
            o.predict(&spec(2, 2, 0.0)),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn tcp_jitter_is_renormalized() {
        let addr = serve_fixed("[0.25, 0.50005, 0.25]", false);
        let mut o = ExternalOracle::connect(Endpoint::Tcp(addr), DEFAULT_TIMEOUT).unwrap();
        let p = o.predict(&spec(2, 2, 0.0)).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tcp_dropped_mid_reply() {
        let addr = serve_fixed("[]", true);
        let mut o = ExternalOracle::connect(Endpoint::Tcp(addr), DEFAULT_TIMEOUT).unwrap();
        match o.predict(&spec(2, 2, 0.0)) {
            Err(Error::Transport(msg)) => assert!(msg.contains("mid-reply"), "{msg}"),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn tcp_timeout() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let hold = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            thread::sleep(Duration::from_millis(500));
            drop(s);
        });
        let err =
            ExternalOracle::connect(Endpoint::Tcp(addr), Duration::from_millis(100)).unwrap_err();
        assert!(
            matches!(err, Error::Transport(ref m) if m.contains("no reply")),
            "{err}"
        );
        hold.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        assert!(matches!(
            ExternalOracle::connect(Endpoint::Tcp(addr), Duration::from_secs(1)),
            Err(Error::Transport(_))
        ));
    }

    #[test]
    fn exec_transport() {
        if Command::new("python3")
            .arg("-c")
            .arg("pass")
            .status()
            .map(|s| !s.success())
            .unwrap_or(true)
        {
            eprintln!("python3 unavailable, skipping exec transport test");
            return;
        }
        let script = r#"
import sys, json
for line in sys.stdin:
    msg = json.loads(line)
    if "hello" in msg:
        print(json.dumps({"labels": ["hi", "lo"], "h": 2, "w": 3}), flush=True)
    else:
        print(json.dumps({"id": msg["id"], "probs": [0.75, 0.25]}), flush=True)
"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("srv.py");
        std::fs::write(&path, script).unwrap();
        let cmd = format!("python3 {}", path.display());
        let mut o = ExternalOracle::connect(Endpoint::Exec(cmd), DEFAULT_TIMEOUT).unwrap();
        assert_eq!(o.input_dims(), Some((2, 3)));
        assert_eq!(
            o.predict(&spec(2, 3, 1.0)).unwrap().as_slice(),
            &[0.75, 0.25]
        );
        assert!(matches!(
            o.predict(&spec(2, 2, 1.0)),
            Err(Error::Shape { .. })
        ));
    }
}
