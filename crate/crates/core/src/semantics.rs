//! Node texts, LLM summarization, and feature encoding.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::llm::{LlmClient, LlmRequest, Task};
use crate::numcore::Tensor;
use crate::rng::{self, tag};
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Question,
    Concept,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Question => "question",
            NodeKind::Concept => "concept",
        }
    }

    /// Prefix of graph node keys, `q:<id>` or `c:<id>`.
    pub fn key(self, id: &str) -> String {
        match self {
            NodeKind::Question => format!("q:{id}"),
            NodeKind::Concept => format!("c:{id}"),
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "question" => Ok(NodeKind::Question),
            "concept" => Ok(NodeKind::Concept),
            other => Err(Error::Validation(format!("unknown node kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeText {
    pub id: String,
    pub kind: NodeKind,
    pub original: String,
    pub summary: Option<String>,
}

impl NodeText {
    pub fn new(id: impl Into<String>, kind: NodeKind, original: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            original: original.into(),
            summary: None,
        }
    }

    pub fn key(&self) -> String {
        self.kind.key(&self.id)
    }

    /// Summary when present, else the original text.
    pub fn text(&self) -> &str {
        self.summary.as_deref().unwrap_or(&self.original)
    }
}

/// Parses `node_id<TAB>kind<TAB>text` lines. Tabs and newlines inside text
/// are written as `\t`, `\n` and `\\`.
pub fn parse_node_texts(text: &str, source: &str) -> Result<Vec<NodeText>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(kind), Some(body)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(source, line_no, "expected `node_id<TAB>kind<TAB>text`"));
        };
        let kind: NodeKind = kind
            .parse()
            .map_err(|e: Error| Error::parse(source, line_no, e.to_string()))?;
        let body = unescape(body).map_err(|m| Error::parse(source, line_no, m))?;
        if id.is_empty() || body.trim().is_empty() {
            return Err(Error::parse(source, line_no, "empty node id or text"));
        }
        if !seen.insert((kind, id.to_string())) {
            return Err(Error::parse(source, line_no, format!("duplicate node `{id}`")));
        }
        out.push(NodeText::new(id, kind, body));
    }
    Ok(out)
}

pub fn load_node_texts(path: &Path) -> Result<Vec<NodeText>> {
    let text = crate::error::read_to_string(path)?;
    parse_node_texts(&text, &path.display().to_string())
}

/// Writes the node-text format using each node's current text (summary if
/// present).
pub fn node_texts_to_string(nodes: &[NodeText]) -> String {
    let mut out = String::new();
    for n in nodes {
        out.push_str(&format!("{}\t{}\t{}\n", n.id, n.kind, escape(n.text())));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

const QUESTION_INSTRUCTION: &str = "You will be shown an exercise from a programming or \
mathematics course. Explain in two or three plain sentences what knowledge the exercise \
tests, which concepts a learner must understand to solve it, and what kind of reasoning \
it requires. Do not solve the exercise and do not repeat code.";

const CONCEPT_INSTRUCTION: &str = "You will be shown the name of a knowledge concept from \
a programming or mathematics course. Explain in two or three plain sentences what the \
concept means, what it is used for, and which simpler ideas it builds on.";

const QUESTION_EXAMPLES: [(&str, &str); 3] = [
    (
        "Write a function that returns the sum of all even numbers in an integer array.",
        "The exercise tests iteration over an array and conditional accumulation. The learner \
must know loops, the modulo operator for parity checks, and how to keep a running total.",
    ),
    (
        "Given the head of a singly linked list, reverse the list and return the new head.",
        "The exercise tests pointer manipulation on linked data structures. The learner must \
understand nodes and next references and must track several references while rewiring them.",
    ),
    (
        "Compute the determinant of the 3x3 matrix [[2,0,1],[1,3,2],[1,1,1]].",
        "The exercise tests the definition and computation of determinants. The learner must \
know cofactor expansion or row reduction and careful arithmetic with signs.",
    ),
];

const CONCEPT_EXAMPLES: [(&str, &str); 3] = [
    (
        "recursion",
        "Recursion is a technique where a function solves a problem by calling itself on \
smaller instances. It is used for divide-and-conquer algorithms and tree traversal and \
builds on functions and base cases.",
    ),
    (
        "hash table",
        "A hash table stores key-value pairs in an array indexed by a hash of the key. It is \
used for fast lookup and deduplication and builds on arrays, hash functions and collision \
handling.",
    ),
    (
        "eigenvalue",
        "An eigenvalue is a scalar by which a linear map stretches one of its eigenvectors. It \
is used to analyse stability and diagonalize matrices and builds on matrix multiplication \
and determinants.",
    ),
];

/// Summarization prompt: instruction, worked examples, then the node text.
pub fn render_summary_prompt(kind: NodeKind, text: &str) -> String {
    let (instruction, examples, label) = match kind {
        NodeKind::Question => (QUESTION_INSTRUCTION, &QUESTION_EXAMPLES, "Exercise"),
        NodeKind::Concept => (CONCEPT_INSTRUCTION, &CONCEPT_EXAMPLES, "Concept"),
    };
    let mut out = String::from(instruction);
    out.push_str("\n\n");
    for (input, answer) in examples.iter() {
        out.push_str(&format!("{label}: {input}\nExplanation: {answer}\n\n"));
    }
    out.push_str(&format!("{label}: {text}\nExplanation:"));
    out
}

/// Asks the backend for a summary. An empty reply falls back to the
/// original text.
pub fn summarize(client: &dyn LlmClient, node: &NodeText) -> Result<String> {
    if node.original.trim().is_empty() {
        return Err(Error::Validation(format!("node `{}` has empty text", node.key())));
    }
    let request = LlmRequest {
        prompt: render_summary_prompt(node.kind, &node.original),
        sample: 0,
        task: Task::Summary {
            kind: node.kind,
            text: node.original.clone(),
        },
    };
    let reply = client.complete(&request)?;
    let reply = reply.trim();
    if reply.is_empty() {
        log::warn!("empty summary for `{}`; using original text", node.key());
        Ok(node.original.clone())
    } else {
        Ok(reply.to_string())
    }
}

/// Summarizes every node with bounded parallelism.
pub fn summarize_all(
    client: &dyn LlmClient,
    nodes: &[NodeText],
    parallelism: usize,
) -> Result<Vec<NodeText>> {
    let summaries = crate::par::try_map(nodes, parallelism, |n| summarize(client, n))?;
    Ok(nodes
        .iter()
        .zip(summaries)
        .map(|(n, s)| NodeText {
            summary: Some(s),
            ..n.clone()
        })
        .collect())
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashEncoder {
    pub dim: usize,
    pub seed: u64,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Validation(format!("no tokens in `{text}`")));
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            let h = rng::derive_seed(self.seed, &[fnv1a(t.as_bytes())]);
            let bucket = (h % self.dim as u64) as usize;
            v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Every token cancelled out; fall back to the first token alone.
            let h = rng::derive_seed(self.seed, &[fnv1a(tokens[0].as_bytes())]);
            v[(h % self.dim as u64) as usize] = 1.0;
            return Ok(v);
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One feature row per graph node, rows ordered as `keys`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub keys: Vec<String>,
    pub values: Tensor,
}

impl FeatureMatrix {
    pub fn new(keys: Vec<String>, values: Tensor) -> Result<Self> {
        if keys.len() != values.rows() {
            return Err(Error::Validation(format!(
                "{} keys for {} feature rows",
                keys.len(),
                values.rows()
            )));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self { keys, values })
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Reorders rows to `keys`; errors list every missing key.
    pub fn aligned(&self, keys: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();
        let missing: Vec<String> = keys
            .iter()
            .filter(|k| !index.contains_key(k.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingNodes(missing));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(keys.len() * d);
        for k in keys {
            data.extend_from_slice(self.values.row(index[k.as_str()]));
        }
        Self::new(keys.to_vec(), Tensor::new(keys.len(), d, data)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("D={}\n", self.dim());
        for (i, k) in self.keys.iter().enumerate() {
            out.push_str(k);
            for v in self.values.row(i) {
                out.push_str(&format!(" {v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, 1, "missing `D=<int>` header"))?;
        let dim: usize = header
            .trim()
            .strip_prefix("D=")
            .and_then(|d| d.parse().ok())
            .filter(|&d| d > 0 && d <= 1 << 20)
            .ok_or_else(|| Error::parse(source, 1, "expected header `D=<positive int>`"))?;
        let mut keys = Vec::new();
        let mut seen = HashSet::new();
        let mut data = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let mut fields = line.split_whitespace();
            let key = fields.next().expect("nonblank line");
            let row: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(source, line_no, format!("bad number `{f}`")))
                })
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected {dim} values, got {}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(source, line_no, "non-finite value"));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(source, line_no, format!("duplicate node `{key}`")));
            }
            keys.push(key.to_string());
            data.extend(row);
        }
        if keys.is_empty() {
            return Err(Error::parse(source, 1, "no embedding rows"));
        }
        Self::new(keys.clone(), Tensor::new(keys.len(), dim, data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write_file(path, self.to_text().as_bytes())
    }
}

/// Loads a precomputed embedding file and orders it by `keys`. A file whose
/// dimension differs from `expected_dim` is rejected.
pub fn load_precomputed_embeddings(
    path: &Path,
    keys: &[String],
    expected_dim: Option<usize>,
) -> Result<FeatureMatrix> {
    let text = crate::error::read_to_string(path)?;
    let m = FeatureMatrix::parse(&text, &path.display().to_string())?;
    if let Some(d) = expected_dim {
        if m.dim() != d {
            return Err(Error::Validation(format!(
                "{}: embedding dimension {} but {d} expected",
                path.display(),
                m.dim()
            )));
        }
    }
    m.aligned(keys)
}

/// Encodes each node's current text (summary if present).
pub fn encode_nodes(encoder: &HashEncoder, nodes: &[NodeText]) -> Result<FeatureMatrix> {
    if nodes.is_empty() {
        return Err(Error::Validation("no nodes to encode".into()));
    }
    let mut data = Vec::with_capacity(nodes.len() * encoder.dim);
    for n in nodes {
        data.extend(encoder.encode(n.text())?);
    }
    FeatureMatrix::new(
        nodes.iter().map(NodeText::key).collect(),
        Tensor::new(nodes.len(), encoder.dim, data)?,
    )
}

/// Seeded unit-norm random rows standing in for id-based embeddings.
pub fn random_features(keys: &[String], dim: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = rng::stream(seed, &[tag::RANDOM_FEATURES]);
    let mut data = Vec::with_capacity(keys.len() * dim);
    for _ in keys {
        let row: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        data.extend(row.into_iter().map(|x| x / norm));
    }
    FeatureMatrix::new(keys.to_vec(), Tensor::new(keys.len(), dim, data)?)
}
