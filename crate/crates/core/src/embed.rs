//! Language-template embedding of nodes and hardware platforms.
//!
//! Every node and every platform is rendered into a short whitespace
//! template ("ParamL Conv 3", "Nv GPU FP32 8.1 Turing 70W"), tokenized
//! against a corpus-built vocabulary, and encoded into a `d_model`
//! vector. Node and platform strings go through the same encoder so both
//! modalities land in one space.
//!
//! Three encoders implement the same interface:
//!
//! - `HashDeterministic` (default): frozen, content-addressed token
//!   vectors. Tokens with a numeric prefix additionally carry a smooth
//!   log-magnitude encoding in the leading dimensions, which is what
//!   lets the predictor interpolate across attribute values and
//!   throughput numbers it has never seen paired with a target.
//! - `RandomlyInitialized`: frozen, seed-addressed vectors with no
//!   structure. Ablation baseline.
//! - `TrainableSmall`: learned table plus one self-attention layer;
//!   can be unfrozen during training.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArchGraph, NodeRecord, OpRegistry};
use crate::rng::{fnv1a64, Rng};
use crate::tensor::Tensor;

// ── Platforms ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "FP32")]
    Fp32,
    #[serde(rename = "FP16")]
    Fp16,
    #[serde(rename = "INT8")]
    Int8,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Fp32 => "FP32",
            Precision::Fp16 => "FP16",
            Precision::Int8 => "INT8",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FP32" => Ok(Precision::Fp32),
            "FP16" => Ok(Precision::Fp16),
            "INT8" => Ok(Precision::Int8),
            other => Err(Error::Key(format!("precision {other:?}"))),
        }
    }
}

/// Hardware platform description. `throughput_tflops` is the peak
/// compute rate at the stated precision (TFLOPS for float, TOPS for
/// INT8).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformRecord {
    pub platform_id: String,
    pub vendor: String,
    pub device_class: String,
    pub precision: Precision,
    pub throughput_tflops: f64,
    pub microarch: String,
    pub tdp_watts: f64,
}

impl PlatformRecord {
    /// Fixed stand-in platform for the accuracy task, which has no
    /// hardware dimension.
    pub fn pseudo_for_accuracy() -> Self {
        PlatformRecord {
            platform_id: "none".into(),
            vendor: "None".into(),
            device_class: "None".into(),
            precision: Precision::Fp32,
            throughput_tflops: 1.0,
            microarch: "None".into(),
            tdp_watts: 1.0,
        }
    }
}

// ── Templates ───────────────────────────────────────────────────────

/// A rendered template: single-space separated tokens, no surrounding
/// whitespace.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TemplateString(String);

impl TemplateString {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for TemplateString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// `<category> <op_name> <attr_1> ... <attr_k>`
pub fn render_node_template(node: &NodeRecord, registry: &OpRegistry) -> Result<TemplateString> {
    registry.validate(node)?;
    let mut s = format!("{} {}", node.category, node.op_name);
    for a in &node.attrs {
        s.push(' ');
        s.push_str(&a.to_string());
    }
    Ok(TemplateString(s))
}

/// `<vendor> <device_class> <precision> <throughput> <microarch> <tdp>W`
pub fn render_platform_template(p: &PlatformRecord) -> Result<TemplateString> {
    for (field, value) in [
        ("vendor", &p.vendor),
        ("device_class", &p.device_class),
        ("microarch", &p.microarch),
    ] {
        if value.trim().is_empty() || value.contains(char::is_whitespace) {
            return Err(Error::Schema(format!(
                "platform {}: bad {field} {value:?}",
                p.platform_id
            )));
        }
    }
    if !p.throughput_tflops.is_finite()
        || p.throughput_tflops <= 0.0
        || !p.tdp_watts.is_finite()
        || p.tdp_watts <= 0.0
    {
        return Err(Error::Schema(format!(
            "platform {}: throughput and tdp must be positive",
            p.platform_id
        )));
    }
    Ok(TemplateString(format!(
        "{} {} {} {} {} {}W",
        p.vendor,
        p.device_class,
        p.precision,
        render_number(p.throughput_tflops),
        p.microarch,
        render_number(p.tdp_watts),
    )))
}

/// Integers render bare ("130", "1"); everything else uses the shortest
/// round-trip float form ("8.1").
fn render_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

// ── Vocabulary and tokenizer ────────────────────────────────────────

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Token table: line number = id. Ids 0 and 1 are reserved for UNK/PAD.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const PAD: usize = 1;

    /// Build from a template corpus in first-seen order, reserved tokens
    /// first.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a TemplateString>) -> Self {
        let mut v = Vocabulary { words: Vec::new(), index: HashMap::new() };
        v.insert(UNK_TOKEN);
        v.insert(PAD_TOKEN);
        for t in corpus {
            for word in t.as_str().split_whitespace() {
                v.insert(word);
            }
        }
        v
    }

    fn insert(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.words.len());
            self.words.push(word.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[0] != UNK_TOKEN || words[1] != PAD_TOKEN {
            return Err(Error::Vocabulary(
                "vocabulary must start with the reserved <unk>/<pad> tokens".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {w:?}")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    /// Newline-delimited token file, line number = id.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for w in &self.words {
            writeln!(f, "{w}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let words: Vec<String> = std::io::BufReader::new(f)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Vocabulary::from_words(words)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub vocab: Vocabulary,
    pub max_seq_len: usize,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, max_seq_len: usize) -> Self {
        Tokenizer { vocab, max_seq_len }
    }

    /// Whitespace split, vocabulary lookup, unknowns to UNK. Sequences
    /// longer than `max_seq_len` are truncated (never happens with the
    /// stock templates).
    pub fn tokenize(&self, t: &TemplateString) -> TokenSequence {
        let ids = t
            .as_str()
            .split_whitespace()
            .take(self.max_seq_len)
            .map(|w| self.vocab.id(w))
            .collect();
        TokenSequence { ids }
    }
}

// ── Encoders ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    HashDeterministic,
    TrainableSmall,
    RandomlyInitialized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub d_model: usize,
    pub max_seq_len: usize,
    pub pooling: Pooling,
}

impl EncoderSpec {
    pub fn new(kind: EncoderKind, d_model: usize) -> Self {
        EncoderSpec { kind, d_model, max_seq_len: 16, pooling: Pooling::Mean }
    }
}

/// Number of leading dimensions reserved for the numeric magnitude
/// encoding in the hash encoder.
pub fn numeric_feature_dims(d_model: usize) -> usize {
    8.min(d_model / 2)
}

/// Longest numeric prefix of a token ("70W" -> 70, "8.1" -> 8.1).
/// Tokens that do not start with a digit have none.
fn numeric_prefix(word: &str) -> Option<f64> {
    let end = word
        .char_indices()
        .take_while(|(_, c)| c.is_ascii_digit() || *c == '.')
        .map(|(i, c)| i + c.len_utf8())
        .last()?;
    word[..end].parse::<f64>().ok().filter(|v| *v > 0.0)
}

/// Smooth periodic encoding of log-magnitude, normalized so the values
/// seen in templates (1 .. ~1000) map into [0, 1].
fn magnitude_features(v: f64, out: &mut [f64]) {
    let x = v.ln() / 1024f64.ln();
    let feats = [
        1.0,
        x,
        (std::f64::consts::PI * x).sin(),
        (std::f64::consts::PI * x).cos(),
        (2.0 * std::f64::consts::PI * x).sin(),
        (2.0 * std::f64::consts::PI * x).cos(),
        (4.0 * std::f64::consts::PI * x).sin(),
        (4.0 * std::f64::consts::PI * x).cos(),
    ];
    for (o, f) in out.iter_mut().zip(feats) {
        *o = f;
    }
}

const HASH_SALT: u64 = 0x517C_C1B7_2722_0A95;
const TOKEN_SCALE: f64 = 0.5;

fn hash_token_vector(word: &str, d_model: usize) -> Vec<f64> {
    let nf = numeric_feature_dims(d_model);
    let mut row = vec![0.0; d_model];
    if let Some(v) = numeric_prefix(word) {
        magnitude_features(v, &mut row[..nf]);
    }
    let mut rng = Rng::from_seed(fnv1a64(word.as_bytes()) ^ HASH_SALT);
    for slot in row.iter_mut().skip(nf) {
        *slot = rng.range_f64(-1.0, 1.0) * TOKEN_SCALE;
    }
    row
}

/// Build the `vocab x d_model` token table for an encoder kind.
///
/// The hash table is content-addressed and identical across runs,
/// machines, and seeds. The other kinds draw from `seed`.
pub fn init_table(spec: &EncoderSpec, vocab: &Vocabulary, seed: u64) -> Tensor {
    let (v, d) = (vocab.len(), spec.d_model);
    match spec.kind {
        EncoderKind::HashDeterministic => {
            let mut data = Vec::with_capacity(v * d);
            for w in vocab.words() {
                data.extend_from_slice(&hash_token_vector(w, d));
            }
            Tensor::from_vec(vec![v, d], data).expect("hash table finite")
        }
        EncoderKind::RandomlyInitialized | EncoderKind::TrainableSmall => {
            let mut rng = Rng::from_seed(seed ^ 0xE0C0_0DE5);
            Tensor::from_fn(v, d, |_, _| rng.normal() * TOKEN_SCALE)
        }
    }
}

/// Self-attention projections for the trainable encoder (None for the
/// frozen kinds).
pub fn init_attention(spec: &EncoderSpec, seed: u64) -> Option<[Tensor; 3]> {
    if spec.kind != EncoderKind::TrainableSmall {
        return None;
    }
    let d = spec.d_model;
    let mut rng = Rng::from_seed(seed ^ 0xA77E_1710);
    let a = (6.0 / (2.0 * d as f64)).sqrt();
    let mut proj = || Tensor::from_fn(d, d, |_, _| rng.range_f64(-a, a));
    Some([proj(), proj(), proj()])
}

/// Borrowed view over an encoder's parameters; encoding is pure.
#[derive(Clone, Copy)]
pub struct EncoderView<'a> {
    pub spec: &'a EncoderSpec,
    pub table: &'a Tensor,
    pub attn: Option<[&'a Tensor; 3]>,
}

impl<'a> EncoderView<'a> {
    /// Token lookup (plus one attention layer for the trainable kind),
    /// mean-pooled to a single `d_model` vector.
    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.ids.is_empty() {
            return Err(Error::Contract("encode: empty token sequence".into()));
        }
        let d = self.spec.d_model;
        if let Some(&bad) = seq.ids.iter().find(|&&i| i >= self.table.rows()) {
            return Err(Error::Vocabulary(format!(
                "token id {bad} outside table of {}",
                self.table.rows()
            )));
        }
        let l = seq.ids.len();
        let mut x = Tensor::zeros(vec![l, d]);
        for (r, &id) in seq.ids.iter().enumerate() {
            x.data_mut()[r * d..(r + 1) * d].copy_from_slice(self.table.row(id));
        }
        let pooled_input = match self.attn {
            None => x,
            Some([wq, wk, wv]) => {
                let q = x.matmul(wq)?;
                let k = x.matmul(wk)?;
                let v = x.matmul(wv)?;
                let scores = q.matmul_nt(&k)?.scale(1.0 / (d as f64).sqrt());
                let probs = scores.row_softmax()?;
                probs.matmul(&v)?
            }
        };
        let Pooling::Mean = self.spec.pooling;
        let mut out = vec![0.0; d];
        for r in 0..pooled_input.rows() {
            for (o, &v) in out.iter_mut().zip(pooled_input.row(r)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= pooled_input.rows() as f64;
        }
        Ok(out)
    }
}

/// Tokenizer + encoder bundle used everywhere a graph must become a
/// matrix.
pub struct Embedder<'a> {
    pub tokenizer: &'a Tokenizer,
    pub registry: &'a OpRegistry,
    pub encoder: EncoderView<'a>,
}

impl<'a> Embedder<'a> {
    pub fn node_vector(&self, node: &NodeRecord) -> Result<Vec<f64>> {
        let t = render_node_template(node, self.registry)?;
        self.encoder.encode(&self.tokenizer.tokenize(&t))
    }

    pub fn platform_vector(&self, p: &PlatformRecord) -> Result<Vec<f64>> {
        let t = render_platform_template(p)?;
        self.encoder.encode(&self.tokenizer.tokenize(&t))
    }

    /// The `(n+1) x d_model` input matrix: one row per node in
    /// topological order, the platform embedding last.
    pub fn embed_graph(&self, g: &ArchGraph, p: &PlatformRecord) -> Result<Tensor> {
        let d = self.encoder.spec.d_model;
        let n = g.node_count();
        let mut data = Vec::with_capacity((n + 1) * d);
        for node in g.nodes() {
            data.extend_from_slice(&self.node_vector(node)?);
        }
        data.extend_from_slice(&self.platform_vector(p)?);
        Tensor::from_vec(vec![n + 1, d], data)
    }
}
