//! Predictor assembly: embedding -> attention stack -> readout ->
//! platform concatenation -> regression head, plus checkpoint IO.
//!
//! For the latency task the head emits log-latency and the prediction is
//! `exp(head)`, which keeps predictions positive and makes the squared
//! log-space loss a plain squared error on the head output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgsa::{
    encoder_stack, gate_hidden_dim, BranchMasks, DgsaConfig, LayerVars, FFN_EXPANSION,
};
use crate::embed::{
    init_attention, init_table, EncoderKind, EncoderSpec, Embedder, EncoderView, PlatformRecord,
    Tokenizer, Vocabulary,
};
use crate::error::{Error, Result};
use crate::graph::{derive_masks, ArchGraph, OpRegistry};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Latency,
    Accuracy,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latency" => Ok(TaskKind::Latency),
            "accuracy" => Ok(TaskKind::Accuracy),
            other => Err(Error::Key(format!("task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTarget {
    pub kind: TaskKind,
    pub value: f64,
}

impl PredictionTarget {
    pub fn latency_ms(value: f64) -> Self {
        PredictionTarget { kind: TaskKind::Latency, value }
    }

    pub fn accuracy(value: f64) -> Self {
        PredictionTarget { kind: TaskKind::Accuracy, value }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TaskKind::Latency if self.value > 0.0 => Ok(()),
            TaskKind::Latency => {
                Err(Error::Contract(format!("latency target must be positive, got {}", self.value)))
            }
            TaskKind::Accuracy if (0.0..=1.0).contains(&self.value) => Ok(()),
            TaskKind::Accuracy => {
                Err(Error::Contract(format!("accuracy target must be in [0,1], got {}", self.value)))
            }
        }
    }
}

/// Hidden width of the prediction head (input is `2 * d_model`).
pub fn head_hidden_dim(d_model: usize) -> usize {
    2 * d_model
}

// ── Parameter layout ────────────────────────────────────────────────

/// Flat parameter order: encoder table, optional encoder attention
/// (3), then 17 tensors per layer, then the 4 head tensors. Everything
/// that serializes, binds, or enumerates parameters goes through this.
#[derive(Clone, Copy, Debug)]
struct Layout {
    enc_attn: bool,
    n_layers: usize,
}

const LAYER_TENSORS: usize = 17;
const LAYER_NAMES: [&str; LAYER_TENSORS] = [
    "norm1", "w_q", "w_k", "w_v", "w_o", "gate_wq", "gate_wk", "gate_wv", "gate_w1", "gate_b1",
    "gate_w2", "gate_b2", "norm2", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
];

impl Layout {
    fn layers_base(&self) -> usize {
        1 + if self.enc_attn { 3 } else { 0 }
    }

    fn head_base(&self) -> usize {
        self.layers_base() + self.n_layers * LAYER_TENSORS
    }

    fn total(&self) -> usize {
        self.head_base() + 4
    }

    fn name(&self, idx: usize) -> String {
        if idx == 0 {
            return "encoder.table".into();
        }
        if self.enc_attn && idx < 4 {
            return format!("encoder.attn_{}", ["wq", "wk", "wv"][idx - 1]);
        }
        let base = self.layers_base();
        if idx < self.head_base() {
            let l = (idx - base) / LAYER_TENSORS;
            let t = (idx - base) % LAYER_TENSORS;
            return format!("layer{l}.{}", LAYER_NAMES[t]);
        }
        format!("head.{}", ["w1", "b1", "w2", "b2"][idx - self.head_base()])
    }
}

/// Tape handles for the encoder parameters.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub table: Var,
    pub attn: Option<[Var; 3]>,
}

/// Tape handles for the head MLP.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// All parameters of the model bound onto a tape.
pub struct BoundParams {
    pub encoder: EncoderVars,
    pub layers: Vec<LayerVars>,
    pub head: HeadVars,
    pub vars: Vec<Var>,
}

/// Map a flat var slice (in layout order) onto the structured views.
fn structure_vars(vars: &[Var], layout: Layout) -> BoundParams {
    let encoder = EncoderVars {
        table: vars[0],
        attn: layout.enc_attn.then(|| [vars[1], vars[2], vars[3]]),
    };
    let base = layout.layers_base();
    let layers = (0..layout.n_layers)
        .map(|l| {
            let o = base + l * LAYER_TENSORS;
            LayerVars {
                norm1: vars[o],
                w_q: vars[o + 1],
                w_k: vars[o + 2],
                w_v: vars[o + 3],
                w_o: vars[o + 4],
                gate_wq: vars[o + 5],
                gate_wk: vars[o + 6],
                gate_wv: vars[o + 7],
                gate_w1: vars[o + 8],
                gate_b1: vars[o + 9],
                gate_w2: vars[o + 10],
                gate_b2: vars[o + 11],
                norm2: vars[o + 12],
                ffn_w1: vars[o + 13],
                ffn_b1: vars[o + 14],
                ffn_w2: vars[o + 15],
                ffn_b2: vars[o + 16],
            }
        })
        .collect();
    let hb = layout.head_base();
    let head = HeadVars { w1: vars[hb], b1: vars[hb + 1], w2: vars[hb + 2], b2: vars[hb + 3] };
    BoundParams { encoder, layers, head, vars: vars.to_vec() }
}

// ── Model parameters ────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub dgsa: DgsaConfig,
    pub encoder_spec: EncoderSpec,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn init(
        dgsa: DgsaConfig,
        encoder_spec: EncoderSpec,
        vocab: &Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        dgsa.validate()?;
        if encoder_spec.d_model != dgsa.d_model {
            return Err(Error::Contract(format!(
                "encoder d_model {} vs dgsa d_model {}",
                encoder_spec.d_model, dgsa.d_model
            )));
        }
        let d = dgsa.d_model;
        let gh = gate_hidden_dim(d);
        let hh = head_hidden_dim(d);
        let mut rng = Rng::from_seed(seed);
        let mut tensors = Vec::new();

        tensors.push(init_table(&encoder_spec, vocab, seed));
        if let Some(attn) = init_attention(&encoder_spec, seed) {
            tensors.extend(attn);
        }

        let xavier = |rows: usize, cols: usize, rng: &mut Rng| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::from_fn(rows, cols, |_, _| rng.range_f64(-a, a))
        };
        for _ in 0..dgsa.n_layers {
            tensors.push(Tensor::filled(vec![1, d], 1.0)); // norm1
            tensors.push(xavier(d, d, &mut rng)); // w_q
            tensors.push(xavier(d, d, &mut rng)); // w_k
            tensors.push(xavier(d, d, &mut rng)); // w_v
            tensors.push(Tensor::zeros(vec![d, d])); // w_o: residual starts as identity
            tensors.push(xavier(d, d, &mut rng)); // gate_wq
            tensors.push(xavier(d, d, &mut rng)); // gate_wk
            tensors.push(xavier(d, d, &mut rng)); // gate_wv
            tensors.push(xavier(d, gh, &mut rng)); // gate_w1
            tensors.push(Tensor::zeros(vec![1, gh])); // gate_b1
            tensors.push(Tensor::zeros(vec![gh, 3])); // gate_w2: gate starts uniform
            tensors.push(Tensor::zeros(vec![1, 3])); // gate_b2
            tensors.push(Tensor::filled(vec![1, d], 1.0)); // norm2
            tensors.push(xavier(d, FFN_EXPANSION * d, &mut rng)); // ffn_w1
            tensors.push(Tensor::zeros(vec![1, FFN_EXPANSION * d])); // ffn_b1
            tensors.push(Tensor::zeros(vec![FFN_EXPANSION * d, d])); // ffn_w2
            tensors.push(Tensor::zeros(vec![1, d])); // ffn_b2
        }

        tensors.push(xavier(2 * d, hh, &mut rng)); // head.w1
        tensors.push(Tensor::zeros(vec![1, hh])); // head.b1
        tensors.push(xavier(hh, 1, &mut rng)); // head.w2
        tensors.push(Tensor::zeros(vec![1, 1])); // head.b2

        let p = ModelParams { dgsa, encoder_spec, tensors };
        debug_assert_eq!(p.tensors.len(), p.layout().total());
        Ok(p)
    }

    fn layout(&self) -> Layout {
        Layout {
            enc_attn: self.encoder_spec.kind == EncoderKind::TrainableSmall,
            n_layers: self.dgsa.n_layers,
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Which flat indices the optimizer may move. Encoder parameters are
    /// frozen unless the encoder is trainable and explicitly unfrozen.
    pub fn trainable_mask(&self, unfreeze_encoder: bool) -> Vec<bool> {
        let layout = self.layout();
        let enc_count = layout.layers_base();
        let enc_trainable =
            self.encoder_spec.kind == EncoderKind::TrainableSmall && unfreeze_encoder;
        (0..layout.total()).map(|i| i >= enc_count || enc_trainable).collect()
    }

    /// Insert every parameter as a tape leaf (in layout order) and
    /// return the structured handles.
    pub fn bind(&self, tape: &mut Tape, unfreeze_encoder: bool) -> BoundParams {
        let mask = self.trainable_mask(unfreeze_encoder);
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .zip(&mask)
            .map(|(t, &train)| {
                let mut t = t.clone();
                t.requires_grad = train;
                tape.leaf(t)
            })
            .collect();
        structure_vars(&vars, self.layout())
    }

    /// Structured views over externally created vars (used by gradient
    /// checking, where the caller owns the leaves).
    pub fn structure(&self, vars: &[Var]) -> BoundParams {
        structure_vars(vars, self.layout())
    }

    pub fn encoder_view(&self) -> EncoderView<'_> {
        let layout = self.layout();
        EncoderView {
            spec: &self.encoder_spec,
            table: &self.tensors[0],
            attn: layout.enc_attn.then(|| [&self.tensors[1], &self.tensors[2], &self.tensors[3]]),
        }
    }

    fn expected_shapes(&self) -> Vec<Vec<usize>> {
        // Reconstruct the layout shapes from the configs; used to verify
        // checkpoints before accepting them.
        let d = self.dgsa.d_model;
        let gh = gate_hidden_dim(d);
        let hh = head_hidden_dim(d);
        let mut shapes: Vec<Vec<usize>> = Vec::new();
        shapes.push(self.tensors[0].shape().to_vec()); // table: rows = vocab
        if self.layout().enc_attn {
            for _ in 0..3 {
                shapes.push(vec![d, d]);
            }
        }
        for _ in 0..self.dgsa.n_layers {
            shapes.push(vec![1, d]);
            for _ in 0..4 {
                shapes.push(vec![d, d]);
            }
            for _ in 0..3 {
                shapes.push(vec![d, d]);
            }
            shapes.push(vec![d, gh]);
            shapes.push(vec![1, gh]);
            shapes.push(vec![gh, 3]);
            shapes.push(vec![1, 3]);
            shapes.push(vec![1, d]);
            shapes.push(vec![d, FFN_EXPANSION * d]);
            shapes.push(vec![1, FFN_EXPANSION * d]);
            shapes.push(vec![FFN_EXPANSION * d, d]);
            shapes.push(vec![1, d]);
        }
        shapes.push(vec![2 * d, hh]);
        shapes.push(vec![1, hh]);
        shapes.push(vec![hh, 1]);
        shapes.push(vec![1, 1]);
        shapes
    }
}

// ── Forward ─────────────────────────────────────────────────────────

/// Mean over the architecture rows of the final matrix; the platform
/// row (last) is excluded.
pub fn readout(tape: &mut Tape, f_final: Var, n_arch: usize) -> Result<Var> {
    if n_arch == 0 {
        return Err(Error::Contract("readout: no architecture rows".into()));
    }
    let arch = tape.slice_rows(f_final, 0, n_arch)?;
    tape.mean_rows(arch)
}

/// Everything the per-sample forward pass needs besides parameters.
pub struct SampleInput {
    pub embedding: Tensor,
    pub masks: BranchMasks,
    pub n_arch: usize,
}

impl SampleInput {
    pub fn prepare(embedder: &Embedder<'_>, g: &ArchGraph, p: &PlatformRecord) -> Result<Self> {
        let embedding = embedder.embed_graph(g, p)?;
        let masks = BranchMasks::from_masks(&derive_masks(g));
        Ok(SampleInput { embedding, masks, n_arch: g.node_count() })
    }
}

/// Head output (log-latency or raw accuracy score) for an embedding
/// already on the tape. The raw platform embedding row of `f` is what
/// gets concatenated to the readout, not the transformed one.
pub fn forward_from_embedding(
    tape: &mut Tape,
    f: Var,
    input_rows: usize,
    masks: &BranchMasks,
    bound: &BoundParams,
    cfg: &DgsaConfig,
) -> Result<Var> {
    let n_arch = input_rows - 1;
    let f_plat_raw = tape.slice_rows(f, n_arch, 1)?;
    let x = encoder_stack(tape, f, masks, &bound.layers, cfg)?;
    let r = readout(tape, x, n_arch)?;
    let cat = tape.concat_cols(&[r, f_plat_raw])?;
    let h = tape.matmul(cat, bound.head.w1)?;
    let h = tape.add_row_bias(h, bound.head.b1)?;
    let h = tape.gelu(h);
    let out = tape.matmul(h, bound.head.w2)?;
    tape.add_row_bias(out, bound.head.b2)
}

/// Head output with the embedding built on the tape from the token
/// table (gradients flow into the encoder).
#[allow(clippy::too_many_arguments)]
pub fn forward_with_tape_embedding(
    tape: &mut Tape,
    g: &ArchGraph,
    p: &PlatformRecord,
    tokenizer: &Tokenizer,
    registry: &OpRegistry,
    masks: &BranchMasks,
    bound: &BoundParams,
    spec: &EncoderSpec,
    cfg: &DgsaConfig,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(g.node_count() + 1);
    for node in g.nodes() {
        let t = crate::embed::render_node_template(node, registry)?;
        rows.push(encode_on_tape(tape, &tokenizer.tokenize(&t), &bound.encoder, spec)?);
    }
    let t = crate::embed::render_platform_template(p)?;
    rows.push(encode_on_tape(tape, &tokenizer.tokenize(&t), &bound.encoder, spec)?);
    let f = tape.stack_rows(&rows)?;
    forward_from_embedding(tape, f, g.node_count() + 1, masks, bound, cfg)
}

/// Tape version of `EncoderView::encode`: lookup, optional single-head
/// attention, mean pool. Returns a `1 x d` var.
pub fn encode_on_tape(
    tape: &mut Tape,
    seq: &crate::embed::TokenSequence,
    enc: &EncoderVars,
    spec: &EncoderSpec,
) -> Result<Var> {
    if seq.ids.is_empty() {
        return Err(Error::Contract("encode: empty token sequence".into()));
    }
    let x = tape.gather_rows(enc.table, &seq.ids)?;
    let pooled = match enc.attn {
        None => x,
        Some([wq, wk, wv]) => {
            let q = tape.matmul(x, wq)?;
            let k = tape.matmul(x, wk)?;
            let v = tape.matmul(x, wv)?;
            let scores = tape.matmul_nt(q, k)?;
            let scaled = tape.scale(scores, 1.0 / (spec.d_model as f64).sqrt());
            let probs = tape.softmax_rows(scaled);
            tape.matmul(probs, v)?
        }
    };
    tape.mean_rows(pooled)
}

/// Squared error in log space for latency, raw space for accuracy.
pub fn loss_value(pred: f64, target: &PredictionTarget) -> Result<f64> {
    target.validate()?;
    match target.kind {
        TaskKind::Latency => {
            if !pred.is_finite() || pred <= 0.0 {
                return Err(Error::Contract(format!("latency prediction {pred} not positive")));
            }
            let d = pred.ln() - target.value.ln();
            Ok(d * d)
        }
        TaskKind::Accuracy => {
            let d = pred - target.value;
            Ok(d * d)
        }
    }
}

/// The same loss expressed on the tape over the head output. For
/// latency the head already is log-prediction, so both tasks reduce to
/// a squared difference against a constant.
pub fn loss_on_tape(tape: &mut Tape, head_out: Var, target: &PredictionTarget) -> Result<Var> {
    target.validate()?;
    let t = match target.kind {
        TaskKind::Latency => target.value.ln(),
        TaskKind::Accuracy => target.value,
    };
    let tv = tape.constant(Tensor::scalar(t));
    let diff = tape.sub(head_out, tv)?;
    tape.mul(diff, diff)
}

/// Map the head output to the task's prediction space.
pub fn prediction_from_head(head_out: f64, task: TaskKind) -> f64 {
    match task {
        TaskKind::Latency => head_out.exp(),
        TaskKind::Accuracy => head_out,
    }
}

// ── Model bundle and checkpointing ──────────────────────────────────

/// Parameters plus the tokenizer they were trained with.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    pub tokenizer: Tokenizer,
    pub task: TaskKind,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    task: TaskKind,
    dgsa: DgsaConfig,
    encoder: EncoderSpec,
    vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Model {
    pub fn new(
        dgsa: DgsaConfig,
        encoder_spec: EncoderSpec,
        vocab: Vocabulary,
        task: TaskKind,
        seed: u64,
    ) -> Result<Self> {
        let params = ModelParams::init(dgsa, encoder_spec, &vocab, seed)?;
        let tokenizer = Tokenizer::new(vocab, encoder_spec.max_seq_len);
        Ok(Model { params, tokenizer, task })
    }

    pub fn embedder<'a>(&'a self, registry: &'a OpRegistry) -> Embedder<'a> {
        Embedder {
            tokenizer: &self.tokenizer,
            registry,
            encoder: self.params.encoder_view(),
        }
    }

    /// Value-only forward for one sample.
    pub fn predict(
        &self,
        g: &ArchGraph,
        p: &PlatformRecord,
        registry: &OpRegistry,
    ) -> Result<f64> {
        let input = SampleInput::prepare(&self.embedder(registry), g, p)?;
        self.predict_prepared(&input)
    }

    pub fn predict_prepared(&self, input: &SampleInput) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let rows = input.embedding.rows();
        let f = tape.constant(input.embedding.clone());
        let head =
            forward_from_embedding(&mut tape, f, rows, &input.masks, &bound, &self.params.dgsa)?;
        let out = tape.value(head).scalar_value()?;
        if !out.is_finite() {
            return Err(Error::Contract(format!("non-finite head output {out}")));
        }
        Ok(prediction_from_head(out, self.task))
    }

    /// Atomic checkpoint write (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let layout_names: Vec<String> = {
            let layout = self.params.layout();
            (0..layout.total()).map(|i| layout.name(i)).collect()
        };
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            task: self.task,
            dgsa: self.params.dgsa,
            encoder: self.params.encoder_spec,
            vocab: self.tokenizer.vocab.words().to_vec(),
            tensors: self
                .params
                .tensors
                .iter()
                .zip(layout_names)
                .map(|(t, name)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&file)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: CheckpointFile = serde_json::from_str(&raw)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.format_version
            )));
        }
        let vocab = Vocabulary::from_words(file.vocab)?;
        let mut params = ModelParams::init(file.dgsa, file.encoder, &vocab, 0)?;
        let expected = params.expected_shapes();
        if file.tensors.len() != expected.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, config implies {}",
                file.tensors.len(),
                expected.len()
            )));
        }
        let layout = params.layout();
        for (i, (nt, want_shape)) in file.tensors.iter().zip(&expected).enumerate() {
            if nt.name != layout.name(i) {
                return Err(Error::Format(format!(
                    "tensor {i} named {:?}, expected {:?}",
                    nt.name,
                    layout.name(i)
                )));
            }
            if &nt.shape != want_shape {
                return Err(Error::Format(format!(
                    "tensor {:?} shape {:?}, config implies {:?}",
                    nt.name, nt.shape, want_shape
                )));
            }
            params.tensors[i] = Tensor::from_vec(nt.shape.clone(), nt.data.clone())
                .map_err(|e| Error::Integrity(format!("tensor {:?}: {e}", nt.name)))?;
        }
        Ok(Model {
            params,
            tokenizer: Tokenizer::new(vocab, file.encoder.max_seq_len),
            task: file.task,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgsa::{GateMode, MaskMode};
    use crate::embed::Precision;
    use crate::graph::{NodeRecord, OpCategory};

    fn test_platform() -> PlatformRecord {
        PlatformRecord {
            platform_id: "t4".into(),
            vendor: "Nv".into(),
            device_class: "GPU".into(),
            precision: Precision::Fp32,
            throughput_tflops: 8.1,
            microarch: "Turing".into(),
            tdp_watts: 70.0,
        }
    }

    fn chain_graph(registry: &OpRegistry, n_convs: usize) -> ArchGraph {
        let mut nodes = vec![];
        let mut edges = vec![];
        for i in 0..n_convs {
            nodes.push(NodeRecord {
                id: i,
                category: OpCategory::ParamL,
                op_name: "Conv".into(),
                attrs: vec![3],
            });
            if i > 0 {
                edges.push((i - 1, i));
            }
        }
        ArchGraph::new(nodes, edges, registry).unwrap()
    }

    fn vocab_for(registry: &OpRegistry, graphs: &[&ArchGraph], ps: &[&PlatformRecord]) -> Vocabulary {
        let mut corpus = Vec::new();
        for g in graphs {
            for node in g.nodes() {
                corpus.push(crate::embed::render_node_template(node, registry).unwrap());
            }
        }
        for p in ps {
            corpus.push(crate::embed::render_platform_template(p).unwrap());
        }
        Vocabulary::build(&corpus)
    }

    fn small_model(registry: &OpRegistry, kind: EncoderKind) -> Model {
        let dgsa = DgsaConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            gate_mode: GateMode::Dynamic,
            mask_mode: MaskMode::Hadamard,
            gate_scaling: false,
        };
        let spec = EncoderSpec::new(kind, 16);
        let g = chain_graph(registry, 5);
        let p = test_platform();
        let vocab = vocab_for(registry, &[&g], &[&p]);
        Model::new(dgsa, spec, vocab, TaskKind::Latency, 42).unwrap()
    }

    #[test]
    fn readout_of_single_row_is_that_row() {
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0]).unwrap());
        let r = readout(&mut tape, f, 1).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn readout_matches_explicit_mean_oracle() {
        let mut rng = Rng::from_seed(91);
        let fv = Tensor::from_fn(5, 4, |_, _| rng.range_f64(-1.0, 1.0));
        let mut tape = Tape::new();
        let f = tape.leaf(fv.clone());
        let r = readout(&mut tape, f, 4).unwrap();
        for j in 0..4 {
            let want = (0..4).map(|i| fv.at(i, j)).sum::<f64>() / 4.0;
            assert!((tape.value(r).at(0, j) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn readout_identical_rows_equals_any_row() {
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::from_fn(4, 3, |i, j| if i < 3 { j as f64 } else { 99.0 }));
        let r = readout(&mut tape, f, 3).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn readout_rejects_empty() {
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::zeros(vec![1, 3]));
        assert!(readout(&mut tape, f, 0).is_err());
    }

    #[test]
    fn target_validation() {
        assert!(PredictionTarget::latency_ms(1.5).validate().is_ok());
        assert!(PredictionTarget::latency_ms(0.0).validate().is_err());
        assert!(PredictionTarget::accuracy(0.9).validate().is_ok());
        assert!(PredictionTarget::accuracy(1.2).validate().is_err());
    }

    #[test]
    fn loss_zero_when_prediction_equals_target() {
        assert_eq!(loss_value(3.5, &PredictionTarget::latency_ms(3.5)).unwrap(), 0.0);
        assert_eq!(loss_value(0.7, &PredictionTarget::accuracy(0.7)).unwrap(), 0.0);
    }

    #[test]
    fn latency_loss_is_one_at_e_times_target() {
        let t = 2.0;
        let loss = loss_value(std::f64::consts::E * t, &PredictionTarget::latency_ms(t)).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_nonpositive_latency_target() {
        assert!(loss_value(1.0, &PredictionTarget::latency_ms(-2.0)).is_err());
    }

    #[test]
    fn predictions_are_deterministic() {
        let registry = OpRegistry::standard();
        let model = small_model(&registry, EncoderKind::HashDeterministic);
        let g = chain_graph(&registry, 5);
        let p = test_platform();
        let a = model.predict(&g, &p, &registry).unwrap();
        let b = model.predict(&g, &p, &registry).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0, "latency prediction must be positive, got {a}");
    }

    #[test]
    fn zeroed_head_output_layer_predicts_exp_bias() {
        let registry = OpRegistry::standard();
        let mut model = small_model(&registry, EncoderKind::HashDeterministic);
        let n = model.params.tensors.len();
        // Zero head.w2, set head.b2 = 0.3.
        model.params.tensors[n - 2] = Tensor::zeros(vec![head_hidden_dim(16), 1]);
        model.params.tensors[n - 1] = Tensor::scalar(0.3);
        let p = test_platform();
        for size in [2, 4, 5] {
            let g = chain_graph(&registry, size);
            let pred = model.predict(&g, &p, &registry).unwrap();
            assert!((pred - 0.3f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn full_model_gradcheck_on_five_node_graph() {
        // All parameter groups, trainable encoder included so gradients
        // flow through the token table and encoder attention too.
        let registry = OpRegistry::standard();
        let model = small_model(&registry, EncoderKind::TrainableSmall);
        let g = chain_graph(&registry, 5);
        let p = test_platform();
        let masks = BranchMasks::from_masks(&derive_masks(&g));
        let target = PredictionTarget::latency_ms(4.2);

        let params = model.params.tensors().to_vec();
        let err = crate::tensor::gradcheck(
            |tape, vars| {
                let bound = model.params.structure(vars);
                let head = forward_with_tape_embedding(
                    tape,
                    &g,
                    &p,
                    &model.tokenizer,
                    &registry,
                    &masks,
                    &bound,
                    &model.params.encoder_spec,
                    &model.params.dgsa,
                )?;
                loss_on_tape(tape, head, &target)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "full-model gradcheck err {err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let registry = OpRegistry::standard();
        let model = small_model(&registry, EncoderKind::HashDeterministic);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(model.params.tensors(), loaded.params.tensors());
        assert_eq!(model.task, loaded.task);

        let p = test_platform();
        let mut rng = Rng::from_seed(17);
        for _ in 0..10 {
            let g = chain_graph(&registry, 2 + rng.next_usize(6));
            let a = model.predict(&g, &p, &registry).unwrap();
            let b = loaded.predict(&g, &p, &registry).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_version_mismatch_is_a_format_error() {
        let registry = OpRegistry::standard();
        let model = small_model(&registry, EncoderKind::HashDeterministic);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        model.save(&path).unwrap();
        let mut raw = std::fs::read_to_string(&path).unwrap();
        raw = raw.replace("\"format_version\":1", "\"format_version\":9");
        std::fs::write(&path, raw).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn corrupt_checkpoint_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn checkpoint_with_mismatched_shapes_is_a_format_error() {
        let registry = OpRegistry::standard();
        let model = small_model(&registry, EncoderKind::HashDeterministic);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        model.save(&path).unwrap();
        // Claim a different d_model: every shape check must fire.
        let raw = std::fs::read_to_string(&path).unwrap();
        let raw = raw.replace("\"d_model\":16", "\"d_model\":32");
        std::fs::write(&path, raw).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn changing_platform_changes_raw_head_input() {
        let registry = OpRegistry::standard();
        let g = chain_graph(&registry, 4);
        let p1 = test_platform();
        let mut p2 = test_platform();
        p2.platform_id = "p4".into();
        p2.throughput_tflops = 5.5;
        let dgsa = DgsaConfig { d_model: 16, n_heads: 2, n_layers: 1, ..Default::default() };
        let spec = EncoderSpec::new(EncoderKind::HashDeterministic, 16);
        let vocab = vocab_for(&registry, &[&g], &[&p1, &p2]);
        let model = Model::new(dgsa, spec, vocab, TaskKind::Latency, 1).unwrap();
        let emb = model.embedder(&registry);
        let f1 = emb.embed_graph(&g, &p1).unwrap();
        let f2 = emb.embed_graph(&g, &p2).unwrap();
        assert_ne!(f1.row(4), f2.row(4));
    }
}
