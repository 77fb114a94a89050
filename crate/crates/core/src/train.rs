//! Mini-batch training, finetuning, and evaluation.
//!
//! Training is sequential and deterministic: seeded shuffles, fixed
//! batch order, fixed gradient summation order. Evaluation may fan out
//! over threads; per-sample results land in preallocated slots so the
//! metric reduction order never changes.

use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::embed::{EncoderKind, PlatformRecord};
use crate::error::{Error, Result};
use crate::graph::{derive_masks, OpRegistry};
use crate::metrics::MetricsReport;
use crate::model::{
    forward_from_embedding, forward_with_tape_embedding, loss_on_tape, Model, SampleInput,
};
use crate::rng::Rng;
use crate::tensor::{AdamHyper, AdamState, Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hyper: AdamHyper,
    pub seed: u64,
    pub unfreeze_encoder: bool,
    /// Threads for per-epoch evaluation (training itself is sequential).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            hyper: AdamHyper::default(),
            seed: 0,
            unfreeze_encoder: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Finetuning defaults: same loop, lower learning rate.
    pub fn finetune_default() -> Self {
        TrainConfig {
            epochs: 15,
            hyper: AdamHyper { lr: 1e-4, ..AdamHyper::default() },
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_mape: Option<f64>,
    pub eval_acc10: Option<f64>,
    pub eval_tau: Option<f64>,
}

/// CSV with the fixed header `epoch,train_loss,eval_mape,eval_acc10,eval_tau`.
pub fn write_log_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(f, "epoch,train_loss,eval_mape,eval_acc10,eval_tau").map_err(io_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for l in logs {
        writeln!(
            f,
            "{},{},{},{},{}",
            l.epoch,
            l.train_loss,
            opt(l.eval_mape),
            opt(l.eval_acc10),
            opt(l.eval_tau)
        )
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

struct PreparedSample {
    input: SampleInput,
    /// None when the encoder is trainable: the embedding must be built
    /// on the tape so gradients reach the token table.
    cached: bool,
}

fn prepare(model: &Model, ds: &Dataset, registry: &OpRegistry, live_encoder: bool) -> Result<Vec<PreparedSample>> {
    let embedder = model.embedder(registry);
    ds.samples
        .iter()
        .map(|s| {
            let input = if live_encoder {
                // Masks and row count only; embedding rebuilt per step.
                SampleInput {
                    embedding: Tensor::zeros(vec![1, 1]),
                    masks: crate::dgsa::BranchMasks::from_masks(&derive_masks(&s.graph)),
                    n_arch: s.graph.node_count(),
                }
            } else {
                SampleInput::prepare(&embedder, &s.graph, &s.platform)?
            };
            Ok(PreparedSample { input, cached: !live_encoder })
        })
        .collect()
}

/// Mini-batch Adam over shuffled epochs. Returns the per-epoch log;
/// the model's parameters are updated in place.
pub fn train(
    model: &mut Model,
    train_ds: &Dataset,
    eval_ds: Option<&Dataset>,
    registry: &OpRegistry,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    if train_ds.is_empty() {
        return Err(Error::Contract("train: empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Contract("train: batch_size must be positive".into()));
    }
    for s in &train_ds.samples {
        if s.target.kind != model.task {
            return Err(Error::Contract(format!(
                "sample {} targets {:?}, model trains {:?}",
                s.name, s.target.kind, model.task
            )));
        }
        s.target.validate()?;
    }
    let live_encoder = cfg.unfreeze_encoder
        && model.params.encoder_spec.kind == EncoderKind::TrainableSmall;
    let prepared = prepare(model, train_ds, registry, live_encoder)?;

    let mut adam = AdamState::new(model.params.tensors(), cfg.hyper);
    let trainable = model.params.trainable_mask(cfg.unfreeze_encoder);
    let mut rng = Rng::from_seed(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..train_ds.len()).collect();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut indices);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            // One tape per batch: parameters bound once, per-sample
            // losses summed, one backward sweep.
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, cfg.unfreeze_encoder);
            let mut batch_loss: Option<crate::tensor::Var> = None;
            for &i in chunk {
                let sample = &train_ds.samples[i];
                let prep = &prepared[i];
                let head = if prep.cached {
                    let rows = prep.input.embedding.rows();
                    let f = tape.constant(prep.input.embedding.clone());
                    forward_from_embedding(&mut tape, f, rows, &prep.input.masks, &bound, &model.params.dgsa)?
                } else {
                    forward_with_tape_embedding(
                        &mut tape,
                        &sample.graph,
                        &sample.platform,
                        &model.tokenizer,
                        registry,
                        &prep.input.masks,
                        &bound,
                        &model.params.encoder_spec,
                        &model.params.dgsa,
                    )?
                };
                let loss = loss_on_tape(&mut tape, head, &sample.target)?;
                let loss_val = tape.value(loss).scalar_value()?;
                if !loss_val.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {loss_val} at epoch {epoch} (sample {})",
                        sample.name
                    )));
                }
                epoch_loss += loss_val;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let total = batch_loss.expect("non-empty chunk");
            let mean_loss = tape.scale(total, 1.0 / chunk.len() as f64);
            let grads = tape.backward(mean_loss)?;
            let grad_vec: Vec<Tensor> = bound
                .vars
                .iter()
                .zip(model.params.tensors())
                .zip(&trainable)
                .map(|((&v, t), &train)| {
                    if train {
                        grads.wrt_or_zeros(v, t.shape())
                    } else {
                        Tensor::zeros(t.shape().to_vec())
                    }
                })
                .collect();
            adam.step(model.params.tensors_mut(), &grad_vec)?;
        }
        let train_loss = epoch_loss / train_ds.len() as f64;
        let (eval_mape, eval_acc10, eval_tau) = match eval_ds {
            Some(eval) => {
                let rep = evaluate(model, eval, registry, cfg.threads, None)?;
                (Some(rep.mape_pct), Some(rep.acc_at_10_pct), Some(rep.kendall_tau))
            }
            None => (None, None, None),
        };
        logs.push(EpochLog { epoch, train_loss, eval_mape, eval_acc10, eval_tau });
    }
    Ok(logs)
}

/// Identical loop to `train`, starting from the given (checkpoint)
/// parameters. Callers pick the lower finetune learning rate via
/// `TrainConfig::finetune_default`.
pub fn finetune(
    model: &mut Model,
    finetune_ds: &Dataset,
    eval_ds: Option<&Dataset>,
    registry: &OpRegistry,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    train(model, finetune_ds, eval_ds, registry, cfg)
}

/// Evaluate a model on a dataset. `platform_override` replaces every
/// sample's platform description on the input side only (targets stay),
/// which is the hardware-awareness ablation used for zero-shot tests.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    registry: &OpRegistry,
    threads: usize,
    platform_override: Option<&PlatformRecord>,
) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::Contract("evaluate: empty dataset".into()));
    }
    let n = ds.len();
    let mut preds = vec![0.0f64; n];
    let predict_one = |sample: &crate::data::Sample| -> Result<f64> {
        let platform = platform_override.unwrap_or(&sample.platform);
        let input = SampleInput::prepare(&model.embedder(registry), &sample.graph, platform)?;
        model.predict_prepared(&input)
    };
    if threads <= 1 {
        for (slot, sample) in preds.iter_mut().zip(&ds.samples) {
            *slot = predict_one(sample)?;
        }
    } else {
        let chunk = n.div_ceil(threads);
        let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = ds
                .samples
                .chunks(chunk)
                .map(|samples| scope.spawn(move || samples.iter().map(predict_one).collect()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
        });
        let mut cursor = 0;
        for r in results {
            for p in r? {
                preds[cursor] = p;
                cursor += 1;
            }
        }
    }
    let targets: Vec<f64> = ds.samples.iter().map(|s| s.target.value).collect();
    let families: Vec<String> = ds.samples.iter().map(|s| s.family.clone()).collect();
    crate::metrics::report(&preds, &targets, &families)
}
