//! Training, evaluation, and the ablation suite.

mod config;
mod metrics;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{TrainConfig, LR_GRID, WEIGHT_DECAY_GRID};
pub use metrics::{accuracy, auc, CourseMetrics, EvalReport, Metric};

use crate::data::{truncate, Course, Dataset, DatasetSplit, Step};
use crate::graph::ConceptGraph;
use crate::model::{BatchRows, DropoutStreams, TransKt};
use crate::negatives::{hybrid_sample_steps, DifficultyTable, SampleStats};
use crate::numcore::{AdamW, Checkpoint, Csr, RngState, Tape, Tensor, Var};
use crate::rng::{self, tag};
use crate::semantics::{random_features, FeatureMatrix};
use crate::{Error, Result};

/// Everything `train` needs besides the config.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub split: &'a DatasetSplit,
    pub graph: &'a ConceptGraph,
    pub features: &'a FeatureMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    /// Unweighted prediction and contrastive parts of `train_loss`.
    pub pred_loss: f64,
    pub cl_loss: f64,
    pub val: EvalReport,
    pub improved: bool,
}

impl EpochLog {
    /// One `key=value` line.
    pub fn line(&self) -> String {
        let m = self.val.mean_auc().map_or("undefined".into(), |v| format!("{v:.6}"));
        format!(
            "epoch={} steps={} train_loss={:.6} pred_loss={:.6} cl_loss={:.6} val_auc={} \
val_auc_x={} val_auc_y={} val_acc_x={} val_acc_y={} improved={}",
            self.epoch,
            self.steps,
            self.train_loss,
            self.pred_loss,
            self.cl_loss,
            m,
            self.val.x.auc,
            self.val.y.auc,
            self.val.x.acc,
            self.val.y.acc,
            self.improved
        )
    }
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: TransKt,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub epochs: Vec<EpochLog>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub negative_stats: SampleStats,
    pub checkpoint: Checkpoint,
}

/// Loss, per-parameter gradients (in store order), and sampler counts for
/// one batch.
pub struct BatchResult {
    pub loss: f64,
    pub pred_loss: f64,
    pub cl_loss: f64,
    pub grads: Option<Vec<Tensor>>,
    pub negatives: SampleStats,
}

/// Picks the feature matrix a configuration asks for and orders it by the
/// graph's nodes.
pub fn select_features(
    config: &TrainConfig,
    keys: &[String],
    summary: &FeatureMatrix,
    original: Option<&FeatureMatrix>,
) -> Result<FeatureMatrix> {
    let chosen = if config.no_se {
        return random_features(keys, config.dim, config.seed);
    } else if config.no_llm {
        original.ok_or_else(|| {
            Error::Config("no_llm needs features of the original texts".into())
        })?
    } else {
        summary
    };
    if chosen.dim() != config.dim {
        return Err(Error::Config(format!(
            "features have dimension {}, config dim is {}",
            chosen.dim(),
            config.dim
        )));
    }
    chosen.aligned(keys)
}

fn truncated(steps: &[Step], max_len: usize) -> Vec<Step> {
    steps[steps.len().saturating_sub(max_len)..].to_vec()
}

/// Prepared training state shared by every step.
pub struct Trainer<'a> {
    pub config: &'a TrainConfig,
    pub adj: Arc<Csr>,
    pub features: Tensor,
    pub table: DifficultyTable,
    /// Training learners in id order, sequences truncated.
    pub sequences: Vec<Vec<Step>>,
    split: &'a DatasetSplit,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, data: TrainData<'a>) -> Result<Self> {
        config.validate()?;
        let keys = data.split.train.node_keys();
        if data.graph.node_keys != keys {
            return Err(Error::Validation(
                "graph nodes do not match the dataset's questions and concepts".into(),
            ));
        }
        let features = data.features.aligned(&keys)?;
        if features.dim() != config.dim {
            return Err(Error::Config(format!(
                "features have dimension {}, config dim is {}",
                features.dim(),
                config.dim
            )));
        }
        let sequences: Vec<Vec<Step>> = data
            .split
            .train
            .learners
            .values()
            .map(|t| truncated(&t.merged, config.max_seq_len))
            .filter(|s| !s.is_empty())
            .collect();
        if sequences.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            config,
            adj: data.graph.adjacency(),
            features: features.values,
            table: DifficultyTable::build(&data.split.train),
            sequences,
            split: data.split,
        })
    }

    /// Forward pass over a batch of training learners (indices into
    /// `sequences`), optionally followed by backward. `step` selects the
    /// random streams for negatives and dropout.
    pub fn run_batch(&self, model: &TransKt, batch: &[usize], step: u64, grads: bool) -> Result<BatchResult> {
        let cfg = self.config;
        let seed = cfg.seed;
        let training = cfg.dropout > 0.0;
        let lambda = cfg.effective_lambda();

        let mut negatives = Vec::with_capacity(batch.len());
        let mut stats = SampleStats::default();
        for &i in batch {
            if cfg.no_cl {
                negatives.push(None);
                continue;
            }
            let mut r = rng::stream(seed, &[tag::NEGATIVES, step, i as u64]);
            let sample = hybrid_sample_steps(&self.sequences[i], &self.table, &cfg.negative_config(), &mut r);
            stats.merge(&sample.stats());
            negatives.push(Some(sample.steps()));
        }

        // Stage 0: graph propagation over every node.
        let mut stage0 = Tape::new();
        let x = stage0.constant(self.features.clone());
        let gcn = model.bind_gcn(&mut stage0);
        let mut gcn_rng = rng::stream(seed, &[tag::DROPOUT_GCN, step]);
        let enhanced = model.enhance(&mut stage0, &self.adj, x, &gcn, &mut gcn_rng, training)?;

        // Stage 1: the batch's sequences over the rows they touch.
        let mut seqs: Vec<&[Step]> = batch.iter().map(|&i| self.sequences[i].as_slice()).collect();
        seqs.extend(negatives.iter().flatten().map(Vec::as_slice));
        let rows = BatchRows::new(&seqs);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let e_batch = tape.variable(rows.gather(stage0.value(enhanced))?);

        let mut outputs = Vec::with_capacity(batch.len());
        for (k, &i) in batch.iter().enumerate() {
            let mut streams = DropoutStreams::derive(seed, step, i as u64);
            let out = model.learner_forward(
                &mut tape,
                &bound,
                e_batch,
                &rows,
                &self.sequences[i],
                negatives[k].as_deref(),
                training.then_some(&mut streams),
            )?;
            outputs.push(out);
        }

        // Per learner the objective is λ·Σ_t bce + (1 − λ)·cl for each
        // course. Both sums are divided by the course's valid positions in
        // the batch, so the prediction part is a per-position mean and the
        // two parts keep their per-learner ratio.
        let mut positions = [0usize; 2];
        for out in &outputs {
            for (ci, c) in out.courses.iter().enumerate() {
                if let Some(c) = c {
                    positions[ci] += c.positions.len();
                }
            }
        }

        let mut parts = [0.0f64; 2];
        let mut loss: Option<Var> = None;
        let mut add = |tape: &mut Tape, term: Var| -> Result<()> {
            loss = Some(match loss {
                None => term,
                Some(l) => tape.add(l, term)?,
            });
            Ok(())
        };
        for out in &outputs {
            for (ci, c) in out.courses.iter().enumerate() {
                let Some(c) = c else { continue };
                let bce = tape.bce_with_logits(c.logits, &c.labels)?;
                parts[0] += tape.value(bce).item() / positions[ci] as f64;
                let term = tape.scale(bce, lambda / positions[ci] as f64)?;
                add(&mut tape, term)?;
                if let Some(cl) = c.contrastive {
                    parts[1] += tape.value(cl).item() / positions[ci] as f64;
                    let term = tape.scale(cl, (1.0 - lambda) / positions[ci] as f64)?;
                    add(&mut tape, term)?;
                }
            }
        }
        let loss = loss.ok_or(Error::NoValidPositions("batch"))?;
        let loss_value = tape.value(loss).item();

        if !grads {
            return Ok(BatchResult {
                loss: loss_value,
                pred_loss: parts[0],
                cl_loss: parts[1],
                grads: None,
                negatives: stats,
            });
        }

        let mut g = tape.backward(loss)?;
        let mut out: Vec<Tensor> = model
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        for &(id, var) in &bound.vars {
            if let Some(t) = g.take(var) {
                out[id.index()] = t;
            }
        }
        if let (Some(de_batch), false) = (g.take(e_batch), gcn.is_empty()) {
            let (n, d) = self.features.shape();
            let mut de = Tensor::zeros(n, d);
            for (k, &q) in rows.questions.iter().enumerate() {
                for (dst, src) in de.row_mut(q).iter_mut().zip(de_batch.row(k)) {
                    *dst += src;
                }
            }
            let mut g0 = stage0.backward_with_seed(enhanced, de)?;
            for (&(wid, bid), &(wv, bv)) in model.gcn_param_ids().iter().zip(&gcn) {
                if let Some(t) = g0.take(wv) {
                    out[wid.index()] = t;
                }
                if let Some(t) = g0.take(bv) {
                    out[bid.index()] = t;
                }
            }
        }
        Ok(BatchResult {
            loss: loss_value,
            pred_loss: parts[0],
            cl_loss: parts[1],
            grads: Some(out),
            negatives: stats,
        })
    }

    fn workers(&self) -> usize {
        if self.config.deterministic {
            1
        } else {
            std::thread::available_parallelism().map_or(1, usize::from)
        }
    }

    pub fn evaluate(&self, model: &TransKt, dataset: &Dataset) -> Result<EvalReport> {
        evaluate_model(
            model,
            &self.adj,
            &self.features,
            dataset,
            self.config.max_seq_len,
            self.workers(),
        )
    }

    /// Runs the full training loop with early stopping on the mean
    /// validation AUC.
    pub fn train(&self) -> Result<TrainOutcome> {
        let cfg = self.config;
        let mut model = TransKt::new(cfg.model_config(), cfg.seed)?;
        let mut opt = AdamW::new(cfg.optimizer_config(), &model.params);
        let mut step: u64 = 0;
        let mut step_losses = Vec::new();
        let mut epochs = Vec::new();
        let mut neg_stats = SampleStats::default();
        let mut best: Option<(f64, usize, TransKt, EvalReport)> = None;
        let mut since_best = 0usize;
        let started = Instant::now();

        for epoch in 0..cfg.max_epochs {
            let mut order: Vec<usize> = (0..self.sequences.len()).collect();
            order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
            let mut epoch_loss = [0.0f64; 3];
            let mut batches = 0usize;
            for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
                let result = self
                    .run_batch(&model, batch, step, true)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::Diverged {
                            epoch,
                            batch: b,
                            loss: f64::NAN,
                        },
                        other => other,
                    })?;
                if !result.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: result.loss,
                    });
                }
                model.params.clear_grads();
                for (id, g) in model.params.ids().collect::<Vec<_>>().into_iter().zip(result.grads.expect("requested")) {
                    model.params.accumulate_grad(id, &g)?;
                }
                opt.step(&mut model.params)?;
                step += 1;
                step_losses.push(result.loss);
                neg_stats.merge(&result.negatives);
                epoch_loss[0] += result.loss;
                epoch_loss[1] += result.pred_loss;
                epoch_loss[2] += result.cl_loss;
                batches += 1;
            }

            let mut val = self.evaluate(&model, &self.split.val)?;
            val.epoch = epoch;
            val.wall_clock_ms = (!cfg.deterministic).then(|| started.elapsed().as_millis() as u64);
            let metric = val.mean_auc().unwrap_or(f64::NEG_INFINITY);
            let improved = best.as_ref().is_none_or(|(m, ..)| metric > *m);
            if improved {
                best = Some((metric, epoch, model.clone(), val.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            let log = EpochLog {
                epoch,
                steps: step,
                train_loss: epoch_loss[0] / batches.max(1) as f64,
                pred_loss: epoch_loss[1] / batches.max(1) as f64,
                cl_loss: epoch_loss[2] / batches.max(1) as f64,
                val,
                improved,
            };
            log::info!("{}", log.line());
            epochs.push(log);
            if since_best >= cfg.patience {
                break;
            }
        }

        let (_, best_epoch, best_model, best_val) = best.expect("at least one epoch");
        let mut meta = cfg.to_meta();
        meta.insert("best_epoch".into(), best_epoch.to_string());
        let checkpoint = best_model.to_checkpoint(meta, RngState { seed: cfg.seed, step });
        Ok(TrainOutcome {
            model: best_model,
            best_epoch,
            best_val,
            epochs,
            step_losses,
            negative_stats: neg_stats,
            checkpoint,
        })
    }
}

/// Trains on `data.split.train`, selecting on `data.split.val`.
pub fn train(config: &TrainConfig, data: TrainData<'_>) -> Result<TrainOutcome> {
    Trainer::new(config, data)?.train()
}

/// Scores every position of every learner (sequences truncated to the most
/// recent `max_seq_len` interactions) with dropout off.
pub fn evaluate_model(
    model: &TransKt,
    adj: &Arc<Csr>,
    features: &Tensor,
    dataset: &Dataset,
    max_seq_len: usize,
    workers: usize,
) -> Result<EvalReport> {
    let enhanced = model.enhanced_features(adj, features)?;
    let seqs: Vec<Vec<Step>> = dataset
        .learners
        .values()
        .map(|t| truncate(t, max_seq_len).merged)
        .collect();
    let preds = crate::par::try_map(&seqs, workers, |s| model.predict_sequence(&enhanced, s))?;
    let mut scores: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut labels: [Vec<u8>; 2] = [Vec::new(), Vec::new()];
    for (course, p, y) in preds.into_iter().flatten() {
        scores[course.index()].push(p);
        labels[course.index()].push(y);
    }
    Ok(EvalReport {
        x: CourseMetrics::from_predictions(&scores[0], &labels[0])?,
        y: CourseMetrics::from_predictions(&scores[1], &labels[1])?,
        epoch: 0,
        wall_clock_ms: None,
    })
}

/// Evaluates a checkpoint on one split, optionally overriding eta.
pub fn evaluate(
    checkpoint: &Checkpoint,
    graph: &ConceptGraph,
    features: &FeatureMatrix,
    dataset: &Dataset,
    eta: Option<f64>,
) -> Result<EvalReport> {
    let mut model = TransKt::from_checkpoint(checkpoint)?;
    if let Some(e) = eta {
        crate::model::ops::check_unit_interval("eta", e)?;
        model.config.eta = e;
    }
    let max_seq_len = checkpoint
        .meta
        .get("config.max_seq_len")
        .and_then(|v| v.parse().ok())
        .unwrap_or(usize::MAX);
    let keys = dataset.node_keys();
    if graph.node_keys != keys {
        return Err(Error::Validation(
            "graph nodes do not match the dataset's questions and concepts".into(),
        ));
    }
    let features = features.aligned(&keys)?;
    let mut report = evaluate_model(&model, &graph.adjacency(), &features.values, dataset, max_seq_len, 1)?;
    report.epoch = checkpoint
        .meta
        .get("best_epoch")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    Ok(report)
}

pub const ABLATION_VARIANTS: [&str; 5] = ["full", "no_kp", "no_se", "no_llm", "no_cl"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub best_epoch: usize,
    pub val: EvalReport,
    pub test: EvalReport,
}

pub fn variant_config(base: &TrainConfig, variant: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig {
        no_kp: false,
        no_se: false,
        no_llm: false,
        no_cl: false,
        ..base.clone()
    };
    match variant {
        "full" => {}
        "no_kp" => c.no_kp = true,
        "no_se" => c.no_se = true,
        "no_llm" => c.no_llm = true,
        "no_cl" => c.no_cl = true,
        other => return Err(Error::Config(format!("unknown ablation variant `{other}`"))),
    }
    Ok(c)
}

/// Trains and tests every variant with the base config's seed.
pub fn run_ablation_suite(
    config: &TrainConfig,
    split: &DatasetSplit,
    graph: &ConceptGraph,
    summary_features: &FeatureMatrix,
    original_features: Option<&FeatureMatrix>,
) -> Result<Vec<AblationRow>> {
    let keys = split.train.node_keys();
    let mut rows = Vec::new();
    for variant in ABLATION_VARIANTS {
        if variant == "no_llm" && original_features.is_none() {
            log::warn!("skipping no_llm: no features of original texts");
            continue;
        }
        let cfg = variant_config(config, variant)?;
        let features = select_features(&cfg, &keys, summary_features, original_features)?;
        let trainer = Trainer::new(&cfg, TrainData { split, graph, features: &features })?;
        let outcome = trainer.train()?;
        let mut test = trainer.evaluate(&outcome.model, &split.test)?;
        test.epoch = outcome.best_epoch;
        rows.push(AblationRow {
            variant: variant.into(),
            best_epoch: outcome.best_epoch,
            val: outcome.best_val,
            test,
        });
    }
    Ok(rows)
}

/// Plain-text comparison table of test metrics.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant  auc_x   auc_y   acc_x   acc_y   best_epoch\n");
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:<7} {:<7} {:<7} {:<7} {}\n",
            r.variant, r.test.x.auc, r.test.y.auc, r.test.x.acc, r.test.y.acc, r.best_epoch
        ));
    }
    out
}

/// Per-course probabilities and labels of a model on a dataset, pooled in
/// learner order. Useful for paired comparisons.
pub fn predictions(
    model: &TransKt,
    graph: &ConceptGraph,
    features: &Tensor,
    dataset: &Dataset,
    max_seq_len: usize,
) -> Result<BTreeMap<Course, (Vec<f64>, Vec<u8>)>> {
    let enhanced = model.enhanced_features(&graph.adjacency(), features)?;
    let mut out: BTreeMap<Course, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for t in dataset.learners.values() {
        for (c, p, y) in model.predict_sequence(&enhanced, &truncate(t, max_seq_len).merged)? {
            let e = out.entry(c).or_default();
            e.0.push(p);
            e.1.push(y);
        }
    }
    Ok(out)
}
