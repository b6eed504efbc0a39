//! The knowledge-tracing model: graph propagation over question and concept
//! features, attention over three views of each learner's history, a
//! bilinear contrastive discriminator, and per-course prediction heads.

pub mod ops;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;

use crate::data::{Course, Step};
use crate::numcore::{Checkpoint, Csr, ParamId, ParamStore, RngState, Tape, Tensor, Var};
use crate::rng::{self, tag, StreamRng};
use crate::{Error, Result};

pub use ops::{AttentionParams, Projected};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub gcn_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Weight of the cross-course state in the fused state.
    pub eta: f64,
    pub positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            gcn_layers: 2,
            heads: 1,
            dropout: 0.3,
            eta: 0.5,
            positional: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        ops::check_unit_interval("eta", self.eta)
    }

    fn to_meta(self, meta: &mut BTreeMap<String, String>) {
        meta.insert("model.dim".into(), self.dim.to_string());
        meta.insert("model.gcn_layers".into(), self.gcn_layers.to_string());
        meta.insert("model.heads".into(), self.heads.to_string());
        meta.insert("model.dropout".into(), format!("{:?}", self.dropout));
        meta.insert("model.eta".into(), format!("{:?}", self.eta));
        meta.insert("model.positional".into(), self.positional.to_string());
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Validation(format!("checkpoint meta `{key}` missing or invalid")))
        }
        let c = Self {
            dim: get(meta, "model.dim")?,
            gcn_layers: get(meta, "model.gcn_layers")?,
            heads: get(meta, "model.heads")?,
            dropout: get(meta, "model.dropout")?,
            eta: get(meta, "model.eta")?,
            positional: get(meta, "model.positional")?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ParamIds {
    gcn: Vec<(ParamId, ParamId)>,
    response: ParamId,
    query: ParamId,
    key: ParamId,
    value: ParamId,
    disc: [ParamId; 2],
    head_weight: [ParamId; 2],
    head_proj: [ParamId; 2],
}

/// Expected parameter names and shapes for a configuration, in store order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = config.dim;
    let mut v = Vec::new();
    for l in 0..config.gcn_layers {
        v.push((format!("gcn.{l}.weight"), (d, d)));
        v.push((format!("gcn.{l}.bias"), (1, d)));
    }
    v.push(("response_embedding".into(), (2, d)));
    v.push(("attn.query".into(), (d, d)));
    v.push(("attn.key".into(), (d, d)));
    v.push(("attn.value".into(), (d, d)));
    for c in ["x", "y"] {
        v.push((format!("disc.{c}"), (d, d)));
    }
    for c in ["x", "y"] {
        v.push((format!("head.{c}.weight"), (d, 2 * d)));
        v.push((format!("head.{c}.proj"), (1, d)));
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransKt {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: ParamIds,
}

/// Non-graph parameters bound as tape variables.
#[derive(Clone, Debug)]
pub struct Bound {
    pub response: Var,
    pub attention: AttentionParams,
    pub disc: [Var; 2],
    pub head_weight: [Var; 2],
    pub head_proj: [Var; 2],
    /// (param id, var) for every bound parameter, for reading gradients.
    pub vars: Vec<(ParamId, Var)>,
}

/// Dropout streams for one learner in one optimizer step.
pub struct DropoutStreams {
    pub view: [StreamRng; 2],
    pub merged: StreamRng,
    pub negative: StreamRng,
}

impl DropoutStreams {
    pub fn derive(seed: u64, step: u64, learner: u64) -> Self {
        let s = |t| rng::stream(seed, &[t, step, learner]);
        Self {
            view: [s(tag::DROPOUT_VIEW_X), s(tag::DROPOUT_VIEW_Y)],
            merged: s(tag::DROPOUT_MERGED),
            negative: s(tag::DROPOUT_NEGATIVE),
        }
    }
}

/// Enhanced question rows gathered for a batch.
#[derive(Clone, Debug)]
pub struct BatchRows {
    pub questions: Vec<usize>,
    local: HashMap<usize, usize>,
}

impl BatchRows {
    pub fn new(sequences: &[&[Step]]) -> Self {
        let mut questions: Vec<usize> = sequences
            .iter()
            .flat_map(|s| s.iter().map(|st| st.question))
            .collect();
        questions.sort_unstable();
        questions.dedup();
        let local = questions.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        Self { questions, local }
    }

    fn local(&self, steps: &[Step]) -> Vec<usize> {
        steps.iter().map(|s| self.local[&s.question]).collect()
    }

    /// Gathers the batch rows of an enhanced feature matrix.
    pub fn gather(&self, enhanced: &Tensor) -> Result<Tensor> {
        let d = enhanced.cols();
        let mut data = Vec::with_capacity(self.questions.len() * d);
        for &q in &self.questions {
            if q >= enhanced.rows() {
                return Err(Error::Validation(format!("question {q} has no feature row")));
            }
            data.extend_from_slice(enhanced.row(q));
        }
        Tensor::new(self.questions.len(), d, data)
    }
}

/// Per-course outputs of one learner's forward pass.
#[derive(Clone, Debug)]
pub struct CourseOutput {
    /// Merged positions scored for this course.
    pub positions: Vec<usize>,
    pub logits: Var,
    pub labels: Vec<f64>,
    /// Present when a negative sequence was supplied.
    pub contrastive: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct LearnerOutput {
    pub courses: [Option<CourseOutput>; 2],
}

fn causal_mask(courses: &[Course], only: Option<Course>) -> Vec<bool> {
    let n = courses.len();
    let mut mask = vec![false; n * n];
    for i in 0..n {
        if only.is_some_and(|c| courses[i] != c) {
            continue;
        }
        for j in 0..i {
            mask[i * n + j] = only.is_none_or(|c| courses[j] == c);
        }
    }
    mask
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(rows, cols, data).expect("positive shape")
}

impl TransKt {
    /// Xavier-uniform weights and zero biases from the seed's init stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut params = ParamStore::new();
        for (name, (r, c)) in param_layout(&config) {
            let value = if name.ends_with(".bias") {
                Tensor::zeros(r, c)
            } else if name.starts_with("head.") && name.ends_with(".weight") {
                xavier(&mut rng, r, c, c, r)
            } else {
                xavier(&mut rng, r, c, r, c)
            };
            params.add(name, value)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing store after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if params.len() != layout.len() {
            return Err(Error::Validation(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))?;
            let got = params.value(id).shape();
            if got != *shape {
                return Err(Error::Validation(format!(
                    "parameter `{name}` has shape {got:?}, expected {shape:?}"
                )));
            }
        }
        let id = |n: &str| params.find(n).expect("checked above");
        let ids = ParamIds {
            gcn: (0..config.gcn_layers)
                .map(|l| (id(&format!("gcn.{l}.weight")), id(&format!("gcn.{l}.bias"))))
                .collect(),
            response: id("response_embedding"),
            query: id("attn.query"),
            key: id("attn.key"),
            value: id("attn.value"),
            disc: [id("disc.x"), id("disc.y")],
            head_weight: [id("head.x.weight"), id("head.y.weight")],
            head_proj: [id("head.x.proj"), id("head.y.proj")],
        };
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    pub fn gcn_param_ids(&self) -> Vec<(ParamId, ParamId)> {
        self.ids.gcn.clone()
    }

    /// Binds the graph layers as variables on `tape`.
    pub fn bind_gcn(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        self.ids
            .gcn
            .iter()
            .map(|&(w, b)| {
                (
                    tape.variable(self.params.value(w).clone()),
                    tape.variable(self.params.value(b).clone()),
                )
            })
            .collect()
    }

    /// Graph-enhanced features for every node.
    pub fn enhance<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        adj: &Arc<Csr>,
        features: Var,
        gcn: &[(Var, Var)],
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        ops::propagate(tape, adj, features, gcn, self.config.dropout, rng, training)
    }

    /// Evaluation-mode enhanced features as a plain tensor.
    pub fn enhanced_features(&self, adj: &Arc<Csr>, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let gcn: Vec<(Var, Var)> = self
            .ids
            .gcn
            .iter()
            .map(|&(w, b)| {
                (
                    tape.constant(self.params.value(w).clone()),
                    tape.constant(self.params.value(b).clone()),
                )
            })
            .collect();
        let mut unused = rng::stream(0, &[]);
        let e = self.enhance(&mut tape, adj, x, &gcn, &mut unused, false)?;
        Ok(tape.value(e).clone())
    }

    /// Binds every non-graph parameter. With `trainable` false they are
    /// constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let mut vars = Vec::new();
        let mut b = |id: ParamId| {
            let v = tape.leaf(self.params.value(id).clone(), trainable);
            vars.push((id, v));
            v
        };
        let response = b(self.ids.response);
        let attention = AttentionParams {
            query: b(self.ids.query),
            key: b(self.ids.key),
            value: b(self.ids.value),
            heads: self.config.heads,
        };
        let disc = [b(self.ids.disc[0]), b(self.ids.disc[1])];
        let head_weight = [b(self.ids.head_weight[0]), b(self.ids.head_weight[1])];
        let head_proj = [b(self.ids.head_proj[0]), b(self.ids.head_proj[1])];
        Bound {
            response,
            attention,
            disc,
            head_weight,
            head_proj,
            vars,
        }
    }

    fn sequence_rows(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        e_batch: Var,
        rows: &BatchRows,
        steps: &[Step],
    ) -> Result<(Var, Var, Var)> {
        let q = tape.gather_rows(e_batch, &rows.local(steps))?;
        let responses: Vec<u8> = steps.iter().map(|s| s.response).collect();
        let qr = ops::interaction_embed(tape, q, &responses, bound.response)?;
        if !self.config.positional {
            return Ok((q, q, qr));
        }
        let pos = tape.constant(ops::positional_table(steps.len(), self.config.dim));
        let qp = tape.add(q, pos)?;
        let qrp = tape.add(qr, pos)?;
        Ok((q, qp, qrp))
    }

    /// One learner's forward pass over a merged sequence. `dropout` is
    /// `None` in evaluation mode.
    #[allow(clippy::too_many_arguments)]
    pub fn learner_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        e_batch: Var,
        rows: &BatchRows,
        steps: &[Step],
        negative: Option<&[Step]>,
        mut dropout: Option<&mut DropoutStreams>,
    ) -> Result<LearnerOutput> {
        if steps.is_empty() {
            return Ok(LearnerOutput {
                courses: [None, None],
            });
        }
        let p = self.config.dropout;
        let training = dropout.is_some();
        let courses: Vec<Course> = steps.iter().map(|s| s.course).collect();
        let (q_raw, q_in, qr_in) = self.sequence_rows(tape, bound, e_batch, rows, steps)?;
        let proj = ops::project(tape, &bound.attention, q_in, q_in, qr_in)?;
        // The three views differ only in their masks.
        let scores = ops::attention_scores(tape, self.config.heads, &proj)?;

        let mut merged = ops::attend_scores(tape, &proj, &scores, &causal_mask(&courses, None))?;
        if let Some(d) = dropout.as_deref_mut() {
            merged = tape.dropout(merged, p, &mut d.merged, training)?;
        }

        let g_neg = match negative {
            Some(neg) if !neg.is_empty() => {
                let (_, nq, nqr) = self.sequence_rows(tape, bound, e_batch, rows, neg)?;
                let nproj = ops::project(tape, &bound.attention, nq, nq, nqr)?;
                let ncourses: Vec<Course> = neg.iter().map(|s| s.course).collect();
                let mut h = ops::attend_projected(tape, self.config.heads, &nproj, &causal_mask(&ncourses, None))?;
                if let Some(d) = dropout.as_deref_mut() {
                    h = tape.dropout(h, p, &mut d.negative, training)?;
                }
                Some(ops::pool_history(tape, h, &vec![true; neg.len()])?)
            }
            _ => None,
        };
        let g_merged = match g_neg {
            Some(_) => Some(ops::pool_history(tape, merged, &vec![true; steps.len()])?),
            None => None,
        };

        let mut out = [None, None];
        for course in Course::BOTH {
            let ci = course.index();
            let positions: Vec<usize> = (0..steps.len()).filter(|&i| courses[i] == course).collect();
            if positions.is_empty() {
                continue;
            }
            let mut single = ops::attend_scores(tape, &proj, &scores, &causal_mask(&courses, Some(course)))?;
            if let Some(d) = dropout.as_deref_mut() {
                single = tape.dropout(single, p, &mut d.view[ci], training)?;
            }
            let h_single = tape.gather_rows(single, &positions)?;
            let h_cross = tape.gather_rows(merged, &positions)?;
            let fused = ops::fuse_states(tape, h_single, h_cross, self.config.eta)?;
            let q = tape.gather_rows(q_raw, &positions)?;
            let logits = ops::predict_logits(tape, fused, q, bound.head_weight[ci], bound.head_proj[ci])?;
            let labels = positions.iter().map(|&i| f64::from(steps[i].response)).collect();
            let contrastive = match (g_neg, g_merged) {
                (Some(gn), Some(gm)) => {
                    let mask: Vec<bool> = courses.iter().map(|&c| c == course).collect();
                    let g_single = ops::pool_history(tape, single, &mask)?;
                    Some(ops::contrastive_loss(tape, g_single, gm, gn, bound.disc[ci])?)
                }
                _ => None,
            };
            out[ci] = Some(CourseOutput {
                positions,
                logits,
                labels,
                contrastive,
            });
        }
        Ok(LearnerOutput { courses: out })
    }

    /// Evaluation-mode probabilities for every position of one sequence,
    /// given precomputed enhanced features. Returns `(course, prob, label)`
    /// in merged order.
    pub fn predict_sequence(&self, enhanced: &Tensor, steps: &[Step]) -> Result<Vec<(Course, f64, u8)>> {
        if steps.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let rows = BatchRows::new(&[steps]);
        let e = tape.constant(rows.gather(enhanced)?);
        let out = self.learner_forward(&mut tape, &bound, e, &rows, steps, None, None)?;
        let mut preds = vec![None; steps.len()];
        for c in out.courses.iter().flatten() {
            let logits = tape.value(c.logits);
            for (k, &pos) in c.positions.iter().enumerate() {
                let z = logits.get(k, 0);
                preds[pos] = Some((steps[pos].course, 1.0 / (1.0 + (-z).exp()), steps[pos].response));
            }
        }
        Ok(preds.into_iter().map(|p| p.expect("every position scored")).collect())
    }

    pub fn to_checkpoint(&self, mut meta: BTreeMap<String, String>, rng: RngState) -> Checkpoint {
        self.config.to_meta(&mut meta);
        let mut params = self.params.clone();
        params.clear_grads();
        Checkpoint { meta, rng, params }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_meta(&ckpt.meta)?;
        Self::from_params(config, ckpt.params.clone())
    }
}
