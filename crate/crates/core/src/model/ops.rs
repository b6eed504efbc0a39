//! Building blocks of the forward pass, each recorded on a [`Tape`].

use std::sync::Arc;

use rand::Rng;

use crate::numcore::{Csr, Tape, Tensor, Var};
use crate::{Error, Result};

/// One mean-aggregating graph layer per `(weight, bias)` pair:
/// `ReLU(A · X · W + b)` where `A` averages over each node and its
/// neighbours. Dropout is applied to every layer output when training.
pub fn propagate<R: Rng + ?Sized>(
    tape: &mut Tape,
    adj: &Arc<Csr>,
    features: Var,
    layers: &[(Var, Var)],
    dropout: f64,
    rng: &mut R,
    training: bool,
) -> Result<Var> {
    let (n, _) = tape.shape(features);
    if adj.rows != n {
        return Err(Error::ShapeMismatch {
            op: "propagate",
            left: (adj.rows, adj.cols),
            right: tape.shape(features),
        });
    }
    let mut x = features;
    for &(w, b) in layers {
        let xw = tape.matmul(x, w)?;
        let agg = tape.aggregate(adj, xw)?;
        let pre = tape.add_row(agg, b)?;
        let act = tape.relu(pre)?;
        x = tape.dropout(act, dropout, rng, training)?;
    }
    Ok(x)
}

/// `q + onehot(r) · W_r` for each row.
pub fn interaction_embed(tape: &mut Tape, q: Var, responses: &[u8], w_r: Var) -> Result<Var> {
    let idx: Vec<usize> = responses.iter().map(|&r| usize::from(r)).collect();
    let r = tape.gather_rows(w_r, &idx)?;
    tape.add(q, r)
}

/// Attention projections shared by every pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub heads: usize,
}

/// Projected queries, keys and values of one sequence.
#[derive(Clone, Copy, Debug)]
pub struct Projected {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

pub fn project(
    tape: &mut Tape,
    p: &AttentionParams,
    targets: Var,
    keys: Var,
    values: Var,
) -> Result<Projected> {
    Ok(Projected {
        query: tape.matmul(targets, p.query)?,
        key: tape.matmul(keys, p.key)?,
        value: tape.matmul(values, p.value)?,
    })
}

/// Scaled per-head scores `q_h k_hᵀ / sqrt(D / heads)` of projected rows.
pub fn attention_scores(tape: &mut Tape, heads: usize, proj: &Projected) -> Result<Vec<Var>> {
    let d = tape.shape(proj.query).1;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "dimension {d} is not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    (0..heads)
        .map(|h| {
            let (qh, kh) = if heads == 1 {
                (proj.query, proj.key)
            } else {
                (
                    tape.slice_cols(proj.query, h * dh, dh)?,
                    tape.slice_cols(proj.key, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            tape.scale(scores, scale)
        })
        .collect()
}

/// Attention output for precomputed scores. Row `i` attends over the rows
/// `j` with `mask[i * n + j]` true; a row with no allowed position is zero.
pub fn attend_scores(
    tape: &mut Tape,
    proj: &Projected,
    scores: &[Var],
    mask: &[bool],
) -> Result<Var> {
    let heads = scores.len();
    let dh = tape.shape(proj.value).1 / heads;
    let mut out: Option<Var> = None;
    for (h, &s) in scores.iter().enumerate() {
        let vh = if heads == 1 {
            proj.value
        } else {
            tape.slice_cols(proj.value, h * dh, dh)?
        };
        let weights = tape.masked_softmax(s, mask)?;
        let head = tape.matmul(weights, vh)?;
        out = Some(match out {
            None => head,
            Some(prev) => tape.concat(prev, head)?,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Scaled dot-product attention over already projected rows; see
/// [`attend_scores`] for the mask convention.
pub fn attend_projected(
    tape: &mut Tape,
    heads: usize,
    proj: &Projected,
    mask: &[bool],
) -> Result<Var> {
    let scores = attention_scores(tape, heads, proj)?;
    attend_scores(tape, proj, &scores, mask)
}

pub fn attend(
    tape: &mut Tape,
    p: &AttentionParams,
    targets: Var,
    keys: Var,
    values: Var,
    mask: &[bool],
) -> Result<Var> {
    let proj = project(tape, p, targets, keys, values)?;
    attend_projected(tape, p.heads, &proj, mask)
}

/// Knowledge state for a single target given its history of
/// `(question, interaction)` rows. Empty history gives the zero vector.
pub fn encode_history(
    tape: &mut Tape,
    p: &AttentionParams,
    history_q: Option<Var>,
    history_qr: Option<Var>,
    target_q: Var,
) -> Result<Var> {
    match (history_q, history_qr) {
        (Some(k), Some(v)) => {
            let n = tape.shape(k).0;
            attend(tape, p, target_q, k, v, &vec![true; n])
        }
        _ => {
            let d = tape.shape(target_q).1;
            Ok(tape.constant(Tensor::zeros(1, d)))
        }
    }
}

/// Mean over valid rows.
pub fn pool_history(tape: &mut Tape, states: Var, mask: &[bool]) -> Result<Var> {
    tape.masked_mean(states, mask)
}

/// Bilinear logit `g_single · W · g_crossᵀ` (1 × 1).
pub fn discriminator_logit(tape: &mut Tape, g_single: Var, g_cross: Var, w: Var) -> Result<Var> {
    let left = tape.matmul(g_single, w)?;
    tape.matmul_nt(left, g_cross)
}

/// `sigmoid(g_single · W · g_crossᵀ)`.
pub fn discriminate(tape: &mut Tape, g_single: Var, g_cross: Var, w: Var) -> Result<Var> {
    let z = discriminator_logit(tape, g_single, g_cross, w)?;
    tape.sigmoid(z)
}

/// `-(log D(pos) + log(1 - D(neg)))` evaluated from logits.
pub fn contrastive_loss(
    tape: &mut Tape,
    g_single: Var,
    g_cross_pos: Var,
    g_cross_neg: Var,
    w: Var,
) -> Result<Var> {
    let pos = discriminator_logit(tape, g_single, g_cross_pos, w)?;
    let neg = discriminator_logit(tape, g_single, g_cross_neg, w)?;
    let both = tape.concat(pos, neg)?;
    tape.bce_with_logits(both, &[1.0, 0.0])
}

pub fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// `eta · h_cross + (1 - eta) · h_single`.
pub fn fuse_states(tape: &mut Tape, h_single: Var, h_cross: Var, eta: f64) -> Result<Var> {
    check_unit_interval("eta", eta)?;
    let a = tape.scale(h_cross, eta)?;
    let b = tape.scale(h_single, 1.0 - eta)?;
    tape.add(a, b)
}

/// Prediction logits `v · ReLU(W · (h ⊕ q))` for each row.
pub fn predict_logits(tape: &mut Tape, h: Var, q: Var, w: Var, v: Var) -> Result<Var> {
    let hq = tape.concat(h, q)?;
    let z = tape.matmul_nt(hq, w)?;
    let z = tape.relu(z)?;
    tape.matmul_nt(z, v)
}

pub fn predict(tape: &mut Tape, h: Var, q: Var, w: Var, v: Var) -> Result<Var> {
    let z = predict_logits(tape, h, q, w, v)?;
    tape.sigmoid(z)
}

/// Mean binary cross-entropy over rows with `mask` set.
pub fn prediction_loss(tape: &mut Tape, logits: Var, labels: &[f64], mask: &[bool]) -> Result<Var> {
    let idx: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::NoValidPositions("prediction_loss"));
    }
    if labels.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "prediction_loss",
            left: tape.shape(logits),
            right: (labels.len(), 1),
        });
    }
    let picked = tape.gather_rows(logits, &idx)?;
    let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
    let total = tape.bce_with_logits(picked, &y)?;
    tape.scale(total, 1.0 / idx.len() as f64)
}

/// `lambda (pred_x + pred_y) + (1 - lambda)(cl_x + cl_y)` on plain numbers.
pub fn total_loss(pred_x: f64, pred_y: f64, cl_x: f64, cl_y: f64, lambda: f64) -> Result<f64> {
    check_unit_interval("lambda", lambda)?;
    Ok(lambda * (pred_x + pred_y) + (1.0 - lambda) * (cl_x + cl_y))
}

/// Sinusoidal position table, `len × dim`.
pub fn positional_table(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len.max(1), dim);
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * freq;
            t.set(pos, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    t
}
