use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Course;
use crate::{Error, Result};

fn twice_u_statistic(scores: &[f64], labels: &[u8]) -> Result<(u128, u128, u128)> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, ties sharing their mean rank.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let k = (end - start) as u128;
        let first_rank = start as u128 + 1;
        let twice_mean_rank = 2 * first_rank + k - 1;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        twice_rank_sum += pos_in_group * twice_mean_rank;
        start = end;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok((twice_u, n_pos, n_neg))
}

/// Rank-based (Mann–Whitney) AUC with ties counted as one half. Labels
/// other than 1 count as negatives.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (twice_u, n_pos, n_neg) = twice_u_statistic(scores, labels)?;
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn accuracy(scores: &[f64], labels: &[u8]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= 0.5) == (l == 1))
        .count();
    Some(hits as f64 / scores.len() as f64)
}

/// A metric that may be undefined, serialized as a number or `"undefined"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric(pub Option<f64>);

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Metric(Some(v))),
            Raw::Str(s) if s == "undefined" => Ok(Metric(None)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad metric `{s}`"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("undefined"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CourseMetrics {
    pub acc: Metric,
    pub auc: Metric,
    pub count: usize,
}

impl CourseMetrics {
    pub fn from_predictions(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let auc = match auc(scores, labels) {
            Ok(v) => Some(v),
            Err(Error::UndefinedAuc) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            acc: Metric(accuracy(scores, labels)),
            auc: Metric(auc),
            count: scores.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub x: CourseMetrics,
    pub y: CourseMetrics,
    pub epoch: usize,
    /// Omitted in deterministic mode so reports compare bitwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl EvalReport {
    pub fn course(&self, c: Course) -> &CourseMetrics {
        match c {
            Course::X => &self.x,
            Course::Y => &self.y,
        }
    }

    /// Mean of the defined per-course AUCs.
    pub fn mean_auc(&self) -> Option<f64> {
        let v: Vec<f64> = [self.x.auc.0, self.y.auc.0].into_iter().flatten().collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
