//! Hybrid hard negative sampling: response flips and difficulty-guided
//! question replacement.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Course, Dataset, Slot, Step};
use crate::{Error, Result};

/// Correct rate of every question in the training data. Higher is easier.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyTable {
    pub rate: Vec<f64>,
    pub answers: Vec<usize>,
    question_course: Vec<Course>,
    question_concepts: Vec<Vec<usize>>,
    concept_questions: Vec<Vec<usize>>,
    /// Questions of each course sorted by (rate, index).
    by_course: [Vec<usize>; 2],
}

pub const UNSEEN_RATE: f64 = 0.5;

impl DifficultyTable {
    /// Counts only the learners present in `train`.
    pub fn build(train: &Dataset) -> Self {
        let m = train.num_questions();
        let mut correct = vec![0usize; m];
        let mut answers = vec![0usize; m];
        for t in train.learners.values() {
            for s in &t.merged {
                answers[s.question] += 1;
                correct[s.question] += usize::from(s.response);
            }
        }
        let rate: Vec<f64> = (0..m)
            .map(|q| {
                if answers[q] == 0 {
                    UNSEEN_RATE
                } else {
                    correct[q] as f64 / answers[q] as f64
                }
            })
            .collect();
        let mut concept_questions = vec![Vec::new(); train.num_concepts()];
        for (q, cs) in train.question_concepts.iter().enumerate() {
            for &c in cs {
                concept_questions[c].push(q);
            }
        }
        let mut by_course = [Vec::new(), Vec::new()];
        for q in 0..m {
            by_course[train.question_course[q].index()].push(q);
        }
        for list in &mut by_course {
            list.sort_by(|&a, &b| rate[a].total_cmp(&rate[b]).then(a.cmp(&b)));
        }
        Self {
            rate,
            answers,
            question_course: train.question_course.clone(),
            question_concepts: train.question_concepts.clone(),
            concept_questions,
            by_course,
        }
    }

    /// Questions strictly easier (`easier`) or strictly harder than `q` that
    /// share a concept with it, in index order.
    fn concept_pool(&self, q: usize, easier: bool) -> Vec<usize> {
        let mut pool = BTreeSet::new();
        for &c in &self.question_concepts[q] {
            for &cand in &self.concept_questions[c] {
                if cand != q
                    && self.question_course[cand] == self.question_course[q]
                    && self.strictly(cand, q, easier)
                {
                    pool.insert(cand);
                }
            }
        }
        pool.into_iter().collect()
    }

    fn course_pool(&self, q: usize, easier: bool) -> &[usize] {
        let list = &self.by_course[self.question_course[q].index()];
        let r = self.rate[q];
        if easier {
            let start = list.partition_point(|&c| self.rate[c] <= r);
            &list[start..]
        } else {
            let end = list.partition_point(|&c| self.rate[c] < r);
            &list[..end]
        }
    }

    fn strictly(&self, cand: usize, q: usize, easier: bool) -> bool {
        if easier {
            self.rate[cand] > self.rate[q]
        } else {
            self.rate[cand] < self.rate[q]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeConfig {
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            theta1: 0.3,
            theta2: 0.6,
        }
    }
}

impl NegativeConfig {
    /// Requires `0 < theta1 <= theta2 < 1`. Equal thresholds disable
    /// replacement.
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.theta1, self.theta2);
        if a > 0.0 && a <= b && b < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "negative sampling thresholds need 0 < theta1 <= theta2 < 1, got {a}, {b}"
            )))
        }
    }
}

/// What happened at one position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegOp {
    Pad,
    Keep,
    Flip,
    /// Replaced from the shared-concept pool.
    Replace,
    /// Replaced from the whole same-course pool.
    ReplaceCoursePool,
    /// No strictly easier/harder question exists; the response is flipped.
    ReplaceFallbackFlip,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    pub kept: usize,
    pub flips: usize,
    pub replacements: usize,
    pub course_pool: usize,
    pub fallback_flips: usize,
}

impl SampleStats {
    pub fn record(&mut self, op: NegOp) {
        match op {
            NegOp::Pad => {}
            NegOp::Keep => self.kept += 1,
            NegOp::Flip => self.flips += 1,
            NegOp::Replace => self.replacements += 1,
            NegOp::ReplaceCoursePool => {
                self.replacements += 1;
                self.course_pool += 1;
            }
            NegOp::ReplaceFallbackFlip => {
                self.replacements += 1;
                self.fallback_flips += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &SampleStats) {
        self.kept += other.kept;
        self.flips += other.flips;
        self.replacements += other.replacements;
        self.course_pool += other.course_pool;
        self.fallback_flips += other.fallback_flips;
    }
}

/// Negative sequence plus the operation applied at each position.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSample {
    pub slots: Vec<Slot<Step>>,
    pub ops: Vec<NegOp>,
}

impl NegativeSample {
    pub fn steps(&self) -> Vec<Step> {
        self.slots.iter().filter_map(|s| s.item().copied()).collect()
    }

    pub fn stats(&self) -> SampleStats {
        let mut s = SampleStats::default();
        for &op in &self.ops {
            s.record(op);
        }
        s
    }
}

/// Core of the sampler with explicit randomness: `uniform` yields draws in
/// [0, 1) for each non-PAD position and `pick(n)` chooses an index below n.
pub fn hybrid_sample_with(
    seq: &[Slot<Step>],
    table: &DifficultyTable,
    config: &NegativeConfig,
    mut uniform: impl FnMut() -> f64,
    mut pick: impl FnMut(usize) -> usize,
) -> NegativeSample {
    let mut slots = Vec::with_capacity(seq.len());
    let mut ops = Vec::with_capacity(seq.len());
    for slot in seq {
        let Slot::Item(step) = slot else {
            slots.push(Slot::Pad);
            ops.push(NegOp::Pad);
            continue;
        };
        let u = uniform();
        let flipped = Step {
            response: 1 - step.response,
            ..*step
        };
        let (out, op) = if u < config.theta1 {
            (flipped, NegOp::Flip)
        } else if u < config.theta2 {
            let easier = step.response == 1;
            let pool = table.concept_pool(step.question, easier);
            if !pool.is_empty() {
                let q = pool[pick(pool.len())];
                (Step { question: q, ..flipped }, NegOp::Replace)
            } else {
                let pool = table.course_pool(step.question, easier);
                if !pool.is_empty() {
                    let q = pool[pick(pool.len())];
                    (Step { question: q, ..flipped }, NegOp::ReplaceCoursePool)
                } else {
                    log::debug!(
                        "no {} question than {}; flipping instead",
                        if easier { "easier" } else { "harder" },
                        step.question
                    );
                    (flipped, NegOp::ReplaceFallbackFlip)
                }
            }
        } else {
            (*step, NegOp::Keep)
        };
        slots.push(Slot::Item(out));
        ops.push(op);
    }
    NegativeSample { slots, ops }
}

pub fn hybrid_sample<R: Rng + ?Sized>(
    seq: &[Slot<Step>],
    table: &DifficultyTable,
    config: &NegativeConfig,
    rng: &mut R,
) -> NegativeSample {
    let rng = std::cell::RefCell::new(rng);
    hybrid_sample_with(
        seq,
        table,
        config,
        || rng.borrow_mut().random::<f64>(),
        |n| rng.borrow_mut().random_range(0..n),
    )
}

/// Convenience for unpadded sequences such as a merged view.
pub fn hybrid_sample_steps<R: Rng + ?Sized>(
    seq: &[Step],
    table: &DifficultyTable,
    config: &NegativeConfig,
    rng: &mut R,
) -> NegativeSample {
    let slots: Vec<Slot<Step>> = seq.iter().map(|s| Slot::Item(*s)).collect();
    hybrid_sample(&slots, table, config, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, ConceptMap, InteractionLog, InteractionRecord, PreprocessOptions};

    fn tiny() -> Dataset {
        // Course X: qa (rate 1/4), qb (3/4), qc (1). All share concept k.
        let rows = [
            ("l1", Course::X, "qa", 1),
            ("l1", Course::X, "qb", 1),
            ("l1", Course::X, "qc", 1),
            ("l1", Course::Y, "qy", 0),
            ("l2", Course::X, "qa", 0),
            ("l2", Course::X, "qb", 1),
            ("l2", Course::Y, "qy", 1),
            ("l3", Course::X, "qa", 0),
            ("l3", Course::X, "qb", 1),
            ("l3", Course::Y, "qy", 1),
            ("l4", Course::X, "qa", 0),
            ("l4", Course::X, "qb", 0),
            ("l4", Course::Y, "qy", 1),
        ];
        let log = InteractionLog::from_records(rows.iter().enumerate().map(|(i, &(l, c, q, r))| {
            InteractionRecord {
                learner_id: l.into(),
                course: c,
                question_id: q.into(),
                response: r,
                timestamp: i as i64,
            }
        }));
        let mut map = ConceptMap::default();
        for q in ["qa", "qb", "qc"] {
            map.insert(q, "k");
        }
        map.insert("qy", "ky");
        let opts = PreprocessOptions {
            min_answers_per_question: 1,
            min_per_course: 1,
            min_cross_course: 1,
            fixpoint: false,
        };
        preprocess(&log, &map, &opts).unwrap()
    }

    #[test]
    fn rates_are_counting_ratios() {
        let d = tiny();
        let t = DifficultyTable::build(&d);
        let q = |id: &str| d.questions.get(id).unwrap();
        assert_eq!(t.rate[q("qa")], 0.25);
        assert_eq!(t.rate[q("qb")], 0.75);
        assert_eq!(t.rate[q("qc")], 1.0);
    }

    #[test]
    fn unseen_questions_get_half() {
        let d = tiny();
        let empty = d.subset(std::iter::empty());
        let t = DifficultyTable::build(&empty);
        assert!(t.rate.iter().all(|&r| r == UNSEEN_RATE));
    }

    #[test]
    fn trace_flip_replace_keep() {
        let d = tiny();
        let t = DifficultyTable::build(&d);
        let q = |id: &str| d.questions.get(id).unwrap();
        let seq: Vec<Slot<Step>> = [("qb", 1), ("qb", 1), ("qb", 0)]
            .iter()
            .map(|&(id, r)| {
                Slot::Item(Step {
                    question: q(id),
                    course: Course::X,
                    response: r,
                })
            })
            .collect();
        let mut draws = [0.05, 0.45, 0.95].into_iter();
        let out = hybrid_sample_with(
            &seq,
            &t,
            &NegativeConfig::default(),
            || draws.next().unwrap(),
            |_| 0,
        );
        assert_eq!(out.ops, [NegOp::Flip, NegOp::Replace, NegOp::Keep]);
        let steps = out.steps();
        assert_eq!(steps[0].question, q("qb"));
        assert_eq!(steps[0].response, 0);
        assert_eq!(steps[1].question, q("qc"));
        assert_eq!(steps[1].response, 0);
        assert_eq!(steps[2].response, 0);
    }

    #[test]
    fn easiest_correct_question_falls_back_to_flip() {
        let d = tiny();
        let t = DifficultyTable::build(&d);
        let qc = d.questions.get("qc").unwrap();
        let seq = [Slot::Item(Step {
            question: qc,
            course: Course::X,
            response: 1,
        })];
        let out = hybrid_sample_with(&seq, &t, &NegativeConfig::default(), || 0.4, |_| 0);
        assert_eq!(out.ops, [NegOp::ReplaceFallbackFlip]);
        assert_eq!(out.steps()[0].response, 0);
    }

    #[test]
    fn equal_thresholds_never_replace() {
        let d = tiny();
        let t = DifficultyTable::build(&d);
        let cfg = NegativeConfig {
            theta1: 0.4,
            theta2: 0.4,
        };
        cfg.validate().unwrap();
        let seq: Vec<Slot<Step>> = d.learners["l1"].merged.iter().map(|s| Slot::Item(*s)).collect();
        let mut u = [0.1, 0.4, 0.39999, 0.9].into_iter();
        let out = hybrid_sample_with(&seq, &t, &cfg, || u.next().unwrap(), |_| 0);
        assert_eq!(out.ops, [NegOp::Flip, NegOp::Keep, NegOp::Flip, NegOp::Keep]);
    }

    #[test]
    fn pad_passes_through_without_a_draw() {
        let d = tiny();
        let t = DifficultyTable::build(&d);
        let seq = [Slot::Pad, Slot::Item(d.learners["l1"].merged[0])];
        let mut calls = 0;
        let out = hybrid_sample_with(
            &seq,
            &t,
            &NegativeConfig::default(),
            || {
                calls += 1;
                0.99
            },
            |_| 0,
        );
        assert_eq!(calls, 1);
        assert_eq!(out.slots[0], Slot::Pad);
    }

    #[test]
    fn threshold_validation() {
        for (a, b) in [(0.0, 0.5), (0.6, 0.5), (0.3, 1.0)] {
            assert!(NegativeConfig { theta1: a, theta2: b }.validate().is_err());
        }
    }
}
