//! Synthetic cross-course learners with known ground truth.
//!
//! Each course owns `num_skills` private skills and both courses draw on
//! `num_skills` shared ones. A concept loads on one dominant shared skill
//! with mass `tau` and one private skill with mass `1 - tau`. A question's
//! loading is the mean of its concepts'. Responses follow
//! `sigmoid(a * (loading . theta - difficulty))`, and practicing a question
//! raises `theta` along its loading by `drift`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ConceptMap, Course, Dataset, InteractionLog, InteractionRecord};
use crate::graph::{CcEdge, ConceptGraph, Provenance, RelationType};
use crate::rng::{self, tag};
use crate::semantics::{node_texts_to_string, NodeKind, NodeText};
use crate::trainer::{auc, Metric};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_learners: usize,
    pub questions_per_course: usize,
    pub concepts_per_course: usize,
    /// Shared skills; each course additionally gets this many private ones.
    pub num_skills: usize,
    /// Probability that a concept gets a secondary skill and a question a
    /// secondary concept.
    pub density: f64,
    /// Discrimination `a` of the response model.
    pub discrimination: f64,
    /// Standard deviation of concept difficulty.
    pub difficulty_spread: f64,
    /// Standard deviation of a question's difficulty around the mean of its
    /// concepts' difficulties.
    pub difficulty_noise: f64,
    /// Proficiency gain per practiced unit of skill loading.
    pub drift: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of each concept's skill mass on shared skills.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_learners: 200,
            questions_per_course: 40,
            concepts_per_course: 8,
            num_skills: 4,
            density: 0.3,
            discrimination: 2.0,
            difficulty_spread: 1.0,
            difficulty_noise: 0.5,
            drift: 0.05,
            min_len: 30,
            max_len: 150,
            tau: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit.
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!("seed must be at most {}, got {}", i64::MAX, self.seed)));
        }
        let positive = [
            ("num_learners", self.num_learners),
            ("questions_per_course", self.questions_per_course),
            ("concepts_per_course", self.concepts_per_course),
            ("num_skills", self.num_skills),
            ("min_len", self.min_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "sequence length range [{}, {}] must satisfy 2 <= min <= max",
                self.min_len, self.max_len
            )));
        }
        for (name, v) in [("tau", self.tau), ("density", self.density)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("discrimination", self.discrimination),
            ("difficulty_spread", self.difficulty_spread),
            ("difficulty_noise", self.difficulty_noise),
            ("drift", self.drift),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::parse(source, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn total_skills(&self) -> usize {
        3 * self.num_skills
    }

    /// Index of course `c`'s private skill `k`.
    fn private_skill(&self, c: Course, k: usize) -> usize {
        self.num_skills * (1 + c.index()) + k
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub question: String,
    /// Loading-weighted proficiency before answering.
    pub proficiency: f64,
    /// True probability of a correct response.
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerTruth {
    pub initial_skills: Vec<f64>,
    pub trajectory: Vec<TruthPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub concept_difficulty: BTreeMap<String, f64>,
    pub concept_loadings: BTreeMap<String, Vec<f64>>,
    pub dominant_skill: BTreeMap<String, usize>,
    pub question_loadings: BTreeMap<String, Vec<f64>>,
    pub question_difficulty: BTreeMap<String, f64>,
    pub learners: BTreeMap<String, LearnerTruth>,
}

pub struct SynthOutput {
    pub config: SynthConfig,
    pub log: InteractionLog,
    pub concept_map: ConceptMap,
    pub dataset: Dataset,
    pub truth: GroundTruth,
    pub graph: ConceptGraph,
    pub node_texts: Vec<NodeText>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(a * (loading . skills - difficulty))`.
pub fn response_probability(a: f64, loading: &[f64], skills: &[f64], difficulty: f64) -> f64 {
    sigmoid(a * (dot(loading, skills) - difficulty))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ties go to the higher index, so a concept split evenly between a shared
/// and a private skill counts as private.
fn dominant(loading: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in loading.iter().enumerate() {
        if v >= loading[best] {
            best = i;
        }
    }
    best
}

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "ri", "mu", "te", "sa", "lo", "ni", "ve", "du", "fa", "zi", "po", "ge", "ha", "ru",
];

fn pseudo_word(rng: &mut impl Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let w: String = (0..3).map(|_| *SYLLABLES.choose(rng).expect("nonempty")).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn question_id(c: Course, i: usize) -> String {
    format!("{}-q{i:03}", c.as_str().to_lowercase())
}

fn concept_id(c: Course, i: usize) -> String {
    format!("{}-c{i:02}", c.as_str().to_lowercase())
}

/// Draws a dataset, its ground truth, and the ground-truth concept graph.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let seed = config.seed;
    let k = config.num_skills;
    let tau = config.tau;
    let mut rng = rng::stream(seed, &[tag::SYNTH, 0]);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut used_words = BTreeSet::new();

    let difficulty_dist = Normal::new(0.0, config.difficulty_spread).expect("finite spread");
    let noise_dist = Normal::new(0.0, config.difficulty_noise).expect("finite noise");
    let mut concept_difficulty = BTreeMap::new();
    let mut concept_loadings = BTreeMap::new();
    let mut dominant_skill = BTreeMap::new();
    let mut concept_names = BTreeMap::new();
    for course in Course::BOTH {
        let offset = rng.random_range(0..k);
        for j in 0..config.concepts_per_course {
            let mut loading = vec![0.0; config.total_skills()];
            let shared = (j + offset) % k;
            let private = config.private_skill(course, rng.random_range(0..k));
            if k > 1 && rng.random_bool(config.density) {
                let shared2 = (shared + rng.random_range(1..k)) % k;
                let private2 = config.private_skill(course, rng.random_range(0..k));
                loading[shared] += 0.75 * tau;
                loading[shared2] += 0.25 * tau;
                loading[private] += 0.75 * (1.0 - tau);
                loading[private2] += 0.25 * (1.0 - tau);
            } else {
                loading[shared] += tau;
                loading[private] += 1.0 - tau;
            }
            let id = concept_id(course, j);
            dominant_skill.insert(id.clone(), dominant(&loading));
            concept_loadings.insert(id.clone(), loading);
            concept_names.insert(id.clone(), pseudo_word(&mut rng, &mut used_words));
            concept_difficulty.insert(id, difficulty_dist.sample(&mut rng));
        }
    }

    let mut concept_map = ConceptMap::default();
    let mut question_loadings = BTreeMap::new();
    let mut question_difficulty = BTreeMap::new();
    let mut node_texts = Vec::new();
    let mut by_course: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for course in Course::BOTH {
        for i in 0..config.questions_per_course {
            let id = question_id(course, i);
            let first = i % config.concepts_per_course;
            let mut concepts = vec![first];
            if config.concepts_per_course > 1 && rng.random_bool(config.density) {
                concepts.push((first + rng.random_range(1..config.concepts_per_course)) % config.concepts_per_course);
            }
            let mut loading = vec![0.0; config.total_skills()];
            let mut difficulty = noise_dist.sample(&mut rng);
            for &c in &concepts {
                let cid = concept_id(course, c);
                difficulty += concept_difficulty[&cid] / concepts.len() as f64;
                for (l, v) in loading.iter_mut().zip(&concept_loadings[&cid]) {
                    *l += v / concepts.len() as f64;
                }
                concept_map.insert(id.clone(), cid);
            }
            let word = pseudo_word(&mut rng, &mut used_words);
            let topics: Vec<&str> = concepts
                .iter()
                .map(|&c| concept_names[&concept_id(course, c)].as_str())
                .collect();
            node_texts.push(NodeText::new(
                id.clone(),
                NodeKind::Question,
                format!("exercise {word} on {}", topics.join(" and ")),
            ));
            question_loadings.insert(id.clone(), loading);
            question_difficulty.insert(id.clone(), difficulty);
            by_course[course.index()].push(id);
        }
    }
    for (id, name) in &concept_names {
        node_texts.push(NodeText::new(id.clone(), NodeKind::Concept, format!("topic {name}")));
    }

    let width = config.num_learners.to_string().len().max(4);
    let mut records = Vec::new();
    let mut learners = BTreeMap::new();
    for l in 0..config.num_learners {
        let mut r = rng::stream(seed, &[tag::SYNTH, 1, l as u64]);
        let learner = format!("u{l:0width$}");
        let initial: Vec<f64> = (0..config.total_skills()).map(|_| normal.sample(&mut r)).collect();
        let mut skills = initial.clone();
        let len = r.random_range(config.min_len..=config.max_len);
        let p_x: f64 = r.random_range(0.3..0.7);
        // Both courses always appear.
        let mut courses: Vec<Course> = (0..len)
            .map(|_| if r.random_bool(p_x) { Course::X } else { Course::Y })
            .collect();
        for c in Course::BOTH {
            if !courses.contains(&c) {
                let at = r.random_range(0..len);
                courses[at] = c;
            }
        }
        let mut trajectory = Vec::with_capacity(len);
        for (t, course) in courses.into_iter().enumerate() {
            let q = by_course[course.index()].choose(&mut r).expect("questions exist").clone();
            let loading = &question_loadings[&q];
            let difficulty = question_difficulty[&q];
            let proficiency = dot(loading, &skills);
            let probability = response_probability(config.discrimination, loading, &skills, difficulty);
            let response = u8::from(r.random_bool(probability));
            for (s, w) in skills.iter_mut().zip(loading) {
                *s += config.drift * w;
            }
            records.push(InteractionRecord {
                learner_id: learner.clone(),
                course,
                question_id: q.clone(),
                response,
                timestamp: t as i64,
            });
            trajectory.push(TruthPoint {
                question: q,
                proficiency,
                probability,
            });
        }
        learners.insert(
            learner,
            LearnerTruth {
                initial_skills: initial,
                trajectory,
            },
        );
    }

    let log = InteractionLog::from_records(records);
    let dataset = Dataset::from_log(&log, &concept_map)?;
    let node_set: BTreeSet<String> = dataset.node_keys().into_iter().collect();
    node_texts.retain(|n| node_set.contains(&n.key()));
    let truth = GroundTruth {
        concept_difficulty,
        concept_loadings,
        dominant_skill,
        question_loadings,
        question_difficulty,
        learners,
    };
    let graph = ground_truth_graph(&dataset, &truth)?;
    Ok(SynthOutput {
        config: config.clone(),
        log,
        concept_map,
        dataset,
        truth,
        graph,
        node_texts,
    })
}

/// Question-concept links plus an edge between every pair of concepts
/// with the same dominant skill, lower index first.
pub fn ground_truth_graph(dataset: &Dataset, truth: &GroundTruth) -> Result<ConceptGraph> {
    let qc_edges = crate::graph::build_explicit_links(dataset)?;
    let skill_of: Vec<usize> = dataset
        .concepts
        .ids()
        .iter()
        .map(|id| {
            truth
                .dominant_skill
                .get(id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("no ground truth for concept `{id}`")))
        })
        .collect::<Result<_>>()?;
    let mut cc_edges = BTreeSet::new();
    for a in 0..skill_of.len() {
        for b in a + 1..skill_of.len() {
            if skill_of[a] == skill_of[b] {
                cc_edges.insert(CcEdge {
                    from: a,
                    to: b,
                    relation: RelationType::PrerequisiteOf,
                });
            }
        }
    }
    Ok(ConceptGraph {
        node_keys: dataset.node_keys(),
        num_questions: dataset.num_questions(),
        qc_edges,
        cc_edges,
        provenance: Provenance {
            backend: "synthetic".into(),
            votes: 0,
            candidate_pairs: 0,
            cache_digest: None,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleBound {
    pub x: Metric,
    pub y: Metric,
    /// Over both courses pooled.
    pub pooled: Metric,
}

/// AUC of the true response probabilities against the realized responses
/// of `dataset`'s learners, each restricted to their most recent
/// `max_seq_len` interactions when given.
pub fn oracle_auc_bound_truncated(
    dataset: &Dataset,
    truth: &GroundTruth,
    max_seq_len: Option<usize>,
) -> Result<OracleBound> {
    let mut scores: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut labels: [Vec<u8>; 2] = [Vec::new(), Vec::new()];
    for (id, triple) in &dataset.learners {
        let lt = truth
            .learners
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no ground truth for learner `{id}`")))?;
        if lt.trajectory.len() != triple.merged.len() {
            return Err(Error::Validation(format!(
                "learner `{id}` has {} interactions, ground truth has {}",
                triple.merged.len(),
                lt.trajectory.len()
            )));
        }
        let start = max_seq_len.map_or(0, |m| triple.merged.len().saturating_sub(m));
        for (step, point) in triple.merged.iter().zip(&lt.trajectory).skip(start) {
            scores[step.course.index()].push(point.probability);
            labels[step.course.index()].push(step.response);
        }
    }
    let metric = |s: &[f64], l: &[u8]| -> Result<Metric> {
        match auc(s, l) {
            Ok(v) => Ok(Metric(Some(v))),
            Err(Error::UndefinedAuc) => Ok(Metric(None)),
            Err(e) => Err(e),
        }
    };
    let all_scores: Vec<f64> = scores.concat();
    let all_labels: Vec<u8> = labels.concat();
    Ok(OracleBound {
        x: metric(&scores[0], &labels[0])?,
        y: metric(&scores[1], &labels[1])?,
        pooled: metric(&all_scores, &all_labels)?,
    })
}

pub fn oracle_auc_bound(dataset: &Dataset, truth: &GroundTruth) -> Result<OracleBound> {
    oracle_auc_bound_truncated(dataset, truth, None)
}

pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const CONCEPTS_FILE: &str = "concepts.csv";
pub const NODE_TEXTS_FILE: &str = "node_texts.tsv";
pub const GRAPH_FILE: &str = "graph.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const SUMMARY_FILE: &str = "synth.json";

impl SynthOutput {
    /// Writes the log, concept map, node texts, ground-truth graph, ground
    /// truth, and a summary with the oracle bound. Returns the paths in
    /// that order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bound = oracle_auc_bound(&self.dataset, &self.truth)?;
        let summary = serde_json::json!({
            "config": self.config,
            "learners": self.dataset.learners.len(),
            "interactions": self.dataset.num_interactions(),
            "questions": self.dataset.num_questions(),
            "concepts": self.dataset.num_concepts(),
            "cc_edges": self.graph.cc_edges.len(),
            "oracle_auc": bound,
        });
        let files = [
            (INTERACTIONS_FILE, self.log.to_csv()),
            (CONCEPTS_FILE, self.concept_map.to_csv()),
            (NODE_TEXTS_FILE, node_texts_to_string(&self.node_texts)),
            (GRAPH_FILE, self.graph.to_json()),
            (TRUTH_FILE, serde_json::to_string(&self.truth).expect("truth serializes")),
            (SUMMARY_FILE, serde_json::to_string_pretty(&summary).expect("summary serializes")),
        ];
        let mut paths = Vec::new();
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}
