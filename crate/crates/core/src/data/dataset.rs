use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::align::{AlignedTriple, Step};
use super::records::{ConceptMap, Course, InteractionLog, InteractionRecord};
use crate::rng::{self, tag};
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "transkt-dataset";
pub const DATASET_VERSION: u32 = 1;
const SPLIT_FORMAT: &str = "transkt-split";

/// Dense, contiguous index over external ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate id `{id}`")));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessOptions {
    pub min_answers_per_question: usize,
    pub min_per_course: usize,
    pub min_cross_course: usize,
    /// Repeat the three passes until nothing changes.
    pub fixpoint: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            min_answers_per_question: 10,
            min_per_course: 3,
            min_cross_course: 10,
            fixpoint: false,
        }
    }
}

/// Encoded cross-course dataset. Questions are indexed `0..m` ordered by
/// (course, id); concepts likewise `0..k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub questions: Vocab,
    pub concepts: Vocab,
    pub question_course: Vec<Course>,
    pub concept_course: Vec<Course>,
    pub question_concepts: Vec<Vec<usize>>,
    pub learners: BTreeMap<String, AlignedTriple<Step>>,
}

fn filter_pass(log: &mut InteractionLog, opts: &PreprocessOptions) {
    log.by_learner.retain(|_, recs| {
        Course::BOTH
            .iter()
            .all(|&c| recs.iter().any(|r| r.course == c))
    });

    let mut answers: HashMap<&str, usize> = HashMap::new();
    for r in log.records() {
        *answers.entry(r.question_id.as_str()).or_default() += 1;
    }
    let rare: BTreeSet<String> = answers
        .into_iter()
        .filter(|&(_, n)| n < opts.min_answers_per_question)
        .map(|(q, _)| q.to_string())
        .collect();
    for recs in log.by_learner.values_mut() {
        recs.retain(|r| !rare.contains(&r.question_id));
    }

    log.by_learner.retain(|_, recs| {
        let nx = recs.iter().filter(|r| r.course == Course::X).count();
        let ny = recs.len() - nx;
        nx >= opts.min_per_course && ny >= opts.min_per_course && recs.len() >= opts.min_cross_course
    });
}

/// Applies the three filters in order: learners lacking either course,
/// questions with too few answers, learners with too few records.
pub fn preprocess(
    log: &InteractionLog,
    concept_map: &ConceptMap,
    opts: &PreprocessOptions,
) -> Result<Dataset> {
    if log.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut log = log.clone();
    loop {
        let before = log.len();
        filter_pass(&mut log, opts);
        if !opts.fixpoint || log.len() == before {
            break;
        }
    }
    if log.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::from_log(&log, concept_map)
}

impl Dataset {
    /// Encodes a log without filtering. Every question must have a concept.
    pub fn from_log(log: &InteractionLog, concept_map: &ConceptMap) -> Result<Self> {
        let mut question_set: BTreeSet<(Course, &str)> = BTreeSet::new();
        let mut course_of: HashMap<&str, Course> = HashMap::new();
        for r in log.records() {
            if let Some(&c) = course_of.get(r.question_id.as_str()) {
                if c != r.course {
                    return Err(Error::Validation(format!(
                        "question `{}` appears in both courses",
                        r.question_id
                    )));
                }
            }
            course_of.insert(&r.question_id, r.course);
            question_set.insert((r.course, &r.question_id));
        }
        let questions: Vec<(Course, String)> = question_set
            .into_iter()
            .map(|(c, q)| (c, q.to_string()))
            .collect();

        let mut concept_course: BTreeMap<String, Course> = BTreeMap::new();
        for (course, q) in &questions {
            let cs = concept_map
                .concepts_of
                .get(q)
                .filter(|cs| !cs.is_empty())
                .ok_or_else(|| Error::Validation(format!("question `{q}` has no concept")))?;
            for c in cs {
                concept_course.entry(c.clone()).or_insert(*course);
            }
        }
        let mut concepts: Vec<(Course, String)> = concept_course
            .into_iter()
            .map(|(id, c)| (c, id))
            .collect();
        concepts.sort();

        let concept_vocab = Vocab::from_ids(concepts.iter().map(|(_, id)| id.clone()).collect())?;
        let question_concepts = questions
            .iter()
            .map(|(_, q)| {
                let mut v: Vec<usize> = concept_map.concepts_of[q]
                    .iter()
                    .map(|c| concept_vocab.get(c).expect("concept indexed above"))
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        let question_vocab = Vocab::from_ids(questions.iter().map(|(_, q)| q.clone()).collect())?;

        let mut learners = BTreeMap::new();
        for (learner, recs) in &log.by_learner {
            let steps = recs
                .iter()
                .map(|r| Step {
                    question: question_vocab.get(&r.question_id).expect("indexed above"),
                    course: r.course,
                    response: r.response,
                })
                .collect();
            learners.insert(learner.clone(), AlignedTriple::from_merged(steps));
        }

        Ok(Self {
            questions: question_vocab,
            concepts: concept_vocab,
            question_course: questions.iter().map(|(c, _)| *c).collect(),
            concept_course: concepts.iter().map(|(c, _)| *c).collect(),
            question_concepts,
            learners,
        })
    }

    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_questions() + self.num_concepts()
    }

    pub fn question_node(&self, q: usize) -> usize {
        q
    }

    pub fn concept_node(&self, c: usize) -> usize {
        self.num_questions() + c
    }

    /// Node keys in node-index order: `q:<id>` then `c:<id>`.
    pub fn node_keys(&self) -> Vec<String> {
        self.questions
            .ids()
            .iter()
            .map(|q| format!("q:{q}"))
            .chain(self.concepts.ids().iter().map(|c| format!("c:{c}")))
            .collect()
    }

    pub fn questions_in(&self, course: Course) -> Vec<usize> {
        (0..self.num_questions())
            .filter(|&q| self.question_course[q] == course)
            .collect()
    }

    pub fn num_interactions(&self) -> usize {
        self.learners.values().map(AlignedTriple::len).sum()
    }

    /// Same vocabulary, restricted learner set.
    pub fn subset<'a>(&self, learner_ids: impl IntoIterator<Item = &'a String>) -> Self {
        let learners = learner_ids
            .into_iter()
            .filter_map(|id| self.learners.get(id).map(|t| (id.clone(), t.clone())))
            .collect();
        Self {
            learners,
            ..self.without_learners()
        }
    }

    fn without_learners(&self) -> Self {
        Self {
            questions: self.questions.clone(),
            concepts: self.concepts.clone(),
            question_course: self.question_course.clone(),
            concept_course: self.concept_course.clone(),
            question_concepts: self.question_concepts.clone(),
            learners: BTreeMap::new(),
        }
    }

    /// Interaction log view of the dataset. Timestamps are merged positions.
    pub fn to_log(&self) -> InteractionLog {
        let mut by_learner = BTreeMap::new();
        for (id, t) in &self.learners {
            let recs = t
                .merged
                .iter()
                .enumerate()
                .map(|(i, s)| InteractionRecord {
                    learner_id: id.clone(),
                    course: s.course,
                    question_id: self.questions.id(s.question).to_string(),
                    response: s.response,
                    timestamp: i as i64,
                })
                .collect();
            by_learner.insert(id.clone(), recs);
        }
        InteractionLog { by_learner }
    }

    pub fn concept_map(&self) -> ConceptMap {
        let mut map = ConceptMap::default();
        for (q, cs) in self.question_concepts.iter().enumerate() {
            for &c in cs {
                map.insert(self.questions.id(q), self.concepts.id(c));
            }
        }
        map
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            questions: (0..self.num_questions())
                .map(|q| QuestionEntry {
                    id: self.questions.id(q).to_string(),
                    course: self.question_course[q],
                    concepts: self.question_concepts[q].clone(),
                })
                .collect(),
            concepts: (0..self.num_concepts())
                .map(|c| ConceptEntry {
                    id: self.concepts.id(c).to_string(),
                    course: self.concept_course[c],
                })
                .collect(),
            learners: self
                .learners
                .iter()
                .map(|(id, t)| (id.clone(), t.merged.clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serializes")
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(source, e.line(), e.to_string()))?;
        if file.format != DATASET_FORMAT || file.version != DATASET_VERSION {
            return Err(Error::parse(
                source,
                1,
                format!(
                    "expected {DATASET_FORMAT} version {DATASET_VERSION}, got {} version {}",
                    file.format, file.version
                ),
            ));
        }
        let k = file.concepts.len();
        let m = file.questions.len();
        let mut question_concepts = Vec::with_capacity(m);
        for q in &file.questions {
            if q.concepts.is_empty() || q.concepts.iter().any(|&c| c >= k) {
                return Err(Error::Validation(format!(
                    "question `{}` has missing or out-of-range concepts",
                    q.id
                )));
            }
            let mut cs = q.concepts.clone();
            cs.sort_unstable();
            cs.dedup();
            question_concepts.push(cs);
        }
        let question_course: Vec<Course> = file.questions.iter().map(|q| q.course).collect();
        let mut learners = BTreeMap::new();
        for (id, steps) in file.learners {
            for s in &steps {
                if s.question >= m || s.response > 1 || question_course[s.question] != s.course {
                    return Err(Error::Validation(format!(
                        "learner `{id}` has an invalid step"
                    )));
                }
            }
            learners.insert(id, AlignedTriple::from_merged(steps));
        }
        Ok(Self {
            questions: Vocab::from_ids(file.questions.into_iter().map(|q| q.id).collect())?,
            concept_course: file.concepts.iter().map(|c| c.course).collect(),
            concepts: Vocab::from_ids(file.concepts.into_iter().map(|c| c.id).collect())?,
            question_course,
            question_concepts,
            learners,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    format: String,
    version: u32,
    questions: Vec<QuestionEntry>,
    concepts: Vec<ConceptEntry>,
    learners: BTreeMap<String, Vec<Step>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionEntry {
    id: String,
    course: Course,
    concepts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConceptEntry {
    id: String,
    course: Course,
}

/// Learner ids of each partition, as written next to split outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)
            .map_err(|e| Error::parse(source, e.line(), e.to_string()))?;
        if m.format != SPLIT_FORMAT || m.version != 1 {
            return Err(Error::parse(source, 1, "not a version 1 split manifest"));
        }
        Ok(m)
    }

    pub fn apply(&self, dataset: &Dataset) -> DatasetSplit {
        DatasetSplit {
            train: dataset.subset(&self.train),
            val: dataset.subset(&self.val),
            test: dataset.subset(&self.test),
            manifest: self.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub manifest: SplitManifest,
}

/// Learner-level split. Sizes are `floor(n * frac)` for train and val, the
/// remainder goes to test.
pub fn split(dataset: &Dataset, train_frac: f64, val_frac: f64, seed: u64) -> Result<DatasetSplit> {
    let valid = |f: f64| f.is_finite() && f > 0.0;
    if !valid(train_frac) || !valid(val_frac) || train_frac + val_frac > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "split fractions must be positive with sum <= 1, got {train_frac}/{val_frac}"
        )));
    }
    let mut ids: Vec<String> = dataset.learners.keys().cloned().collect();
    let n = ids.len();
    let n_train = (n as f64 * train_frac + 1e-9).floor() as usize;
    let n_val = (n as f64 * val_frac + 1e-9).floor() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} learners into {n_train}/{n_val}/{n_test} leaves a partition empty"
        )));
    }
    let mut rng = rng::stream(seed, &[tag::SPLIT]);
    ids.shuffle(&mut rng);
    let part = |range: std::ops::Range<usize>| {
        let mut v = ids[range].to_vec();
        v.sort();
        v
    };
    let manifest = SplitManifest {
        format: SPLIT_FORMAT.into(),
        version: 1,
        seed,
        train_frac,
        val_frac,
        train: part(0..n_train),
        val: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    };
    Ok(manifest.apply(dataset))
}
