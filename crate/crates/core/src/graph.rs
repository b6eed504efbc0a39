//! Cross-course concept graph: explicit question–concept links and
//! predicted, typed concept–concept links.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Course, Dataset};
use crate::llm::{majority, parse_vote, LlmClient, LlmRequest, Task, Vote};
use crate::numcore::Csr;
use crate::semantics::{cosine, HashEncoder};
use crate::{Error, Result};

pub const GRAPH_FORMAT: &str = "transkt-graph";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationType {
    #[serde(rename = "Prerequisite_of")]
    PrerequisiteOf,
    #[serde(rename = "Used_for")]
    UsedFor,
    #[serde(rename = "Hyponym_of")]
    HyponymOf,
    #[serde(rename = "Part_of")]
    PartOf,
}

impl RelationType {
    pub const ALL: [RelationType; 4] = [
        RelationType::PrerequisiteOf,
        RelationType::UsedFor,
        RelationType::HyponymOf,
        RelationType::PartOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::PrerequisiteOf => "Prerequisite_of",
            RelationType::UsedFor => "Used_for",
            RelationType::HyponymOf => "Hyponym_of",
            RelationType::PartOf => "Part_of",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            RelationType::PrerequisiteOf => {
                "A is a prerequisite of B when a learner has to understand A before \
they can understand B."
            }
            RelationType::UsedFor => {
                "A is used for B when A is a method, tool, or piece of knowledge that is \
applied to carry out or solve B."
            }
            RelationType::HyponymOf => {
                "A is a hyponym of B when A is a more specific kind or instance of B, \
so that every A is also a B."
            }
            RelationType::PartOf => {
                "A is part of B when A is a component or sub-topic that B is made up of."
            }
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationType::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown relation type `{s}`")))
    }
}

/// Zero-shot relation prompt. `courses` are the course names of concept A
/// and concept B.
pub fn render_relation_prompt(
    courses: [&str; 2],
    relation: RelationType,
    concept_a: &str,
    concept_b: &str,
) -> Result<String> {
    if concept_a.trim().is_empty() || concept_b.trim().is_empty() {
        return Err(Error::Validation("concept names must be nonempty".into()));
    }
    let [course_a, course_b] = courses;
    Ok(format!(
        "You are an expert teacher who knows the curricula of the courses \"{course_a}\" and \
\"{course_b}\".\n\
We are building a map of how knowledge concepts depend on each other.\n\n\
Relation: {name}\n\
Definition: {definition}\n\n\
Concept A: \"{concept_a}\" from the course \"{course_a}\".\n\
Concept B: \"{concept_b}\" from the course \"{course_b}\".\n\n\
Does the relation {name} hold from concept A to concept B? \
Answer with exactly one word, yes or no.",
        name = relation.as_str(),
        definition = relation.definition(),
    ))
}

/// How concept pairs are chosen for querying.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// All inter-course pairs plus intra-course pairs sharing a question.
    Default,
    /// Every ordered pair of distinct concepts.
    Full,
}

/// Ordered candidate pairs; with `both_orders` false only `a < b` is kept.
pub fn candidate_pairs(
    dataset: &Dataset,
    mode: CandidateMode,
    both_orders: bool,
) -> BTreeSet<(usize, usize)> {
    let k = dataset.num_concepts();
    let mut shared: BTreeSet<(usize, usize)> = BTreeSet::new();
    if mode == CandidateMode::Default {
        for cs in &dataset.question_concepts {
            for &a in cs {
                for &b in cs {
                    if a != b {
                        shared.insert((a, b));
                    }
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for a in 0..k {
        for b in 0..k {
            if a == b || (!both_orders && a > b) {
                continue;
            }
            let keep = match mode {
                CandidateMode::Full => true,
                CandidateMode::Default => {
                    dataset.concept_course[a] != dataset.concept_course[b]
                        || shared.contains(&(a, b))
                }
            };
            if keep {
                out.insert((a, b));
            }
        }
    }
    out
}

pub enum RelationBackend<'a> {
    /// Any LLM client (HTTP, fixture, usually behind a cache) with majority
    /// voting over `votes` samples.
    Llm { client: &'a dyn LlmClient, votes: u32 },
    /// Affirms every relation type for pairs whose hashed names have cosine
    /// similarity at least `threshold`.
    Heuristic { encoder: HashEncoder, threshold: f64 },
}

impl RelationBackend<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            RelationBackend::Llm { .. } => "llm",
            RelationBackend::Heuristic { .. } => "heuristic",
        }
    }

    pub fn votes(&self) -> u32 {
        match self {
            RelationBackend::Llm { votes, .. } => *votes,
            RelationBackend::Heuristic { .. } => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RelationBackend::Llm { votes, .. } if *votes == 0 || votes % 2 == 0 => Err(
                Error::Config(format!("votes_per_query must be odd and >= 1, got {votes}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Concepts with the names and course names used in prompts.
#[derive(Clone, Debug)]
pub struct ConceptInfo {
    pub name: String,
    pub course: Course,
}

/// Queries the backend for one (a, b, relation) triple.
pub fn predict_relation(
    backend: &RelationBackend<'_>,
    course_names: [&str; 2],
    a: &ConceptInfo,
    b: &ConceptInfo,
    relation: RelationType,
) -> Result<bool> {
    match backend {
        RelationBackend::Heuristic { encoder, threshold } => {
            let va = encoder.encode(&a.name)?;
            let vb = encoder.encode(&b.name)?;
            Ok(cosine(&va, &vb) >= *threshold)
        }
        RelationBackend::Llm { client, votes } => {
            let prompt = render_relation_prompt(
                [course_names[a.course.index()], course_names[b.course.index()]],
                relation,
                &a.name,
                &b.name,
            )?;
            let mut tally = Vec::with_capacity(*votes as usize);
            for sample in 0..*votes {
                let reply = client.complete(&LlmRequest {
                    prompt: prompt.clone(),
                    sample,
                    task: Task::Relation {
                        a: a.name.clone(),
                        b: b.name.clone(),
                        relation,
                    },
                })?;
                let vote = parse_vote(&reply);
                if vote == Vote::Unparseable {
                    log::warn!(
                        "unparseable vote for ({}, {}, {relation}): {reply:?}",
                        a.name,
                        b.name
                    );
                }
                tally.push(vote);
            }
            Ok(majority(&tally))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub votes: u32,
    pub candidate_pairs: usize,
    pub cache_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CcEdge {
    pub from: usize,
    pub to: usize,
    pub relation: RelationType,
}

/// Nodes are questions `0..num_questions` followed by concepts; edges use
/// question and concept indices within their own kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptGraph {
    pub node_keys: Vec<String>,
    pub num_questions: usize,
    pub qc_edges: BTreeSet<(usize, usize)>,
    pub cc_edges: BTreeSet<CcEdge>,
    pub provenance: Provenance,
}

/// One edge per (question, concept) association.
pub fn build_explicit_links(dataset: &Dataset) -> Result<BTreeSet<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    for (q, cs) in dataset.question_concepts.iter().enumerate() {
        if cs.is_empty() {
            return Err(Error::Validation(format!(
                "question `{}` has no concept",
                dataset.questions.id(q)
            )));
        }
        for &c in cs {
            edges.insert((q, c));
        }
    }
    Ok(edges)
}

pub struct GraphBuildOptions {
    pub course_names: [String; 2],
    /// Display names for concepts, by concept index; ids when absent.
    pub concept_names: Option<Vec<String>>,
    pub parallelism: usize,
}

impl Default for GraphBuildOptions {
    fn default() -> Self {
        Self {
            course_names: ["X".into(), "Y".into()],
            concept_names: None,
            parallelism: 4,
        }
    }
}

pub fn build_graph(
    dataset: &Dataset,
    backend: &RelationBackend<'_>,
    candidates: &BTreeSet<(usize, usize)>,
    options: &GraphBuildOptions,
) -> Result<ConceptGraph> {
    backend.validate()?;
    let k = dataset.num_concepts();
    if let Some(names) = &options.concept_names {
        if names.len() != k {
            return Err(Error::Validation(format!(
                "{} concept names for {k} concepts",
                names.len()
            )));
        }
    }
    let infos: Vec<ConceptInfo> = (0..k)
        .map(|c| ConceptInfo {
            name: options
                .concept_names
                .as_ref()
                .map_or_else(|| dataset.concepts.id(c).to_string(), |n| n[c].clone()),
            course: dataset.concept_course[c],
        })
        .collect();
    let mut jobs = Vec::with_capacity(candidates.len() * RelationType::ALL.len());
    for &(a, b) in candidates {
        if a == b || a >= k || b >= k {
            return Err(Error::Validation(format!("invalid candidate pair ({a}, {b})")));
        }
        for r in RelationType::ALL {
            jobs.push((a, b, r));
        }
    }
    let course_names = [
        options.course_names[0].as_str(),
        options.course_names[1].as_str(),
    ];
    let verdicts = crate::par::try_map(&jobs, options.parallelism, |&(a, b, r)| {
        predict_relation(backend, course_names, &infos[a], &infos[b], r)
    })?;
    let cc_edges = jobs
        .iter()
        .zip(verdicts)
        .filter(|(_, yes)| *yes)
        .map(|(&(from, to, relation), _)| CcEdge { from, to, relation })
        .collect();
    Ok(ConceptGraph {
        node_keys: dataset.node_keys(),
        num_questions: dataset.num_questions(),
        qc_edges: build_explicit_links(dataset)?,
        cc_edges,
        provenance: Provenance {
            backend: backend.kind().into(),
            votes: backend.votes(),
            candidate_pairs: candidates.len(),
            cache_digest: None,
        },
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    format: String,
    version: u32,
    questions: Vec<String>,
    concepts: Vec<String>,
    qc_edges: Vec<[String; 2]>,
    cc_edges: Vec<CcEdgeEntry>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CcEdgeEntry {
    from: String,
    to: String,
    relation: RelationType,
}

impl ConceptGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_keys.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.node_keys.len() - self.num_questions
    }

    fn id(&self, node: usize) -> &str {
        &self.node_keys[node][2..]
    }

    /// Undirected mean-aggregation operator over N(i) ∪ {i}: row i holds
    /// weight 1/(|N(i)|+1) for i and each distinct neighbour.
    pub fn adjacency(&self) -> Arc<Csr> {
        let n = self.num_nodes();
        let mut nbrs: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        let mut link = |a: usize, b: usize| {
            nbrs[a].insert(b);
            nbrs[b].insert(a);
        };
        for &(q, c) in &self.qc_edges {
            link(q, self.num_questions + c);
        }
        for e in &self.cc_edges {
            link(self.num_questions + e.from, self.num_questions + e.to);
        }
        let rows: Vec<Vec<(usize, f64)>> = nbrs
            .into_iter()
            .map(|s| {
                let w = 1.0 / s.len() as f64;
                s.into_iter().map(|j| (j, w)).collect()
            })
            .collect();
        Arc::new(Csr::from_rows(n, &rows))
    }

    pub fn to_json(&self) -> String {
        let q = self.num_questions;
        let file = GraphFile {
            format: GRAPH_FORMAT.into(),
            version: GRAPH_VERSION,
            questions: (0..q).map(|i| self.id(i).to_string()).collect(),
            concepts: (q..self.num_nodes()).map(|i| self.id(i).to_string()).collect(),
            qc_edges: self
                .qc_edges
                .iter()
                .map(|&(a, c)| [self.id(a).to_string(), self.id(q + c).to_string()])
                .collect(),
            cc_edges: self
                .cc_edges
                .iter()
                .map(|e| CcEdgeEntry {
                    from: self.id(q + e.from).to_string(),
                    to: self.id(q + e.to).to_string(),
                    relation: e.relation,
                })
                .collect(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(source, e.line(), e.to_string()))?;
        if file.format != GRAPH_FORMAT || file.version != GRAPH_VERSION {
            return Err(Error::parse(source, 1, "not a version 1 graph file"));
        }
        let index = |ids: &[String], what: &str| -> Result<HashMap<String, usize>> {
            let mut m = HashMap::new();
            for (i, id) in ids.iter().enumerate() {
                if m.insert(id.clone(), i).is_some() {
                    return Err(Error::Validation(format!("duplicate {what} `{id}`")));
                }
            }
            Ok(m)
        };
        let qi = index(&file.questions, "question")?;
        let ci = index(&file.concepts, "concept")?;
        let lookup = |m: &HashMap<String, usize>, id: &str| {
            m.get(id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("edge references unknown node `{id}`")))
        };
        let mut qc_edges = BTreeSet::new();
        for [q, c] in &file.qc_edges {
            qc_edges.insert((lookup(&qi, q)?, lookup(&ci, c)?));
        }
        let mut cc_edges = BTreeSet::new();
        for e in &file.cc_edges {
            let (from, to) = (lookup(&ci, &e.from)?, lookup(&ci, &e.to)?);
            if from == to {
                return Err(Error::Validation(format!("self-loop on concept `{}`", e.from)));
            }
            cc_edges.insert(CcEdge {
                from,
                to,
                relation: e.relation,
            });
        }
        let mut covered = vec![false; file.questions.len()];
        for &(q, _) in &qc_edges {
            covered[q] = true;
        }
        if let Some(q) = covered.iter().position(|c| !c) {
            return Err(Error::Validation(format!(
                "question `{}` has no concept edge",
                file.questions[q]
            )));
        }
        let mut node_keys: Vec<String> = file.questions.iter().map(|q| format!("q:{q}")).collect();
        node_keys.extend(file.concepts.iter().map(|c| format!("c:{c}")));
        Ok(Self {
            node_keys,
            num_questions: file.questions.len(),
            qc_edges,
            cc_edges,
            provenance: file.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Relation labels grouped by unordered concept pair.
    pub fn labels_by_pair(&self) -> BTreeMap<(usize, usize), BTreeSet<RelationType>> {
        let mut m: BTreeMap<(usize, usize), BTreeSet<RelationType>> = BTreeMap::new();
        for e in &self.cc_edges {
            m.entry((e.from.min(e.to), e.from.max(e.to)))
                .or_default()
                .insert(e.relation);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_mentions_everything() {
        let p = render_relation_prompt(
            ["C", "DS"],
            RelationType::PrerequisiteOf,
            "pointer",
            "linked list",
        )
        .unwrap();
        for s in ["C", "DS", "Prerequisite_of", "pointer", "linked list"] {
            assert!(p.contains(s), "{s}");
        }
        assert!(p.contains(RelationType::PrerequisiteOf.definition()));
    }

    #[test]
    fn unknown_relation_type_is_rejected() {
        assert!("Sibling_of".parse::<RelationType>().is_err());
        assert_eq!(
            "Part_of".parse::<RelationType>().unwrap(),
            RelationType::PartOf
        );
    }

    #[test]
    fn definitions_are_distinct() {
        let set: BTreeSet<&str> = RelationType::ALL.iter().map(|r| r.definition()).collect();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn empty_concept_name_is_rejected() {
        assert!(render_relation_prompt(["a", "b"], RelationType::UsedFor, "", "x").is_err());
    }
}
