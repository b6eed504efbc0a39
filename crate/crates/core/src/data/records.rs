use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const INTERACTION_HEADER: &str = "learner_id,course_id,question_id,response,timestamp";

/// One of the two courses of a cross-course dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Course {
    X,
    Y,
}

impl Course {
    pub const BOTH: [Course; 2] = [Course::X, Course::Y];

    pub fn as_str(self) -> &'static str {
        match self {
            Course::X => "X",
            Course::Y => "Y",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Course::X => 0,
            Course::Y => 1,
        }
    }

    pub fn other(self) -> Course {
        match self {
            Course::X => Course::Y,
            Course::Y => Course::X,
        }
    }
}

impl fmt::Display for Course {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Course {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" => Ok(Course::X),
            "Y" => Ok(Course::Y),
            other => Err(Error::Validation(format!(
                "unknown course id `{other}` (expected X or Y)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub learner_id: String,
    pub course: Course,
    pub question_id: String,
    pub response: u8,
    pub timestamp: i64,
}

impl InteractionRecord {
    /// Ordering used everywhere a learner's records are sorted: timestamp,
    /// then course id, then question id.
    pub fn order_key(&self) -> (i64, Course, &str) {
        (self.timestamp, self.course, &self.question_id)
    }
}

/// Records grouped by learner, each group in chronological order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub by_learner: BTreeMap<String, Vec<InteractionRecord>>,
}

impl InteractionLog {
    pub fn from_records(records: impl IntoIterator<Item = InteractionRecord>) -> Self {
        let mut by_learner: BTreeMap<String, Vec<InteractionRecord>> = BTreeMap::new();
        for r in records {
            by_learner.entry(r.learner_id.clone()).or_default().push(r);
        }
        for recs in by_learner.values_mut() {
            // Stable, so exact duplicates keep file order.
            recs.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        }
        Self { by_learner }
    }

    pub fn len(&self) -> usize {
        self.by_learner.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_learner.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &InteractionRecord> {
        self.by_learner.values().flatten()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv_writer();
        w.write_record(INTERACTION_HEADER.split(','))
            .expect("in-memory write");
        for r in self.records() {
            w.write_record([
                r.learner_id.as_str(),
                r.course.as_str(),
                r.question_id.as_str(),
                &r.response.to_string(),
                &r.timestamp.to_string(),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }
}

/// Quotes fields only when they contain a delimiter, quote or newline.
fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("fields are UTF-8")
}

fn csv_reader(text: &str, has_headers: bool) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Parses the interaction-log format. `source` names the input in errors.
pub fn parse_interactions(text: &str, source: &str) -> Result<InteractionLog> {
    if text.trim().is_empty() {
        return Ok(InteractionLog::default());
    }
    let mut reader = csv_reader(text, true);
    let header = reader
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?;
    let names: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = INTERACTION_HEADER.split(',').collect();
    if names != expected {
        return Err(Error::parse(
            source,
            1,
            format!("expected header `{INTERACTION_HEADER}`"),
        ));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 5 {
            return Err(Error::parse(
                source,
                line,
                format!("expected 5 fields, got {}", row.len()),
            ));
        }
        let field = |i: usize, name: &str| -> Result<&str> {
            let v = &row[i];
            if v.is_empty() {
                Err(Error::parse(source, line, format!("empty {name}")))
            } else {
                Ok(v)
            }
        };
        let learner_id = field(0, "learner_id")?.to_string();
        let course = field(1, "course_id")?.parse::<Course>().map_err(|_| {
            Error::Validation(format!(
                "{source}: line {line}: unknown course id `{}`",
                &row[1]
            ))
        })?;
        let question_id = field(2, "question_id")?.to_string();
        let response = match field(3, "response")? {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::parse(
                    source,
                    line,
                    format!("response must be 0 or 1, got `{other}`"),
                ))
            }
        };
        let ts = field(4, "timestamp")?;
        let timestamp = ts
            .parse::<i64>()
            .map_err(|_| Error::parse(source, line, format!("bad timestamp `{ts}`")))?;
        records.push(InteractionRecord {
            learner_id,
            course,
            question_id,
            response,
            timestamp,
        });
    }
    Ok(InteractionLog::from_records(records))
}

pub fn load_interactions(path: &Path) -> Result<InteractionLog> {
    let text = crate::error::read_to_string(path)?;
    parse_interactions(&text, &path.display().to_string())
}

/// Question → concept associations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConceptMap {
    pub concepts_of: BTreeMap<String, BTreeSet<String>>,
}

impl ConceptMap {
    pub fn insert(&mut self, question: impl Into<String>, concept: impl Into<String>) {
        self.concepts_of
            .entry(question.into())
            .or_default()
            .insert(concept.into());
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv_writer();
        w.write_record(["question_id", "concept_id"])
            .expect("in-memory write");
        for (q, cs) in &self.concepts_of {
            for c in cs {
                w.write_record([q, c]).expect("in-memory write");
            }
        }
        finish(w)
    }
}

/// Parses `question_id,concept_id` lines. A `question_id,concept_id` header
/// line is optional. Duplicate rows collapse.
pub fn parse_concept_map(text: &str, source: &str) -> Result<ConceptMap> {
    let mut map = ConceptMap::default();
    let mut reader = csv_reader(text, false);
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.iter().all(str::is_empty) {
            continue;
        }
        if line == 1 && row.len() == 2 && &row[0] == "question_id" && &row[1] == "concept_id" {
            continue;
        }
        if row.len() != 2 || row[0].is_empty() || row[1].is_empty() {
            return Err(Error::parse(
                source,
                line,
                "expected `question_id,concept_id`",
            ));
        }
        map.insert(&row[0], &row[1]);
    }
    Ok(map)
}

pub fn load_concept_map(path: &Path) -> Result<ConceptMap> {
    let text = crate::error::read_to_string(path)?;
    parse_concept_map(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_come_back_in_timestamp_order() {
        let text = format!("{INTERACTION_HEADER}\nA,X,q2,1,200\nA,Y,q9,0,100\n");
        let log = parse_interactions(&text, "t").unwrap();
        let recs = &log.by_learner["A"];
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].question_id, "q9");
        assert_eq!(recs[1].question_id, "q2");
    }

    #[test]
    fn empty_file_is_an_empty_log() {
        assert!(parse_interactions("", "t").unwrap().is_empty());
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = format!("{INTERACTION_HEADER}\nA,X,q1,1,5\nA,X,q1,2,6\n");
        match parse_interactions(&text, "log.csv") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "log.csv");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_course_is_a_validation_error() {
        let text = format!("{INTERACTION_HEADER}\nA,Z,q1,1,5\n");
        assert!(matches!(
            parse_interactions(&text, "t"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn missing_header_is_rejected() {
        assert!(parse_interactions("A,X,q1,1,5\n", "t").is_err());
    }

    #[test]
    fn ties_break_on_course_then_question() {
        let text = format!("{INTERACTION_HEADER}\nA,Y,a,1,5\nA,X,z,1,5\nA,X,b,0,5\n");
        let log = parse_interactions(&text, "t").unwrap();
        let order: Vec<&str> = log.by_learner["A"]
            .iter()
            .map(|r| r.question_id.as_str())
            .collect();
        assert_eq!(order, ["b", "z", "a"]);
    }

    #[test]
    fn concept_map_collapses_duplicates_and_accepts_header() {
        let map = parse_concept_map("question_id,concept_id\nq1,c1\nq1,c2\nq1,c1\n", "m").unwrap();
        assert_eq!(map.concepts_of["q1"].len(), 2);
    }
}
