use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transkt_core::data::{
    parse_concept_map, parse_interactions, preprocess, split, truncate, AlignedTriple, ConceptMap, Course,
    Dataset, InteractionLog, InteractionRecord, PreprocessOptions, Step, INTERACTION_HEADER,
};

type Row = (String, Course, String, u8, i64);

/// Random log: `learners` learners, each with up to `max_per_course` answers
/// per course drawn from `questions` questions per course. Some learners
/// skip a course entirely.
fn random_rows(rng: &mut ChaCha8Rng, learners: usize, questions: usize, max_per_course: usize) -> Vec<Row> {
    let mut rows = Vec::new();
    for l in 0..learners {
        for course in Course::BOTH {
            if rng.random_bool(0.1) {
                continue;
            }
            for _ in 0..rng.random_range(0..=max_per_course) {
                let q = rng.random_range(0..questions);
                rows.push((
                    format!("l{l:03}"),
                    course,
                    format!("{course}q{q:02}"),
                    rng.random_range(0..2),
                    rng.random_range(0..500),
                ));
            }
        }
    }
    rows
}

fn to_log(rows: &[Row]) -> InteractionLog {
    InteractionLog::from_records(rows.iter().map(|(l, c, q, r, t)| InteractionRecord {
        learner_id: l.clone(),
        course: *c,
        question_id: q.clone(),
        response: *r,
        timestamp: *t,
    }))
}

fn concept_map(rows: &[Row]) -> ConceptMap {
    let mut map = ConceptMap::default();
    for (_, _, q, _, _) in rows {
        // Two concepts per course, chosen by the question's last digit.
        let digit = q.as_bytes()[q.len() - 1] - b'0';
        map.insert(q.clone(), format!("{}k{}", &q[..1], digit % 2));
    }
    map
}

fn sort_oracle(rows: &[Row]) -> BTreeMap<String, Vec<Row>> {
    let mut out: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for r in rows {
        out.entry(r.0.clone()).or_default().push(r.clone());
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| (a.4, a.1, &a.2).cmp(&(b.4, b.1, &b.2)));
    }
    out
}

/// Straight-line rendition of the three filters.
fn filter_oracle(rows: &[Row], opts: &PreprocessOptions) -> BTreeMap<String, Vec<(Course, String, u8)>> {
    let mut courses: HashMap<&str, BTreeSet<Course>> = HashMap::new();
    for r in rows {
        courses.entry(&r.0).or_default().insert(r.1);
    }
    let pass1: Vec<&Row> = rows.iter().filter(|r| courses[r.0.as_str()].len() == 2).collect();

    let mut answers: HashMap<&str, usize> = HashMap::new();
    for r in &pass1 {
        *answers.entry(&r.2).or_default() += 1;
    }
    let pass2: Vec<&Row> = pass1
        .into_iter()
        .filter(|r| answers[r.2.as_str()] >= opts.min_answers_per_question)
        .collect();

    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for r in &pass2 {
        let e = counts.entry(&r.0).or_default();
        match r.1 {
            Course::X => e.0 += 1,
            Course::Y => e.1 += 1,
        }
    }
    let keep = |l: &str| {
        let (x, y) = counts[l];
        x >= opts.min_per_course && y >= opts.min_per_course && x + y >= opts.min_cross_course
    };
    let survivors: Vec<Row> = pass2.into_iter().filter(|r| keep(&r.0)).cloned().collect();
    sort_oracle(&survivors)
        .into_iter()
        .map(|(l, v)| (l, v.into_iter().map(|(_, c, q, r, _)| (c, q, r)).collect()))
        .collect()
}

fn decoded(ds: &Dataset) -> BTreeMap<String, Vec<(Course, String, u8)>> {
    ds.learners
        .iter()
        .map(|(l, t)| {
            let steps = t
                .merged
                .iter()
                .map(|s| (s.course, ds.questions.id(s.question).to_string(), s.response))
                .collect();
            (l.clone(), steps)
        })
        .collect()
}

fn csv(rows: &[Row]) -> String {
    let mut text = format!("{INTERACTION_HEADER}\n");
    for (l, c, q, r, t) in rows {
        text.push_str(&format!("{l},{c},{q},{r},{t}\n"));
    }
    text
}

#[test]
fn parsed_log_is_grouped_and_sorted() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows = random_rows(&mut rng, 40, 20, 20);
    rows.truncate(1000);
    rows.shuffle(&mut rng);
    let log = parse_interactions(&csv(&rows), "rows.csv").unwrap();
    assert_eq!(log.len(), rows.len());
    let expect = sort_oracle(&rows);
    assert_eq!(log.by_learner.len(), expect.len());
    for (l, recs) in &log.by_learner {
        let got: Vec<Row> = recs
            .iter()
            .map(|r| (r.learner_id.clone(), r.course, r.question_id.clone(), r.response, r.timestamp))
            .collect();
        assert_eq!(&got, &expect[l], "{l}");
    }
}

#[test]
fn csv_round_trip_preserves_the_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows = random_rows(&mut rng, 30, 10, 15);
    let log = to_log(&rows);
    assert_eq!(parse_interactions(&log.to_csv(), "rt").unwrap(), log);
    let map = concept_map(&rows);
    assert_eq!(parse_concept_map(&map.to_csv(), "rt").unwrap(), map);
}

#[test]
fn preprocess_matches_filter_oracle() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 200, 40, 12);
        let opts = PreprocessOptions::default();
        let ds = preprocess(&to_log(&rows), &concept_map(&rows), &opts).unwrap();
        let expect = filter_oracle(&rows, &opts);
        assert!(!expect.is_empty());
        assert_eq!(decoded(&ds), expect, "seed {seed}");
        // Vocabulary holds exactly the surviving questions.
        let used: BTreeSet<&str> = expect.values().flatten().map(|(_, q, _)| q.as_str()).collect();
        let vocab: BTreeSet<&str> = ds.questions.ids().iter().map(String::as_str).collect();
        assert_eq!(used, vocab);
    }
}

#[test]
fn preprocess_output_satisfies_thresholds_under_fixpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows = random_rows(&mut rng, 200, 40, 12);
    let opts = PreprocessOptions {
        fixpoint: true,
        ..Default::default()
    };
    let ds = preprocess(&to_log(&rows), &concept_map(&rows), &opts).unwrap();
    let mut answers = vec![0usize; ds.num_questions()];
    for t in ds.learners.values() {
        assert!(t.count(Course::X) >= opts.min_per_course);
        assert!(t.count(Course::Y) >= opts.min_per_course);
        assert!(t.len() >= opts.min_cross_course);
        for s in &t.merged {
            answers[s.question] += 1;
        }
    }
    assert!(answers.iter().all(|&n| n >= opts.min_answers_per_question));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixpoint_preprocess_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 120, 25, 12);
        let opts = PreprocessOptions { fixpoint: true, ..Default::default() };
        let Ok(once) = preprocess(&to_log(&rows), &concept_map(&rows), &opts) else {
            return Ok(());
        };
        let twice = preprocess(&once.to_log(), &once.concept_map(), &opts).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn truncate_keeps_the_most_recent_suffix(
        courses in prop::collection::vec(any::<bool>(), 1..80),
        max_len in 1usize..100,
    ) {
        let merged: Vec<Step> = courses
            .iter()
            .enumerate()
            .map(|(i, &y)| Step {
                question: i,
                course: if y { Course::Y } else { Course::X },
                response: (i % 2) as u8,
            })
            .collect();
        let triple = AlignedTriple::from_merged(merged.clone());
        let cut = truncate(&triple, max_len);
        let keep = max_len.min(merged.len());
        prop_assert_eq!(&cut.merged[..], &merged[merged.len() - keep..]);
        prop_assert!(cut.validate().is_ok());
        prop_assert_eq!(cut.view_x.len(), keep);
        prop_assert_eq!(cut.view_y.len(), keep);
    }

    #[test]
    fn split_partitions_learners(n in 3usize..150, seed in any::<u64>(), train in 0.2f64..0.7, val in 0.05f64..0.25) {
        let steps = vec![
            Step { question: 0, course: Course::X, response: 1 },
            Step { question: 1, course: Course::Y, response: 0 },
        ];
        let mut rows = Vec::new();
        for l in 0..n {
            rows.push((format!("l{l}"), Course::X, "qx".to_string(), 1u8, 0i64));
            rows.push((format!("l{l}"), Course::Y, "qy".to_string(), 0u8, 1i64));
        }
        let mut map = ConceptMap::default();
        map.insert("qx", "kx");
        map.insert("qy", "ky");
        let ds = Dataset::from_log(&to_log(&rows), &map).unwrap();
        prop_assert_eq!(&ds.learners.values().next().unwrap().merged, &steps);

        let n_train = (n as f64 * train + 1e-9).floor() as usize;
        let n_val = (n as f64 * val + 1e-9).floor() as usize;
        let Ok(parts) = split(&ds, train, val, seed) else {
            prop_assert!(n_train == 0 || n_val == 0 || n_train + n_val >= n);
            return Ok(());
        };
        let m = &parts.manifest;
        prop_assert_eq!(m.train.len(), n_train);
        prop_assert_eq!(m.val.len(), n_val);
        let all: BTreeSet<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(parts.train.learners.len() + parts.val.learners.len() + parts.test.learners.len(), n);
        let again = split(&ds, train, val, seed).unwrap();
        prop_assert_eq!(&again.manifest, m);
    }
}

#[test]
fn different_split_seeds_differ() {
    let rows: Vec<Row> = (0..100)
        .flat_map(|l| {
            [
                (format!("l{l}"), Course::X, "qx".to_string(), 1, 0),
                (format!("l{l}"), Course::Y, "qy".to_string(), 0, 1),
            ]
        })
        .collect();
    let mut map = ConceptMap::default();
    map.insert("qx", "kx");
    map.insert("qy", "ky");
    let ds = Dataset::from_log(&to_log(&rows), &map).unwrap();
    let a = split(&ds, 0.8, 0.1, 1).unwrap().manifest;
    let b = split(&ds, 0.8, 0.1, 2).unwrap().manifest;
    assert_ne!(a.train, b.train);
}

#[test]
fn dataset_json_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows = random_rows(&mut rng, 80, 20, 12);
    let ds = preprocess(&to_log(&rows), &concept_map(&rows), &PreprocessOptions::default()).unwrap();
    let back = Dataset::from_json(&ds.to_json(), "rt").unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_json(), ds.to_json());
}
