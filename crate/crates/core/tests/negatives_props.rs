use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transkt_core::data::{ConceptMap, Course, Dataset, InteractionLog, InteractionRecord, Slot, Step};
use transkt_core::negatives::{hybrid_sample, DifficultyTable, NegOp, NegativeConfig, UNSEEN_RATE};

/// Random two-course dataset. Question `q` of a course belongs to concept
/// `q % concepts`; the last question of each course is never answered.
fn random_dataset(seed: u64, learners: usize, questions: usize, concepts: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut map = ConceptMap::default();
    for course in Course::BOTH {
        for q in 0..questions {
            map.insert(format!("{course}{q}"), format!("{course}k{}", q % concepts));
        }
    }
    for l in 0..learners {
        for (t, course) in Course::BOTH.into_iter().cycle().take(rng.random_range(2..30)).enumerate() {
            // The last question of each course is never answered.
            let q = rng.random_range(0..questions - 1);
            records.push(InteractionRecord {
                learner_id: format!("l{l}"),
                course,
                question_id: format!("{course}{q}"),
                response: u8::from(rng.random_bool(0.2 + 0.6 * q as f64 / questions as f64)),
                timestamp: t as i64,
            });
        }
    }
    let log = InteractionLog::from_records(records);
    // Register every question, answered or not, through a one-off learner
    // that is dropped again below.
    let mut all = log.clone();
    all.by_learner.insert(
        "~vocab".into(),
        map.concepts_of
            .keys()
            .map(|q| InteractionRecord {
                learner_id: "~vocab".into(),
                course: if q.starts_with('X') { Course::X } else { Course::Y },
                question_id: q.clone(),
                response: 0,
                timestamp: 0,
            })
            .collect(),
    );
    let mut ds = Dataset::from_log(&all, &map).unwrap();
    ds.learners.remove("~vocab");
    ds
}

fn padded(steps: &[Step], rng: &mut ChaCha8Rng) -> Vec<Slot<Step>> {
    steps
        .iter()
        .flat_map(|&s| {
            let pad = rng.random_bool(0.3).then_some(Slot::Pad);
            pad.into_iter().chain([Slot::Item(s)])
        })
        .collect()
}

fn thresholds() -> impl Strategy<Value = NegativeConfig> {
    (0.01f64..0.98, 0.0f64..1.0).prop_map(|(a, f)| NegativeConfig {
        theta1: a,
        theta2: a + (0.99 - a) * f,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sample_respects_operation_contracts(seed in any::<u64>(), config in thresholds()) {
        let ds = random_dataset(seed % 16, 20, 12, 3);
        let table = DifficultyTable::build(&ds);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in ds.learners.values() {
            let seq = padded(&t.merged, &mut rng);
            let neg = hybrid_sample(&seq, &table, &config, &mut rng);
            prop_assert_eq!(neg.slots.len(), seq.len());
            prop_assert_eq!(neg.ops.len(), seq.len());
            for ((orig, out), op) in seq.iter().zip(&neg.slots).zip(&neg.ops) {
                let (Slot::Item(o), Slot::Item(n)) = (orig, out) else {
                    prop_assert!(orig.is_pad() && out.is_pad() && *op == NegOp::Pad);
                    continue;
                };
                prop_assert_eq!(o.course, n.course);
                prop_assert_eq!(ds.question_course[n.question], o.course);
                match op {
                    NegOp::Keep => prop_assert_eq!(o, n),
                    NegOp::Flip | NegOp::ReplaceFallbackFlip => {
                        prop_assert_eq!(n.question, o.question);
                        prop_assert_eq!(n.response, 1 - o.response);
                    }
                    NegOp::Replace | NegOp::ReplaceCoursePool => {
                        prop_assert_ne!(n.question, o.question);
                        prop_assert_eq!(n.response, 1 - o.response);
                        let (ro, rn) = (table.rate[o.question], table.rate[n.question]);
                        if o.response == 1 { prop_assert!(rn > ro) } else { prop_assert!(rn < ro) }
                        if *op == NegOp::Replace {
                            let a: BTreeSet<_> = ds.question_concepts[o.question].iter().collect();
                            prop_assert!(ds.question_concepts[n.question].iter().any(|c| a.contains(c)));
                        }
                    }
                    NegOp::Pad => prop_assert!(false, "pad op on an item"),
                }
            }
        }
    }

    #[test]
    fn sampling_is_a_pure_function_of_the_stream(seed in any::<u64>(), config in thresholds()) {
        let ds = random_dataset(3, 10, 10, 2);
        let table = DifficultyTable::build(&ds);
        for t in ds.learners.values() {
            let seq: Vec<Slot<Step>> = t.merged.iter().map(|&s| Slot::Item(s)).collect();
            let a = hybrid_sample(&seq, &table, &config, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = hybrid_sample(&seq, &table, &config, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn difficulty_table_matches_direct_counts() {
    let ds = random_dataset(9, 50, 15, 4);
    let table = DifficultyTable::build(&ds);
    for q in 0..ds.num_questions() {
        let mut seen = 0;
        let mut right = 0;
        for t in ds.learners.values() {
            for s in t.merged.iter().filter(|s| s.question == q) {
                seen += 1;
                right += usize::from(s.response);
            }
        }
        assert_eq!(table.answers[q], seen);
        let expect = if seen == 0 { UNSEEN_RATE } else { right as f64 / seen as f64 };
        assert_eq!(table.rate[q], expect, "question {q}");
    }
    assert!(table.answers.contains(&0), "fixture should leave some questions unseen");
}

#[test]
fn operation_frequencies_follow_thresholds() {
    let ds = random_dataset(5, 200, 12, 3);
    let table = DifficultyTable::build(&ds);
    let config = NegativeConfig { theta1: 0.15, theta2: 0.55 };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut n = 0usize;
    let (mut flips, mut replaced) = (0usize, 0usize);
    for _ in 0..10 {
        for t in ds.learners.values() {
            let seq: Vec<Slot<Step>> = t.merged.iter().map(|&s| Slot::Item(s)).collect();
            let s = hybrid_sample(&seq, &table, &config, &mut rng).stats();
            n += s.kept + s.flips + s.replacements;
            flips += s.flips;
            replaced += s.replacements;
        }
    }
    // Five binomial standard deviations either side.
    let check = |count: usize, p: f64| {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((count as f64 - n as f64 * p).abs() < 5.0 * sd, "{count} of {n} vs p={p}");
    };
    check(flips, 0.15);
    check(replaced, 0.40);
}

#[test]
fn tiny_flip_threshold_rarely_flips() {
    let ds = random_dataset(6, 200, 12, 3);
    let table = DifficultyTable::build(&ds);
    let config = NegativeConfig { theta1: 0.001, theta2: 0.001 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut n, mut flips) = (0usize, 0usize);
    for _ in 0..20 {
        for t in ds.learners.values() {
            let seq: Vec<Slot<Step>> = t.merged.iter().map(|&s| Slot::Item(s)).collect();
            let s = hybrid_sample(&seq, &table, &config, &mut rng).stats();
            assert_eq!(s.replacements, 0);
            n += s.kept + s.flips;
            flips += s.flips;
        }
    }
    let mean = n as f64 * 0.001;
    assert!((flips as f64) < mean + 5.0 * mean.sqrt() + 1.0, "{flips} flips in {n}");
}
