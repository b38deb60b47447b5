//! Invariants checked over generated inputs.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::brute_force_topk;
use proptest::prelude::*;
use umr_core::datamodel::{Modality, QueryKind, Side};
use umr_core::embed::{infonce_loss, Embedding, TokenHasher, TwoTowerModel};
use umr_core::enhance::{route, Compose};
use umr_core::eval::report::parse_csv;
use umr_core::eval::{
    recall_at_k, render_report, AblationMode, RecallReport, ReportFormat, TaskRecall,
};
use umr_core::index::{SearchResult, VectorIndex};
use umr_core::synth::{build_benchmark, generate_world, SynthConfig};

fn vectors(dim: usize, max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    // Small integer grid: exact ties are frequent.
    prop::collection::vec(prop::collection::vec(-3i32..=3, dim), 1..max_n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| r.into_iter().map(f64::from).collect())
            .collect()
    })
}

fn unit_rows(dim: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| Embedding::normalized(r).0)
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_equals_brute_force(rows in vectors(4, 120), q in prop::collection::vec(-3i32..=3, 4), k in 1usize..40) {
        let rows: Vec<(String, Embedding)> = rows
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("id{:03}", (i * 37) % 1000), Embedding::normalized(v)))
            .collect();
        let q: Vec<f64> = q.into_iter().map(f64::from).collect();
        let index = VectorIndex::build(rows.clone()).unwrap();
        let got = index.search(&q, k).unwrap();
        let want = brute_force_topk(&rows, &q, k);
        prop_assert_eq!(got.entries, want);
    }

    #[test]
    fn batch_and_serial_search_agree(rows in unit_rows(6, 1..80), qs in unit_rows(6, 1..10), k in 1usize..20) {
        let rows: Vec<(String, Embedding)> = rows.into_iter().enumerate().map(|(i, v)| (format!("r{i}"), Embedding(v))).collect();
        let qs: Vec<Embedding> = qs.into_iter().map(Embedding).collect();
        let index = VectorIndex::build(rows).unwrap();
        prop_assert_eq!(index.batch_search(&qs, k).unwrap(), index.batch_search_serial(&qs, k).unwrap());
    }

    #[test]
    fn index_save_load_round_trip(rows in unit_rows(5, 1..50), names in prop::collection::vec("[a-zA-Z0-9_ é東-]{1,12}", 50)) {
        let mut seen = BTreeSet::new();
        let rows: Vec<(String, Embedding)> = rows
            .into_iter()
            .zip(names)
            .filter(|(_, n)| seen.insert(n.clone()))
            .map(|(v, n)| (n, Embedding(v)))
            .collect();
        let index = VectorIndex::build(rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        index.save(&path).unwrap();
        prop_assert_eq!(VectorIndex::load(&path).unwrap(), index);
    }

    #[test]
    fn recall_is_monotone_in_k(perm in Just((0..30).collect::<Vec<usize>>()).prop_shuffle(), pos in prop::collection::btree_set(0usize..35, 1..4)) {
        let ranked = SearchResult {
            entries: perm.iter().map(|i| (format!("c{i}"), 0.0)).collect(),
        };
        let positives: BTreeSet<String> = pos.iter().map(|i| format!("c{i}")).collect();
        let mut prev = 0.0;
        for k in 1..=32 {
            let r = recall_at_k(&ranked, &positives, k).unwrap();
            prop_assert!(r >= prev);
            prop_assert!(r == 0.0 || r == 1.0);
            prev = r;
        }
    }

    #[test]
    fn hash_embed_is_a_bag(words in prop::collection::vec("[a-z]{1,8}", 0..12), seed: u64) {
        let h = TokenHasher::new(seed, 64).unwrap();
        let mut rev = words.clone();
        rev.reverse();
        prop_assert_eq!(h.hash_embed(&words.join(" ")), h.hash_embed(&rev.join(" , ")));
    }

    #[test]
    fn hash_embed_is_unit_or_zero(text in ".{0,60}", seed: u64, dim in 2usize..300) {
        let v = TokenHasher::new(seed, dim).unwrap().hash_embed(&text);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infonce_is_nonnegative(seed in 0u64..1000, b in 1usize..6, n_extra in 0usize..4, symmetric: bool, tau in 0.01f64..2.0) {
        let model = common::random_model(seed, 6, 4, tau);
        let mut r = common::rng(seed);
        let q = common::random_inputs(&mut r, b, 6);
        let p = common::random_inputs(&mut r, b, 6);
        let x = common::random_inputs(&mut r, n_extra, 6);
        let out = infonce_loss(&model, &q, &p, &x, symmetric).unwrap();
        prop_assert!(out.loss >= 0.0 && out.loss.is_finite());
        prop_assert!(out.grad_query.is_finite() && out.grad_doc.is_finite());
    }

    #[test]
    fn temperature_does_not_change_rankings(seed in 0u64..1000, tau in 0.01f64..5.0) {
        let a = common::random_model(seed, 8, 4, 0.07);
        let b = TwoTowerModel { temperature: tau, ..a.clone() };
        let mut r = common::rng(seed);
        let docs = common::random_inputs(&mut r, 20, 8);
        let queries = common::random_inputs(&mut r, 4, 8);
        let rank = |m: &TwoTowerModel| {
            let rows = docs.iter().enumerate().map(|(i, d)| (format!("d{i:02}"), Embedding(m.project_doc(d).unwrap()))).collect();
            let index = VectorIndex::build(rows).unwrap();
            let qs: Vec<Embedding> = queries.iter().map(|q| Embedding(m.project_query(q).unwrap())).collect();
            index.batch_search(&qs, 20).unwrap()
        };
        prop_assert_eq!(rank(&a), rank(&b));
    }

    #[test]
    fn csv_round_trips(
        names in prop::collection::vec("[a-z\",é -]{1,10}", 1..6),
        values in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 6),
        advisory in prop::collection::vec(any::<bool>(), 6),
    ) {
        let tasks: Vec<TaskRecall> = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut v = values[i].clone();
                v.sort_by(f64::total_cmp);
                TaskRecall {
                    task_id: format!("t{i}"),
                    name: n.clone(),
                    advisory: advisory[i],
                    n_queries: 3,
                    recall: [1, 5, 10, 50].into_iter().zip(v).collect::<BTreeMap<_, _>>(),
                }
            })
            .collect();
        let report = RecallReport::new(AblationMode::Full, "m".into(), 0, tasks);
        report.validate().unwrap();
        let parsed = parse_csv(&render_report(&report, ReportFormat::Csv)).unwrap();
        prop_assert_eq!(parsed.len(), report.tasks.len() + 2);
        for (t, (name, vals)) in report.tasks.iter().zip(&parsed) {
            prop_assert_eq!(&t.name, name);
            for (k, v) in report.cutoffs.iter().zip(vals) {
                prop_assert!((t.recall[k] - v.unwrap()).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn text_entries_always_route_to_identity(query_side: bool, kind in prop::sample::select(vec![QueryKind::Plain, QueryKind::QA, QueryKind::Modification])) {
        let side = if query_side { Side::QuerySide } else { Side::CorpusSide };
        let r = route(side, Modality::Text, kind);
        prop_assert_eq!(r.compose, Compose::Identity);
        prop_assert!(r.template.is_none());
        for m in [Modality::Image, Modality::ImageText] {
            prop_assert!(route(side, m, kind).template.is_some());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_benchmarks_are_consistent(seed in 0u64..10_000, n in 4usize..40, distractors in 0usize..4) {
        let world = generate_world(&SynthConfig {
            n_entities: n,
            distractors_per_entity: distractors,
            seed,
            ..Default::default()
        })
        .unwrap();
        world.validate().unwrap();
        let synth = build_benchmark(&world).unwrap();
        let bench = synth.to_benchmark();
        for q in bench.train.iter().chain(&bench.test) {
            q.validate().unwrap();
            let task = bench.tasks.get(&q.task_id).unwrap();
            let pool: BTreeSet<&str> = bench.pool_for(task).iter().map(|d| d.did.as_str()).collect();
            prop_assert!(!q.positives.is_empty());
            prop_assert!(q.positives.iter().all(|p| pool.contains(p.as_str())));
            if let Some(img) = &q.image_ref {
                prop_assert!(synth.answers.images.contains_key(img));
            }
        }
        let train: BTreeSet<&str> = bench.train.iter().map(|q| q.qid.as_str()).collect();
        prop_assert!(bench.test.iter().all(|q| !train.contains(q.qid.as_str())));
    }
}
