//! The nine acceptance criteria, one pass/fail line each.
//!
//! Run with `cargo test -p umr-core --test acceptance -- --nocapture` to see
//! the report.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use umr_core::datamodel::{Benchmark, Category, Modality, Side};
use umr_core::embed::{sample_hard_negatives, Embedding, TrainConfig};
use umr_core::enhance::prompts::QUERY_SLOT;
use umr_core::enhance::{
    build_corpus_caption_prompt, build_modification_prompt, build_qa_rewrite_prompt,
    build_query_caption_prompt, enhance_benchmark, enhance_queries, ChatRequest, EnhancementCache,
    HttpGateway, PromptMessage, VlmGatewayConfig, VISUAL_CONTEXT_SEPARATOR,
};
use umr_core::eval::experiment::{run_modes, train_for_mode};
use umr_core::eval::{
    mean_recall, recall_at_k, render_report, AblationMode, EmbedderConfig, ReportFormat,
};
use umr_core::index::{SearchResult, VectorIndex};
use umr_core::synth::{generate_world, serve_mock, AnswerFile, MockVlm, SynthConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!(
            "took {:.2}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        )
    })
}

// 1. Exact search against a brute-force oracle.

fn search_exactness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut checked = 0usize;
    for instance in 0..100 {
        let n = r.random_range(1..=2000);
        let dim = r.random_range(2..=24);
        let k = r.random_range(1..=50);
        // Coarse coordinates and duplicated rows make exact ties common.
        let coarse = instance % 2 == 0;
        let mut rows: Vec<(String, Embedding)> = Vec::with_capacity(n);
        for i in 0..n {
            let v = if i > 0 && r.random_bool(0.1) {
                rows[r.random_range(0..i)].1.clone()
            } else if coarse {
                Embedding::normalized((0..dim).map(|_| r.random_range(-2i32..=2) as f64).collect())
            } else {
                unit_vector(&mut r, dim)
            };
            rows.push((
                format!("d{:05}", r.random_range(0..1_000_000) * 10 + i % 10),
                v,
            ));
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows.dedup_by(|a, b| a.0 == b.0);
        rows.shuffle(&mut r);
        let index = VectorIndex::build(rows.clone()).map_err(|e| e.to_string())?;
        let queries: Vec<Embedding> = (0..5).map(|_| unit_vector(&mut r, dim)).collect();
        let got = index.batch_search(&queries, k).map_err(|e| e.to_string())?;
        for (q, res) in queries.iter().zip(&got) {
            let want = brute_force_topk(&rows, q, k);
            let ids_got: Vec<&str> = res.ids().collect();
            let ids_want: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
            ensure(ids_got == ids_want, || {
                format!("instance {instance}: id lists differ")
            })?;
            for ((_, a), (_, b)) in res.entries.iter().zip(&want) {
                ensure((a - b).abs() <= 1e-12, || {
                    format!("instance {instance}: score {a} vs {b}")
                })?;
            }
            checked += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{checked} queries over 100 instances"))
}

// 2. Analytic gradients against central differences.

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = rng(100 + seed);
        let (din, dout) = (10, 6);
        let model = random_model(seed, din, dout, 0.07);
        let b = 4;
        let queries = random_inputs(&mut r, b, din);
        let positives = random_inputs(&mut r, b, din);
        let extra = if seed % 2 == 0 {
            random_inputs(&mut r, 3, din)
        } else {
            Vec::new()
        };
        let symmetric = seed % 3 == 0;
        let err = gradient_check(&model, &queries, &positives, &extra, symmetric, 1e-5, 1e-6);
        worst = worst.max(err);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("max relative error {worst:.2e} over 10 seeds"))
}

// 3. Prompt bytes and the wire shape of modification requests.

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/prompts")
}

fn golden(name: &str, query: Option<&str>) -> Result<String, String> {
    let path = golden_dir().join(name);
    let raw = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(match query {
        Some(q) => raw.replace(QUERY_SLOT, q),
        None => raw,
    })
}

fn prompt_fidelity() -> Outcome {
    let query = "What is the name of this animal?";
    let edit = "Make it shiny silver and remove the lemon.";
    let cases: Vec<(&str, PromptMessage, String)> = vec![
        (
            "corpus_caption",
            build_corpus_caption_prompt("img/a.png").map_err(|e| e.to_string())?,
            golden("corpus_caption.txt", None)?,
        ),
        (
            "query_caption",
            build_query_caption_prompt("img/a.png").map_err(|e| e.to_string())?,
            golden("query_caption.txt", None)?,
        ),
        (
            "qa_rewrite",
            build_qa_rewrite_prompt(query, "img/a.png").map_err(|e| e.to_string())?,
            golden("qa_rewrite.txt", Some(query))?,
        ),
        (
            "modification",
            build_modification_prompt(edit).map_err(|e| e.to_string())?,
            golden("modification.txt", Some(edit))?,
        ),
    ];
    for (name, prompt, want) in &cases {
        ensure(prompt.rendered_text() == *want, || {
            format!("{name} differs from golden")
        })?;
    }

    // Through a real socket: modification requests must carry no image.
    let e = enhanced_synth(&SynthConfig {
        n_entities: 16,
        distractors_per_entity: 1,
        seed: 3,
        ..Default::default()
    });
    let server = serve_mock(e.mock.clone(), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let config = VlmGatewayConfig {
        endpoint_url: server.endpoint(),
        ..Default::default()
    };
    let http = HttpGateway::new(&config, None).map_err(|e| e.to_string())?;
    let queries: Vec<_> = e.bench.test.iter().chain(&e.bench.train).cloned().collect();
    let outcomes = enhance_queries(&queries, &http, &EnhancementCache::in_memory(), &config)
        .map_err(|e| e.to_string())?;
    ensure(outcomes.iter().all(|o| !o.record.fallback), || {
        "a query fell back".into()
    })?;
    let log = server.requests();
    server.shutdown();
    let modification_text = golden("modification.txt", Some(""))?;
    let head = modification_text.lines().next().unwrap_or_default();
    let mods: Vec<&ChatRequest> = log.iter().filter(|r| r.text().starts_with(head)).collect();
    ensure(!mods.is_empty(), || {
        "no modification requests captured".into()
    })?;
    ensure(mods.iter().all(|r| r.image_parts() == 0), || {
        "a modification request carried an image".into()
    })?;
    Ok(format!(
        "4 templates byte-identical; {} modification requests on the wire, 0 image parts",
        mods.len()
    ))
}

// 4. Category I passes through; Category III appends the caption.

fn routing_identity() -> Outcome {
    let e = enhanced_synth(&SynthConfig {
        n_entities: 40,
        distractors_per_entity: 2,
        seed: 4,
        ..Default::default()
    });
    let config = VlmGatewayConfig::default();
    let (mut cat1, mut cat3, mut text_queries) = (0, 0, 0);
    for d in e.bench.all_documents() {
        let rec = &e.store.corpus[&d.did];
        match d.modality {
            Modality::Text => {
                ensure(rec.category == Category::I, || {
                    format!("{} not category I", d.did)
                })?;
                ensure(
                    rec.enhanced_text.as_bytes() == d.text.as_deref().unwrap().as_bytes(),
                    || format!("{} changed", d.did),
                )?;
                cat1 += 1;
            }
            Modality::ImageText => {
                let prompt = build_corpus_caption_prompt(d.image_ref.as_deref().unwrap())
                    .map_err(|e| e.to_string())?;
                let caption = e
                    .mock
                    .reply(&ChatRequest::from_prompt(&prompt, &config))
                    .map_err(|e| e.to_string())?;
                let want = format!(
                    "{}{VISUAL_CONTEXT_SEPARATOR}{}",
                    d.text.as_deref().unwrap(),
                    caption.trim()
                );
                ensure(rec.category == Category::III, || {
                    format!("{} not category III", d.did)
                })?;
                ensure(rec.enhanced_text == want, || {
                    format!("{} append rule broken", d.did)
                })?;
                cat3 += 1;
            }
            Modality::Image => {}
        }
    }
    for q in e.bench.train.iter().chain(&e.bench.test) {
        if q.modality == Modality::Text {
            let rec = &e.store.queries[&q.qid];
            ensure(rec.side == Side::QuerySide, || {
                format!("{} wrong side", q.qid)
            })?;
            ensure(
                rec.enhanced_text.as_bytes() == q.text.as_deref().unwrap().as_bytes(),
                || format!("{} changed", q.qid),
            )?;
            text_queries += 1;
        }
    }
    ensure(cat1 > 0 && cat3 > 0 && text_queries > 0, || {
        "fixture lacks a category".into()
    })?;
    Ok(format!(
        "{cat1} category-I docs and {text_queries} text queries unchanged, {cat3} category-III appends"
    ))
}

// 5. Recall on a hand-built fixture, and monotonicity in k.

fn ranking(ids: &[&str]) -> SearchResult {
    SearchResult {
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.01))
            .collect(),
    }
}

fn recall_correctness() -> Outcome {
    let docs: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
    let d: Vec<&str> = docs.iter().map(String::as_str).collect();
    // Positive ranks: 1, 3, 5, 7, none. Hand values: R@1 .2, R@5 .6, R@10 .8.
    let cases = [
        (ranking(&d), vec!["d0"]),
        (
            ranking(&[d[4], d[5], d[1], d[6], d[7], d[8], d[9], d[0], d[2], d[3]]),
            vec!["d1", "d3"],
        ),
        (
            ranking(&[d[9], d[8], d[7], d[6], d[2], d[5], d[4], d[3], d[1], d[0]]),
            vec!["d2"],
        ),
        (
            ranking(&[d[0], d[1], d[2], d[4], d[5], d[6], d[3], d[7], d[8], d[9]]),
            vec!["d3"],
        ),
        (ranking(&d[..9]), vec!["d9"]),
    ];
    let positives: Vec<BTreeSet<String>> = cases
        .iter()
        .map(|(_, p)| p.iter().map(|s| s.to_string()).collect())
        .collect();
    let rankings: Vec<SearchResult> = cases.iter().map(|(r, _)| r.clone()).collect();
    let refs: Vec<&BTreeSet<String>> = positives.iter().collect();
    let got = mean_recall(&rankings, &refs, &[1, 5, 10]).map_err(|e| e.to_string())?;
    for (k, want) in [(1, 0.2), (5, 0.6), (10, 0.8)] {
        ensure((got[&k] - want).abs() < 1e-12, || {
            format!("R@{k} = {} want {want}", got[&k])
        })?;
    }
    let per_query: Vec<f64> = rankings
        .iter()
        .zip(&positives)
        .map(|(r, p)| recall_at_k(r, p, 5).unwrap())
        .collect();
    ensure(per_query == [1.0, 1.0, 1.0, 0.0, 0.0], || {
        format!("per-query R@5 {per_query:?}")
    })?;

    let mut r = rng(5);
    for trial in 0..1000 {
        let n = r.random_range(1..60);
        let mut ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        ids.shuffle(&mut r);
        let positives: BTreeSet<String> = (0..r.random_range(1..=3))
            .map(|_| format!("c{}", r.random_range(0..n + 5)))
            .collect();
        let res = ranking(&ids.iter().map(String::as_str).collect::<Vec<_>>());
        let mut prev = 0.0;
        for k in 1..=n + 2 {
            let v = recall_at_k(&res, &positives, k).map_err(|e| e.to_string())?;
            ensure(v >= prev, || format!("trial {trial}: recall fell at k={k}"))?;
            prev = v;
        }
    }
    Ok("macro R@1/5/10 = 0.2/0.6/0.8; monotone on 1000 random rankings".into())
}

// 6 and 7. Directional ablation results over five seeds.

struct SeedScores {
    baseline: f64,
    q_only: f64,
    c_only: f64,
    full: f64,
    inference_only: f64,
}

fn ablation_scores() -> Result<(Vec<SeedScores>, Duration), String> {
    let start = Instant::now();
    let scores = (0..5u64)
        .map(|seed| {
            let runs = ablation_runs(seed, 0);
            SeedScores {
                baseline: macro_r5(&runs, AblationMode::Baseline),
                q_only: macro_r5(&runs, AblationMode::QOnly),
                c_only: macro_r5(&runs, AblationMode::COnly),
                full: macro_r5(&runs, AblationMode::Full),
                inference_only: macro_r5(&runs, AblationMode::InferenceOnly),
            }
        })
        .collect();
    Ok((scores, start.elapsed()))
}

fn table_two_ordering(scores: &[SeedScores], elapsed: Duration) -> Outcome {
    let count = |f: &dyn Fn(&SeedScores) -> bool| scores.iter().filter(|s| f(s)).count();
    let full = count(&|s| s.full > s.baseline);
    let q = count(&|s| s.q_only >= s.baseline);
    let c = count(&|s| s.c_only >= s.baseline);
    let mean =
        |f: &dyn Fn(&SeedScores) -> f64| scores.iter().map(f).sum::<f64>() / scores.len() as f64;
    let detail = format!(
        "Full>Baseline {full}/5, Q-Only>=Baseline {q}/5, C-Only>=Baseline {c}/5; mean R@5 baseline {:.3} q-only {:.3} c-only {:.3} full {:.3}; {:.1}s",
        mean(&|s| s.baseline),
        mean(&|s| s.q_only),
        mean(&|s| s.c_only),
        mean(&|s| s.full),
        elapsed.as_secs_f64()
    );
    ensure(full >= 4 && q >= 3 && c >= 3, || detail.clone())?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(detail)
}

fn distribution_shift(scores: &[SeedScores]) -> Outcome {
    let below = scores.iter().filter(|s| s.inference_only < s.full).count();
    let detail = format!(
        "Inference-Only<Full {below}/5; per seed {}",
        scores
            .iter()
            .map(|s| format!("{:.3}/{:.3}", s.inference_only, s.full))
            .collect::<Vec<_>>()
            .join(" ")
    );
    ensure(below >= 4, || detail.clone())?;
    Ok(detail)
}

// 8. Byte-identical reports across repeated runs.

fn pipeline_csv(dir: &Path) -> Result<String, String> {
    let err = |e: umr_core::Error| e.to_string();
    let world = generate_world(&SynthConfig {
        n_entities: 80,
        distractors_per_entity: 3,
        caption_noise: 0.2,
        seed: 8,
        ..Default::default()
    })
    .map_err(err)?;
    umr_core::synth::emit_benchmark(&world, dir).map_err(err)?;
    let bench = Benchmark::load(dir.join("manifest.json")).map_err(err)?;
    let mock = MockVlm::new(AnswerFile::load(dir.join("answers.json")).map_err(err)?);
    let cache = EnhancementCache::with_dir(dir.join("cache")).map_err(err)?;
    let (store, _) =
        enhance_benchmark(&bench, &mock, &cache, &VlmGatewayConfig::default()).map_err(err)?;
    let config = TrainConfig {
        seed: 8,
        ..Default::default()
    };
    let runs = run_modes(
        &bench,
        &store,
        &EmbedderConfig::default(),
        &config,
        &AblationMode::ALL,
    )
    .map_err(err)?;
    Ok(runs
        .iter()
        .map(|r| render_report(&r.report, ReportFormat::Csv))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_csv(a.path())?;
    let second = pipeline_csv(b.path())?;
    ensure(first.as_bytes() == second.as_bytes(), || {
        "CSV reports differ".into()
    })?;
    for name in [
        "answers.json",
        "tasks.json",
        "test_queries.jsonl",
        "pool_images.jsonl",
    ] {
        let x = fs::read(a.path().join(name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.path().join(name)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{name} differs"))?;
    }
    Ok(format!(
        "5 mode reports, {} CSV bytes, identical",
        first.len()
    ))
}

// 9. Hard negatives.

fn hard_negatives() -> Outcome {
    let e = enhanced_synth(&acceptance_synth_config(9));
    let embedder = EmbedderConfig::default();
    let plain = TrainConfig {
        seed: 9,
        ..Default::default()
    };
    let with_hn = TrainConfig {
        hard_negatives_per_query: 2,
        ..plain.clone()
    };
    let err = |e: umr_core::Error| e.to_string();
    let (m0, _) =
        train_for_mode(&e.bench, &e.store, &embedder, &plain, AblationMode::Full).map_err(err)?;
    let (m2, log) =
        train_for_mode(&e.bench, &e.store, &embedder, &with_hn, AblationMode::Full).map_err(err)?;
    ensure(log.epoch_losses.len() == with_hn.epochs, || {
        "training did not finish".into()
    })?;
    ensure(log.epoch_losses.iter().all(|l| l.is_finite()), || {
        "non-finite loss".into()
    })?;
    ensure(m0.digest() != m2.digest(), || {
        "hard negatives left the checkpoint unchanged".into()
    })?;

    // Gradient check with two extra negatives per query.
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut r = rng(900 + seed);
        let model = random_model(900 + seed, 8, 5, 0.07);
        let queries = random_inputs(&mut r, 3, 8);
        let positives = random_inputs(&mut r, 3, 8);
        let extra = random_inputs(&mut r, 6, 8);
        worst = worst.max(gradient_check(
            &model,
            &queries,
            &positives,
            &extra,
            seed % 2 == 1,
            1e-5,
            1e-6,
        ));
    }
    ensure(worst < 1e-4, || {
        format!("gradient error {worst:.3e} with extras")
    })?;

    // Sampler against brute force on 50-document fixtures.
    let mut r = rng(99);
    for fixture in 0..50 {
        let dim = 6;
        let mut rows: Vec<(String, Embedding)> = Vec::new();
        for i in 0..50 {
            let v = if i > 0 && r.random_bool(0.2) {
                rows[r.random_range(0..i)].1.clone()
            } else {
                unit_vector(&mut r, dim)
            };
            rows.push((format!("doc{i:02}"), v));
        }
        let index = VectorIndex::build(rows.clone()).map_err(err)?;
        let q = unit_vector(&mut r, dim);
        let top = brute_force_topk(&rows, &q, 5);
        let mut positives: BTreeSet<String> = BTreeSet::new();
        positives.insert(top[r.random_range(0..top.len())].0.clone());
        positives.insert(rows[r.random_range(0..50)].0.clone());
        let n = r.random_range(1..=5);
        let got = sample_hard_negatives(&q, &positives, &index, n).map_err(err)?;
        let want = brute_force_negatives(&rows, &q, &positives, n);
        ensure(got == want, || {
            format!("fixture {fixture}: {got:?} vs {want:?}")
        })?;
    }
    Ok(format!(
        "trained with 2 hard negatives (final loss {:.4}), checkpoint changed, gradient error {worst:.2e}, sampler matches oracle on 50 fixtures",
        log.epoch_losses.last().copied().unwrap_or(f64::NAN)
    ))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("[PASS] {id}. {name} ({secs:.2}s): {detail}"),
        Err(detail) => println!("[FAIL] {id}. {name} ({secs:.2}s): {detail}"),
    }
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let mut results = vec![
        run(1, "search exactness", search_exactness),
        run(2, "gradient correctness", gradient_correctness),
        run(3, "prompt fidelity", prompt_fidelity),
        run(4, "routing identity", routing_identity),
        run(5, "recall metric", recall_correctness),
    ];
    let scores =
        catch_unwind(ablation_scores).unwrap_or_else(|_| Err("ablation run panicked".into()));
    match scores {
        Ok((scores, elapsed)) => {
            results.push(run(6, "ablation ordering", || {
                table_two_ordering(&scores, elapsed)
            }));
            results.push(run(7, "distribution shift", || distribution_shift(&scores)));
        }
        Err(e) => {
            results.push(run(6, "ablation ordering", || Err(e.clone())));
            results.push(run(7, "distribution shift", || Err(e.clone())));
        }
    }
    results.push(run(8, "determinism", determinism));
    results.push(run(9, "hard negatives", hard_negatives));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len(), "acceptance criteria failed");
}
