//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umr_core::datamodel::{Benchmark, EnhancedStore};
use umr_core::embed::{infonce_loss, Embedding, Matrix, TrainConfig, TwoTowerModel};
use umr_core::enhance::{enhance_benchmark, EnhancementCache, VlmGatewayConfig};
use umr_core::eval::experiment::{run_modes, ModeRun};
use umr_core::eval::{AblationMode, EmbedderConfig};
use umr_core::synth::{build_benchmark, generate_world, MockVlm, SynthBenchmark, SynthConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Embedding::normalized(v)
}

/// Scores every row independently and sorts by (score desc, id asc).
pub fn brute_force_topk(
    rows: &[(String, Embedding)],
    query: &[f64],
    k: usize,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, v)| {
            let mut s = 0.0;
            for i in 0..query.len() {
                s += query[i] * v[i];
            }
            (id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    scored.truncate(k);
    scored
}

/// Brute-force hard negatives: rank everything, drop positives, keep `n`.
pub fn brute_force_negatives(
    rows: &[(String, Embedding)],
    query: &[f64],
    positives: &BTreeSet<String>,
    n: usize,
) -> Vec<String> {
    brute_force_topk(rows, query, rows.len())
        .into_iter()
        .map(|(id, _)| id)
        .filter(|id| !positives.contains(id))
        .take(n)
        .collect()
}

/// A model whose weights are dense noise, so every gradient entry matters.
pub fn random_model(seed: u64, dim_in: usize, dim_out: usize, temperature: f64) -> TwoTowerModel {
    let mut r = rng(seed ^ 0x5eed);
    let mut m = TwoTowerModel::init(dim_in, dim_out, temperature, seed).unwrap();
    for w in [&mut m.w_query, &mut m.w_doc] {
        for x in w.data.iter_mut() {
            *x = r.random_range(-1.0..1.0);
        }
    }
    m
}

pub fn random_inputs(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| unit_vector(r, dim).0).collect()
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step `h`. Denominators are floored at `floor`.
pub fn gradient_check(
    model: &TwoTowerModel,
    queries: &[Vec<f64>],
    positives: &[Vec<f64>],
    extra: &[Vec<f64>],
    symmetric: bool,
    h: f64,
    floor: f64,
) -> f64 {
    let analytic = infonce_loss(model, queries, positives, extra, symmetric).unwrap();
    let loss_at = |m: &TwoTowerModel| {
        infonce_loss(m, queries, positives, extra, symmetric)
            .unwrap()
            .loss
    };
    let mut worst: f64 = 0.0;
    for tower in 0..2 {
        let grad: &Matrix = if tower == 0 {
            &analytic.grad_query
        } else {
            &analytic.grad_doc
        };
        for i in 0..grad.data.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let (p, m) = if tower == 0 {
                (&mut plus.w_query, &mut minus.w_query)
            } else {
                (&mut plus.w_doc, &mut minus.w_doc)
            };
            p.data[i] += h;
            m.data[i] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let a = grad.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn acceptance_synth_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_entities: 200,
        distractors_per_entity: 3,
        caption_noise: 0.2,
        seed,
        ..Default::default()
    }
}

pub struct Enhanced {
    pub synth: SynthBenchmark,
    pub bench: Benchmark,
    pub store: EnhancedStore,
    pub mock: MockVlm,
}

/// World, benchmark, and every record enhanced through the in-process mock.
pub fn enhanced_synth(config: &SynthConfig) -> Enhanced {
    let world = generate_world(config).unwrap();
    let synth = build_benchmark(&world).unwrap();
    let bench = synth.to_benchmark();
    let mock = MockVlm::new(synth.answers.clone());
    let (store, summary) = enhance_benchmark(
        &bench,
        &mock,
        &EnhancementCache::in_memory(),
        &VlmGatewayConfig::default(),
    )
    .unwrap();
    assert_eq!(summary.fallback, 0);
    Enhanced {
        synth,
        bench,
        store,
        mock,
    }
}

/// All five modes for one synthetic seed with default training settings.
pub fn ablation_runs(seed: u64, hard_negatives: usize) -> Vec<ModeRun> {
    let e = enhanced_synth(&acceptance_synth_config(seed));
    let config = TrainConfig {
        seed,
        hard_negatives_per_query: hard_negatives,
        ..Default::default()
    };
    run_modes(
        &e.bench,
        &e.store,
        &EmbedderConfig::default(),
        &config,
        &AblationMode::ALL,
    )
    .unwrap()
}

pub fn macro_r5(runs: &[ModeRun], mode: AblationMode) -> f64 {
    runs.iter()
        .find(|r| r.mode == mode)
        .and_then(|r| r.report.macro_at(5))
        .unwrap()
}
