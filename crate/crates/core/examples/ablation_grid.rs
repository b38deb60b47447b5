//! Prints macro R@5 for every ablation mode over several synthetic seeds.
//!
//! `cargo run --release --example ablation_grid -- [n_seeds] [lr] [epochs] [hard_negatives]`

use std::time::Instant;

use umr_core::embed::TrainConfig;
use umr_core::enhance::{enhance_benchmark, EnhancementCache, VlmGatewayConfig};
use umr_core::eval::experiment::run_modes;
use umr_core::eval::{AblationMode, EmbedderConfig};
use umr_core::synth::{build_benchmark, generate_world, MockVlm, SynthConfig};

fn main() -> umr_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_owned());
    let n_seeds: u64 = arg(0, "5").parse().unwrap();
    let train = TrainConfig {
        learning_rate: arg(1, "0.001").parse().unwrap(),
        epochs: arg(2, "5").parse().unwrap(),
        hard_negatives_per_query: arg(3, "0").parse().unwrap(),
        ..Default::default()
    };
    let start = Instant::now();
    for seed in 0..n_seeds {
        let world = generate_world(&SynthConfig {
            seed,
            ..Default::default()
        })?;
        let synth = build_benchmark(&world)?;
        let bench = synth.to_benchmark();
        let mock = MockVlm::new(synth.answers.clone());
        let (store, _) = enhance_benchmark(
            &bench,
            &mock,
            &EnhancementCache::in_memory(),
            &VlmGatewayConfig::default(),
        )?;
        let runs = run_modes(
            &bench,
            &store,
            &EmbedderConfig::default(),
            &TrainConfig {
                seed,
                ..train.clone()
            },
            &AblationMode::ALL,
        )?;
        let line: Vec<String> = runs
            .iter()
            .map(|r| format!("{}={:.4}", r.mode, r.report.macro_at(5).unwrap()))
            .collect();
        println!("seed {seed}: {}", line.join("  "));
        for r in &runs {
            let per: Vec<String> = r
                .report
                .tasks
                .iter()
                .map(|t| format!("{}={:.2}", t.task_id, t.recall[&5]))
                .collect();
            println!("    {:<15} {}", r.mode.as_str(), per.join(" "));
        }
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
