//! Command bodies. Each returns the process exit code.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use umr_core::datamodel::{
    load_corpus, load_queries, read_enhanced, write_enhanced, Benchmark, EnhancedStore,
    TaskRegistry,
};
use umr_core::embed::{embed_document, Embedding, TwoTowerModel};
use umr_core::enhance::{
    enhance_documents, enhance_queries, DispatchOutcome, DispatchSummary, EnhancementCache,
    HttpGateway, VlmGateway,
};
use umr_core::eval::experiment::train_for_mode;
use umr_core::eval::{
    compare_reports, render_delta, render_report, run_eval, RecallReport, ReportFormat, RunConfig,
};
use umr_core::index::VectorIndex;
use umr_core::synth::{
    emit_benchmark, generate_world, serve_mock_with, AnswerFile, MockVlm, ServeOptions,
};

use crate::config::PipelineConfig;
use crate::{
    Cli, Command, EmbedArgs, EnhanceArgs, EvalArgs, FormatArg, IndexArgs, ReportArgs, SideArg,
    SynthCommand, SynthGenArgs, SynthServeArgs, TrainArgs,
};

pub const TOKEN_ENV: &str = "UMR_GATEWAY_TOKEN";

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(SynthCommand::Gen(a)) => synth_gen(a, &mut cfg),
        Command::Synth(SynthCommand::Serve(a)) => synth_serve(a),
        Command::Enhance(a) => enhance(a, &mut cfg),
        Command::Train(a) => train(a, &mut cfg),
        Command::Embed(a) => embed(a, &mut cfg),
        Command::Index(a) => index(a, &cfg),
        Command::Eval(a) => eval(a, &mut cfg),
        Command::Report(a) => report(a),
    }
}

/// Fails with a message naming the command that produces `path`.
fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "{what} {} not found; produce it with `{producer}`",
            path.display()
        );
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
}

fn synth_gen(a: SynthGenArgs, cfg: &mut PipelineConfig) -> Result<ExitCode> {
    let s = &mut cfg.synth;
    s.seed = a.seed.unwrap_or(s.seed);
    s.n_entities = a.n_entities.unwrap_or(s.n_entities);
    s.distractors_per_entity = a.distractors.unwrap_or(s.distractors_per_entity);
    s.caption_noise = a.caption_noise.unwrap_or(s.caption_noise);
    s.deixis_rate = a.deixis_rate.unwrap_or(s.deixis_rate);
    let world = generate_world(&cfg.synth)?;
    ensure_dir(&a.out)?;
    let manifest = emit_benchmark(&world, &a.out)?;
    cfg.data.manifest = Some(a.out.join("manifest.json"));
    cfg.write_lock(&a.out)?;
    println!("{}", a.out.join("manifest.json").display());
    for (k, v) in &manifest.counts {
        log::info!("{k}: {v}");
    }
    Ok(ExitCode::SUCCESS)
}

fn synth_serve(a: SynthServeArgs) -> Result<ExitCode> {
    require(&a.answers, "answer file", "umr synth gen")?;
    let mock = MockVlm::new(AnswerFile::load(&a.answers)?);
    let server = serve_mock_with(
        mock,
        &a.bind,
        ServeOptions {
            fail_first: a.fail_first,
        },
    )?;
    println!("{}", server.endpoint());
    std::io::stdout().flush()?;
    server.wait();
    Ok(ExitCode::SUCCESS)
}

fn is_manifest(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn enhance(a: EnhanceArgs, cfg: &mut PipelineConfig) -> Result<ExitCode> {
    if let Some(e) = &a.endpoint {
        cfg.gateway.endpoint_url = e.clone();
    }
    if let Some(n) = a.max_in_flight {
        cfg.gateway.max_in_flight = n;
    }
    if let Some(n) = a.max_retries {
        cfg.gateway.max_retries = n;
    }
    if a.cache_dir.is_some() {
        cfg.data.cache_dir = a.cache_dir.clone();
    }
    cfg.gateway.validate()?;
    require(&a.input, "input", "umr synth gen")?;

    let gateway: Box<dyn VlmGateway> = match &a.mock_world {
        Some(p) => {
            require(p, "answer file", "umr synth gen")?;
            cfg.gateway.model_id = "mock-vlm".into();
            Box::new(MockVlm::new(AnswerFile::load(p)?))
        }
        None => Box::new(HttpGateway::new(
            &cfg.gateway,
            std::env::var(TOKEN_ENV).ok(),
        )?),
    };
    let cache = match &cfg.data.cache_dir {
        Some(d) => EnhancementCache::with_dir(d)?,
        None => EnhancementCache::in_memory(),
    };

    let outcomes: Vec<DispatchOutcome> = match a.side {
        SideArg::Corpus => {
            let docs = if is_manifest(&a.input) {
                Benchmark::load(&a.input)?
                    .all_documents()
                    .into_iter()
                    .cloned()
                    .collect()
            } else {
                load_corpus(&a.input)?
            };
            enhance_documents(&docs, gateway.as_ref(), &cache, &cfg.gateway)?
        }
        SideArg::Queries => {
            let queries = if is_manifest(&a.input) {
                let b = Benchmark::load(&a.input)?;
                b.train.into_iter().chain(b.test).collect()
            } else {
                let tasks = a
                    .tasks
                    .as_deref()
                    .ok_or_else(|| anyhow!("--tasks is required when --in is a query file"))?;
                load_queries(&a.input, &TaskRegistry::load(tasks)?)?
            };
            enhance_queries(&queries, gateway.as_ref(), &cache, &cfg.gateway)?
        }
    };

    let summary = DispatchSummary::from_outcomes(&outcomes);
    for o in outcomes.iter().filter(|o| o.error.is_some()) {
        log::warn!(
            "{}: fell back to original ({})",
            o.record.source_id,
            o.error.as_deref().unwrap_or_default()
        );
    }
    ensure_dir(&a.out)?;
    let name = match a.side {
        SideArg::Corpus => "enhanced_corpus.jsonl",
        SideArg::Queries => "enhanced_queries.jsonl",
    };
    let records: Vec<_> = outcomes.into_iter().map(|o| o.record).collect();
    write_enhanced(&records, a.out.join(name))?;
    let summary_json = serde_json::json!({
        "total": summary.total,
        "identity": summary.identity,
        "enhanced": summary.enhanced,
        "cached": summary.cached,
        "fallback": summary.fallback,
    });
    write_json(&a.out.join("summary.json"), &summary_json)?;
    match a.side {
        SideArg::Corpus => cfg.data.enhanced_corpus = Some(a.out.join(name)),
        SideArg::Queries => cfg.data.enhanced_queries = Some(a.out.join(name)),
    }
    cfg.write_lock(&a.out)?;
    println!(
        "enhanced={} cached={} fallback={} identity={} total={}",
        summary.enhanced, summary.cached, summary.fallback, summary.identity, summary.total
    );
    let needing_gateway = summary.total - summary.identity;
    if needing_gateway > 0 && summary.fallback == needing_gateway {
        eprintln!("error: every gateway call failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn apply_data(cfg: &mut PipelineConfig, d: &crate::DataArgs) {
    if d.data.is_some() {
        cfg.data.manifest = d.data.clone();
    }
    if d.enhanced_corpus.is_some() {
        cfg.data.enhanced_corpus = d.enhanced_corpus.clone();
    }
    if d.enhanced_queries.is_some() {
        cfg.data.enhanced_queries = d.enhanced_queries.clone();
    }
}

fn load_bench(cfg: &PipelineConfig) -> Result<Benchmark> {
    let m = cfg
        .data
        .manifest
        .as_deref()
        .ok_or_else(|| anyhow!("no benchmark given; pass --data <manifest.json>"))?;
    require(m, "benchmark manifest", "umr synth gen")?;
    Ok(Benchmark::load(m)?)
}

/// Loads whichever enhanced files the flags call for.
fn load_store(cfg: &PipelineConfig, queries: bool, corpus: bool) -> Result<EnhancedStore> {
    let mut store = EnhancedStore::default();
    for (wanted, path, side) in [
        (corpus, &cfg.data.enhanced_corpus, "corpus"),
        (queries, &cfg.data.enhanced_queries, "queries"),
    ] {
        if !wanted {
            continue;
        }
        let p = path.as_deref().ok_or_else(|| {
            anyhow!(
                "mode needs enhanced {side}; pass --enhanced-{side} (from `umr enhance {side}`)"
            )
        })?;
        require(
            p,
            &format!("enhanced {side} file"),
            &format!("umr enhance {side}"),
        )?;
        store.extend(read_enhanced(p)?);
    }
    Ok(store)
}

fn train(a: TrainArgs, cfg: &mut PipelineConfig) -> Result<ExitCode> {
    apply_data(cfg, &a.data);
    let t = &mut cfg.train;
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.seed = a.seed.unwrap_or(t.seed);
    t.temperature = a.temperature.unwrap_or(t.temperature);
    t.hard_negatives_per_query = a.hard_negatives.unwrap_or(t.hard_negatives_per_query);
    t.symmetric |= a.symmetric;
    if let Some(m) = a.mode {
        cfg.eval.mode = m.into();
    }
    let mode = cfg.eval.mode;
    let [tq, tc, _, _] = mode.flags();
    let bench = load_bench(cfg)?;
    let store = load_store(cfg, tq, tc)?;
    let (model, log) = train_for_mode(&bench, &store, &cfg.embedder, &cfg.train, mode)?;
    ensure_dir(&a.out)?;
    model.save(a.out.join("model.json"))?;
    write_json(&a.out.join("train_log.json"), &log)?;
    cfg.write_lock(&a.out)?;
    println!("{}", a.out.join("model.json").display());
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &Path) -> Result<TwoTowerModel> {
    require(path, "model checkpoint", "umr train")?;
    Ok(TwoTowerModel::load(path)?)
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

fn embed(a: EmbedArgs, cfg: &mut PipelineConfig) -> Result<ExitCode> {
    apply_data(cfg, &a.data);
    let bench = load_bench(cfg)?;
    let model = load_model(&a.model)?;
    let docs = bench
        .pools
        .get(&a.pool)
        .ok_or_else(|| anyhow!("unknown pool {}", a.pool))?;
    let store = load_store(cfg, false, a.enhanced)?;
    ensure_dir(&a.out)?;
    let path = a.out.join(format!("embeddings_{}.jsonl", a.pool));
    let file =
        fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let rec = if a.enhanced {
            Some(
                store
                    .corpus
                    .get(&d.did)
                    .ok_or_else(|| anyhow!("no enhanced record for {}", d.did))?,
            )
        } else {
            None
        };
        let z = embed_document(d, rec, &model)?;
        serde_json::to_writer(
            &mut w,
            &EmbeddingLine {
                id: d.did.clone(),
                vector: z.0,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    cfg.write_lock(&a.out)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn index(a: IndexArgs, cfg: &PipelineConfig) -> Result<ExitCode> {
    require(&a.embeddings, "embeddings file", "umr embed")?;
    let file = fs::File::open(&a.embeddings)?;
    let mut vectors = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: EmbeddingLine = serde_json::from_str(&line)?;
        vectors.push((e.id, Embedding(e.vector)));
    }
    let idx = VectorIndex::build(vectors)?;
    ensure_dir(&a.out)?;
    let path = a.out.join("index.bin");
    idx.save(&path)?;
    cfg.write_lock(&a.out)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs, cfg: &mut PipelineConfig) -> Result<ExitCode> {
    apply_data(cfg, &a.data);
    if let Some(m) = a.mode {
        cfg.eval.mode = m.into();
    }
    cfg.eval.seed = a.seed.unwrap_or(cfg.eval.seed);
    let bench = load_bench(cfg)?;
    let model = load_model(&a.model)?;
    let mut run = RunConfig::for_mode(cfg.eval.mode, cfg.eval.seed);
    run.model_checkpoint = Some(a.model.clone());
    let store = load_store(cfg, run.eval_enhanced_queries, run.eval_enhanced_corpus)?;
    let report = run_eval(&bench, &store, &model, &run)?;
    report.validate()?;
    ensure_dir(&a.out)?;
    report.save_json(a.out.join("report.json"))?;
    let csv = render_report(&report, ReportFormat::Csv);
    fs::write(a.out.join("report.csv"), &csv)?;
    fs::write(
        a.out.join("report.md"),
        render_report(&report, ReportFormat::Markdown),
    )?;
    cfg.write_lock(&a.out)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn load_report(path: &PathBuf) -> Result<RecallReport> {
    require(path, "report", "umr eval")?;
    Ok(RecallReport::load_json(path)?)
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let format = match a.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Markdown => ReportFormat::Markdown,
    };
    let r = load_report(&a.report)?;
    let text = match &a.against {
        Some(base) => {
            let base = load_report(base)?;
            let delta = compare_reports(&base, &r)?;
            let names: Vec<String> = r.tasks.iter().map(|t| t.name.clone()).collect();
            render_delta(&delta, &names, format)
        }
        None => render_report(&r, format),
    };
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}
