//! Train-then-evaluate runs for each ablation mode.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{run_eval, AblationMode, RecallReport, RunConfig};
use crate::datamodel::{Benchmark, EnhancedRecord, EnhancedStore};
use crate::embed::{
    featurize_document, featurize_query, train, NegativePools, TokenHasher, TrainConfig, TrainLog,
    TrainingPair, TwoTowerModel,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub dim_in: usize,
    pub dim_out: usize,
    /// Seeds both the token hasher and the weight initialization.
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim_in: 256,
            dim_out: 128,
            seed: 42,
        }
    }
}

impl EmbedderConfig {
    pub fn init_model(&self, temperature: f64) -> Result<TwoTowerModel> {
        TwoTowerModel::init(self.dim_in, self.dim_out, temperature, self.seed)
    }
}

fn record<'a>(
    store: &'a HashMap<String, EnhancedRecord>,
    id: &str,
    enhanced: bool,
) -> Result<Option<&'a EnhancedRecord>> {
    if !enhanced {
        return Ok(None);
    }
    store
        .get(id)
        .map(Some)
        .ok_or_else(|| Error::MissingEnhanced(vec![id.to_owned()]))
}

/// One pair per (training query, positive) with both sides featurized.
pub fn build_training_pairs(
    bench: &Benchmark,
    store: &EnhancedStore,
    hasher: &TokenHasher,
    enhanced_queries: bool,
    enhanced_corpus: bool,
) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for q in &bench.train {
        let task = bench
            .tasks
            .get(&q.task_id)
            .ok_or_else(|| Error::UnknownTask(q.task_id.clone()))?;
        let pool = bench.pool_for(task);
        let query = featurize_query(q, record(&store.queries, &q.qid, enhanced_queries)?, hasher)?;
        for pos in &q.positives {
            let doc = pool
                .iter()
                .find(|d| &d.did == pos)
                .ok_or_else(|| Error::InvalidRecord {
                    id: q.qid.clone(),
                    message: format!("positive {pos} not in pool {}", task.pool_id),
                })?;
            let positive = featurize_document(
                doc,
                record(&store.corpus, &doc.did, enhanced_corpus)?,
                hasher,
            )?;
            pairs.push(TrainingPair {
                query: query.clone(),
                positive,
                positive_ids: q.positives.clone(),
                pool_id: task.pool_id.clone(),
            });
        }
    }
    Ok(pairs)
}

/// Every pool featurized on the corpus side, for hard-negative mining.
pub fn negative_pools(
    bench: &Benchmark,
    store: &EnhancedStore,
    hasher: &TokenHasher,
    enhanced_corpus: bool,
) -> Result<NegativePools> {
    let mut out = BTreeMap::new();
    for (pool_id, docs) in &bench.pools {
        let featurized = crate::par::try_map(docs, |d| {
            let r = record(&store.corpus, &d.did, enhanced_corpus)?;
            Ok::<_, Error>((d.did.clone(), featurize_document(d, r, hasher)?))
        })?;
        out.insert(pool_id.clone(), featurized);
    }
    Ok(out)
}

/// Trains from the initial model on the mode's training-side data.
pub fn train_for_mode(
    bench: &Benchmark,
    store: &EnhancedStore,
    embedder: &EmbedderConfig,
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<(TwoTowerModel, TrainLog)> {
    let [tq, tc, _, _] = mode.flags();
    let init = embedder.init_model(config.temperature)?;
    let hasher = init.hasher();
    let pairs = build_training_pairs(bench, store, &hasher, tq, tc)?;
    let pools = if config.hard_negatives_per_query > 0 {
        negative_pools(bench, store, &hasher, tc)?
    } else {
        NegativePools::new()
    };
    train(&init, &pairs, &pools, config)
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: AblationMode,
    pub model: TwoTowerModel,
    pub log: TrainLog,
    pub report: RecallReport,
}

/// Trains and evaluates one mode.
pub fn run_mode(
    bench: &Benchmark,
    store: &EnhancedStore,
    embedder: &EmbedderConfig,
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<ModeRun> {
    let (model, log) = train_for_mode(bench, store, embedder, config, mode)?;
    let report = run_eval(
        bench,
        store,
        &model,
        &RunConfig::for_mode(mode, config.seed),
    )?;
    Ok(ModeRun {
        mode,
        model,
        log,
        report,
    })
}

/// Runs several modes, training once per distinct training-side setting.
///
/// Baseline and inference-only share a checkpoint, as do any other modes
/// whose training flags coincide.
pub fn run_modes(
    bench: &Benchmark,
    store: &EnhancedStore,
    embedder: &EmbedderConfig,
    config: &TrainConfig,
    modes: &[AblationMode],
) -> Result<Vec<ModeRun>> {
    let mut trained: HashMap<[bool; 2], (TwoTowerModel, TrainLog)> = HashMap::new();
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let [tq, tc, _, _] = mode.flags();
        let (model, log) = match trained.entry([tq, tc]) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(train_for_mode(bench, store, embedder, config, mode)?),
        };
        let report = run_eval(bench, store, model, &RunConfig::for_mode(mode, config.seed))?;
        out.push(ModeRun {
            mode,
            model: model.clone(),
            log: log.clone(),
            report,
        });
    }
    Ok(out)
}
