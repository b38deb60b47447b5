//! Recall@K evaluation under the ablation regimes.

pub mod experiment;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Benchmark, Document, EnhancedStore, Query, TaskSpec};
use crate::embed::{embed_document, embed_query, Embedding, TwoTowerModel};
use crate::error::{Error, Result};
use crate::index::{SearchResult, VectorIndex};

pub use experiment::{run_mode, EmbedderConfig, ModeRun};
pub use report::{
    compare_reports, render_delta, render_report, DeltaTable, RecallReport, ReportFormat,
    TaskRecall,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    Baseline,
    QOnly,
    COnly,
    Full,
    InferenceOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Baseline,
        AblationMode::QOnly,
        AblationMode::COnly,
        AblationMode::Full,
        AblationMode::InferenceOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Baseline => "baseline",
            AblationMode::QOnly => "q-only",
            AblationMode::COnly => "c-only",
            AblationMode::Full => "full",
            AblationMode::InferenceOnly => "inference-only",
        }
    }

    /// `(train queries, train corpus, eval queries, eval corpus)` enhanced?
    pub fn flags(self) -> [bool; 4] {
        match self {
            AblationMode::Baseline => [false, false, false, false],
            AblationMode::QOnly => [true, false, true, false],
            AblationMode::COnly => [false, true, false, true],
            AblationMode::Full => [true, true, true, true],
            AblationMode::InferenceOnly => [false, false, true, true],
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: AblationMode,
    pub train_enhanced_queries: bool,
    pub train_enhanced_corpus: bool,
    pub eval_enhanced_queries: bool,
    pub eval_enhanced_corpus: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn for_mode(mode: AblationMode, seed: u64) -> Self {
        let [tq, tc, eq, ec] = mode.flags();
        Self {
            mode,
            train_enhanced_queries: tq,
            train_enhanced_corpus: tc,
            eval_enhanced_queries: eq,
            eval_enhanced_corpus: ec,
            model_checkpoint: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let flags = [
            self.train_enhanced_queries,
            self.train_enhanced_corpus,
            self.eval_enhanced_queries,
            self.eval_enhanced_corpus,
        ];
        if flags != self.mode.flags() {
            return Err(Error::Config(format!(
                "flags {flags:?} do not match mode {}",
                self.mode
            )));
        }
        Ok(())
    }
}

/// 1 if any positive is among the first `k` entries, else 0.
pub fn recall_at_k(ranked: &SearchResult, positives: &BTreeSet<String>, k: usize) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Config("recall needs at least one positive".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let hit = ranked.ids().take(k).any(|id| positives.contains(id));
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Mean recall at each cutoff over `(ranking, positives)` pairs.
pub fn mean_recall(
    rankings: &[SearchResult],
    positives: &[&BTreeSet<String>],
    cutoffs: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for &k in cutoffs {
        let mut hits = 0.0;
        for (r, p) in rankings.iter().zip(positives) {
            hits += recall_at_k(r, p, k)?;
        }
        let mean = if rankings.is_empty() {
            0.0
        } else {
            hits / rankings.len() as f64
        };
        out.insert(k, mean);
    }
    Ok(out)
}

fn lookup<'a>(
    store: &'a std::collections::HashMap<String, crate::datamodel::EnhancedRecord>,
    id: &str,
    missing: &mut Vec<String>,
) -> Option<&'a crate::datamodel::EnhancedRecord> {
    let r = store.get(id);
    if r.is_none() {
        missing.push(id.to_owned());
    }
    r
}

/// Embeds a pool, enhanced or original, and builds its index.
pub fn index_pool(
    docs: &[Document],
    store: &EnhancedStore,
    enhanced: bool,
    model: &TwoTowerModel,
) -> Result<VectorIndex> {
    let mut missing = Vec::new();
    let records: Vec<_> = docs
        .iter()
        .map(|d| {
            enhanced
                .then(|| lookup(&store.corpus, &d.did, &mut missing))
                .flatten()
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingEnhanced(missing));
    }
    let pairs: Vec<(&Document, Option<&crate::datamodel::EnhancedRecord>)> =
        docs.iter().zip(records).collect();
    let vectors = crate::par::try_map(&pairs, |(d, r)| {
        Ok::<_, Error>((d.did.clone(), embed_document(d, *r, model)?))
    })?;
    VectorIndex::build(vectors)
}

pub fn embed_queries(
    queries: &[&Query],
    store: &EnhancedStore,
    enhanced: bool,
    model: &TwoTowerModel,
) -> Result<Vec<Embedding>> {
    let mut missing = Vec::new();
    let records: Vec<_> = queries
        .iter()
        .map(|q| {
            enhanced
                .then(|| lookup(&store.queries, &q.qid, &mut missing))
                .flatten()
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingEnhanced(missing));
    }
    let pairs: Vec<_> = queries.iter().zip(records).collect();
    crate::par::try_map(&pairs, |(q, r)| embed_query(q, *r, model))
}

fn eval_task(
    task: &TaskSpec,
    bench: &Benchmark,
    store: &EnhancedStore,
    model: &TwoTowerModel,
    config: &RunConfig,
) -> Result<TaskRecall> {
    let queries: Vec<&Query> = bench
        .test
        .iter()
        .filter(|q| q.task_id == task.task_id)
        .collect();
    let recall = if queries.is_empty() {
        BTreeMap::new()
    } else {
        let index = index_pool(
            bench.pool_for(task),
            store,
            config.eval_enhanced_corpus,
            model,
        )?;
        let vectors = embed_queries(&queries, store, config.eval_enhanced_queries, model)?;
        let rankings = index.batch_search(&vectors, task.max_cutoff())?;
        let positives: Vec<_> = queries.iter().map(|q| &q.positives).collect();
        mean_recall(&rankings, &positives, &task.cutoffs)?
    };
    Ok(TaskRecall {
        task_id: task.task_id.clone(),
        name: task.name.clone(),
        advisory: task.advisory,
        n_queries: queries.len(),
        recall,
    })
}

/// Evaluates every task on the test split. Deterministic in its inputs.
pub fn run_eval(
    bench: &Benchmark,
    store: &EnhancedStore,
    model: &TwoTowerModel,
    config: &RunConfig,
) -> Result<RecallReport> {
    config.validate()?;
    let tasks: Vec<&TaskSpec> = bench.tasks.iter().collect();
    let results = crate::par::try_map(&tasks, |t| eval_task(t, bench, store, model, config))?;
    Ok(RecallReport::new(
        config.mode,
        model.digest(),
        config.seed,
        results,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(ids: &[&str]) -> SearchResult {
        SearchResult {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.01))
                .collect(),
        }
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_hits() {
        let r = ranking(&["a", "b", "c", "d", "e", "f"]);
        assert_eq!(recall_at_k(&r, &set(&["a"]), 1).unwrap(), 1.0);
        assert_eq!(recall_at_k(&r, &set(&["f"]), 5).unwrap(), 0.0);
        assert_eq!(recall_at_k(&r, &set(&["f"]), 6).unwrap(), 1.0);
        assert_eq!(recall_at_k(&r, &set(&["zz"]), 50).unwrap(), 0.0);
        assert!(recall_at_k(&r, &set(&[]), 1).is_err());
    }

    #[test]
    fn mode_flags() {
        assert_eq!(AblationMode::Baseline.flags(), [false; 4]);
        assert_eq!(AblationMode::QOnly.flags(), [true, false, true, false]);
        assert_eq!(AblationMode::COnly.flags(), [false, true, false, true]);
        assert_eq!(AblationMode::Full.flags(), [true; 4]);
        assert_eq!(
            AblationMode::InferenceOnly.flags(),
            [false, false, true, true]
        );
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
            RunConfig::for_mode(m, 0).validate().unwrap();
        }
        let mut bad = RunConfig::for_mode(AblationMode::Full, 0);
        bad.eval_enhanced_corpus = false;
        assert!(bad.validate().is_err());
    }
}
