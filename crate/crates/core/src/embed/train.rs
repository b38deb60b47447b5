//! Deterministic contrastive training of the two-tower model.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::infonce_loss;
use super::model::{Matrix, TwoTowerModel};
use super::Embedding;
use crate::error::{Error, Result};
use crate::index::VectorIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub temperature: f64,
    pub hard_negatives_per_query: usize,
    pub optimizer: Optimizer,
    /// Add the document-to-query direction to the loss.
    pub symmetric: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 5,
            seed: 0,
            temperature: 0.07,
            hard_negatives_per_query: 0,
            optimizer: Optimizer::adam(),
            symmetric: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One `(q̃, d̃⁺)` pair in hashed input space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    /// Documents that must never be used as this query's negatives.
    pub positive_ids: BTreeSet<String>,
    /// Candidate pool hard negatives are drawn from.
    pub pool_id: String,
}

/// Hard-negative candidates per pool: `pool_id -> [(did, hashed document)]`.
pub type NegativePools = BTreeMap<String, Vec<(String, Vec<f64>)>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

struct Stepper {
    optimizer: Optimizer,
    lr: f64,
    t: i32,
    state: [AdamState; 2],
}

impl Stepper {
    fn new(optimizer: Optimizer, lr: f64, size: usize) -> Self {
        let zero = || AdamState {
            m: vec![0.0; size],
            v: vec![0.0; size],
        };
        Self {
            optimizer,
            lr,
            t: 0,
            state: [zero(), zero()],
        }
    }

    fn step(&mut self, model: &mut TwoTowerModel, grads: [&Matrix; 2]) {
        self.t += 1;
        let towers = [&mut model.w_query, &mut model.w_doc];
        for ((w, g), st) in towers.into_iter().zip(grads).zip(&mut self.state) {
            match self.optimizer {
                Optimizer::Sgd => {
                    for (wi, gi) in w.data.iter_mut().zip(&g.data) {
                        *wi -= self.lr * gi;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    for (idx, (wi, gi)) in w.data.iter_mut().zip(&g.data).enumerate() {
                        let m = &mut st.m[idx];
                        let v = &mut st.v[idx];
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        *wi -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// The `n` highest-scoring documents for `query` that are not positives.
///
/// Returns fewer when the index holds fewer non-positives.
pub fn sample_hard_negatives(
    query: &Embedding,
    positives: &BTreeSet<String>,
    index: &VectorIndex,
    n: usize,
) -> Result<Vec<String>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let k = (n + positives.len()).min(index.len());
    Ok(index
        .search(query, k)?
        .entries
        .into_iter()
        .map(|(id, _)| id)
        .filter(|id| !positives.contains(id))
        .take(n)
        .collect())
}

/// Per pair, the mined negatives as `(pool_id, position in pool)`.
fn mine_negatives<'p>(
    model: &TwoTowerModel,
    pairs: &'p [TrainingPair],
    pools: &NegativePools,
    n: usize,
) -> Result<Vec<Vec<(&'p str, usize)>>> {
    let mut indexes = HashMap::new();
    for (pool_id, docs) in pools {
        if docs.is_empty() {
            continue;
        }
        let projected = crate::par::try_map(docs, |(id, x)| {
            Ok::<_, Error>((id.clone(), Embedding(model.project_doc(x)?)))
        })?;
        let position: HashMap<String, usize> = docs
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        indexes.insert(pool_id.as_str(), (VectorIndex::build(projected)?, position));
    }
    // Indexed so the results can borrow pool ids from `pairs`.
    let order: Vec<usize> = (0..pairs.len()).collect();
    crate::par::try_map(&order, |&i| {
        let p = &pairs[i];
        let Some((index, position)) = indexes.get(p.pool_id.as_str()) else {
            return Ok(Vec::new());
        };
        let q = Embedding(model.project_query(&p.query)?);
        Ok(sample_hard_negatives(&q, &p.positive_ids, index, n)?
            .iter()
            .map(|id| (p.pool_id.as_str(), position[id]))
            .collect())
    })
}

/// Trains from `model` and returns the updated model with its loss log.
///
/// Fully deterministic in `(model, pairs, pool, config)`: one seeded shuffle
/// per epoch and a fixed summation order. Hard negatives, when enabled, are
/// re-mined from each pair's pool at the start of every epoch under the
/// current model and shared across the batch.
pub fn train(
    model: &TwoTowerModel,
    pairs: &[TrainingPair],
    pools: &NegativePools,
    config: &TrainConfig,
) -> Result<(TwoTowerModel, TrainLog)> {
    config.validate()?;
    let mut model = model.clone();
    model.temperature = config.temperature;
    model.validate()?;
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((model, log));
    }
    if pairs.is_empty() {
        return Err(Error::Config("training needs at least one pair".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stepper = Stepper::new(
        config.optimizer,
        config.learning_rate,
        model.dim_in * model.dim_out,
    );
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let use_negatives = config.hard_negatives_per_query > 0 && !pools.is_empty();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mined = if use_negatives {
            mine_negatives(&model, pairs, pools, config.hard_negatives_per_query)?
        } else {
            Vec::new()
        };
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let queries: Vec<Vec<f64>> = batch.iter().map(|&i| pairs[i].query.clone()).collect();
            let positives: Vec<Vec<f64>> =
                batch.iter().map(|&i| pairs[i].positive.clone()).collect();
            let extra: Vec<Vec<f64>> = if use_negatives {
                let excluded: HashSet<&str> = batch
                    .iter()
                    .flat_map(|&i| pairs[i].positive_ids.iter().map(String::as_str))
                    .collect();
                let mut seen = HashSet::new();
                batch
                    .iter()
                    .flat_map(|&i| mined[i].iter().copied())
                    .map(|(pool_id, j)| &pools[pool_id][j])
                    .filter(|(id, _)| !excluded.contains(id.as_str()) && seen.insert(id.as_str()))
                    .map(|(_, x)| x.clone())
                    .collect()
            } else {
                Vec::new()
            };
            let out = infonce_loss(&model, &queries, &positives, &extra, config.symmetric)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: out.loss,
                });
            }
            total += out.loss;
            batches += 1;
            stepper.step(&mut model, [&out.grad_query, &out.grad_doc]);
            if !model.w_query.is_finite() || !model.w_doc.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: out.loss,
                });
            }
            log.steps += 1;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}
