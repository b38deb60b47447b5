//! The enhancer: turns corpus entries and queries into self-contained text.
//!
//! Routing by entry type:
//!
//! | side   | modality   | kind         | category | action                       |
//! |--------|------------|--------------|----------|------------------------------|
//! | corpus | text       | -            | I        | unchanged                    |
//! | corpus | image      | -            | II       | caption (100 words)          |
//! | corpus | image,text | -            | III      | text + `Visual Context:` cap |
//! | query  | text       | -            | I        | unchanged                    |
//! | query  | image      | -            | II       | caption (50 words)           |
//! | query  | image,text | qa           | III      | rewrite with referent named  |
//! | query  | image,text | modification | III      | distill, image withheld      |
//! | query  | image,text | plain        | III      | text + `Visual Context:` cap |

pub mod cache;
pub mod gateway;
pub mod prompts;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::datamodel::{
    Benchmark, Category, Document, EnhancedRecord, EnhancedStore, Modality, Query, QueryKind, Side,
};
use crate::error::Result;

pub use cache::{CacheKey, EnhancementCache};
pub use gateway::{
    ChatRequest, ChatResponse, GatewayError, HttpGateway, VlmGateway, VlmGatewayConfig,
};
pub use prompts::{
    build_corpus_caption_prompt, build_modification_prompt, build_qa_rewrite_prompt,
    build_query_caption_prompt, PromptMessage, PromptPart, TemplateId,
};

pub const VISUAL_CONTEXT_SEPARATOR: &str = "\nVisual Context: ";
pub const IDENTITY_TEMPLATE: &str = "identity";

/// How a reply becomes the enhanced text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compose {
    Identity,
    Replace,
    Append,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub category: Category,
    pub template: Option<TemplateId>,
    pub compose: Compose,
}

/// The routing table; total over every (side, modality, kind).
pub fn route(side: Side, modality: Modality, kind: QueryKind) -> Route {
    use Compose::*;
    let r = |category, template, compose| Route {
        category,
        template,
        compose,
    };
    match (side, modality, kind) {
        (_, Modality::Text, _) => r(Category::I, None, Identity),
        (Side::CorpusSide, Modality::Image, _) => {
            r(Category::II, Some(TemplateId::CorpusCaption), Replace)
        }
        (Side::CorpusSide, Modality::ImageText, _) => {
            r(Category::III, Some(TemplateId::CorpusCaption), Append)
        }
        (Side::QuerySide, Modality::Image, _) => {
            r(Category::II, Some(TemplateId::QueryCaption), Replace)
        }
        (Side::QuerySide, Modality::ImageText, QueryKind::QA) => {
            r(Category::III, Some(TemplateId::QaRewrite), Replace)
        }
        (Side::QuerySide, Modality::ImageText, QueryKind::Modification) => {
            r(Category::III, Some(TemplateId::Modification), Replace)
        }
        (Side::QuerySide, Modality::ImageText, QueryKind::Plain) => {
            r(Category::III, Some(TemplateId::QueryCaption), Append)
        }
    }
}

pub fn classify_corpus(doc: &Document) -> Category {
    route(Side::CorpusSide, doc.modality, QueryKind::Plain).category
}

/// A routed, prompt-ready unit of enhancement work.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceJob {
    pub source_id: String,
    pub side: Side,
    pub route: Route,
    pub original_text: Option<String>,
    pub image_ref: Option<String>,
    pub visual_tokens: Vec<String>,
    pub prompt: Option<PromptMessage>,
}

impl EnhanceJob {
    pub fn for_document(doc: &Document) -> Result<Self> {
        let route = route(Side::CorpusSide, doc.modality, QueryKind::Plain);
        let prompt = match route.template {
            Some(_) => Some(build_corpus_caption_prompt(
                doc.image_ref.as_deref().unwrap_or_default(),
            )?),
            None => None,
        };
        Ok(Self {
            source_id: doc.did.clone(),
            side: Side::CorpusSide,
            route,
            original_text: doc.text.clone(),
            image_ref: doc.image_ref.clone(),
            visual_tokens: doc.visual_tokens.clone(),
            prompt,
        })
    }

    pub fn for_query(q: &Query) -> Result<Self> {
        let route = route(Side::QuerySide, q.modality, q.kind);
        let text = q.text.as_deref().unwrap_or_default();
        let image = q.image_ref.as_deref().unwrap_or_default();
        let prompt = match route.template {
            None => None,
            Some(TemplateId::QaRewrite) => Some(build_qa_rewrite_prompt(text, image)?),
            Some(TemplateId::Modification) => Some(build_modification_prompt(text)?),
            Some(_) => Some(build_query_caption_prompt(image)?),
        };
        Ok(Self {
            source_id: q.qid.clone(),
            side: Side::QuerySide,
            route,
            original_text: q.text.clone(),
            image_ref: q.image_ref.clone(),
            visual_tokens: q.visual_tokens.clone(),
            prompt,
        })
    }

    fn template_id(&self) -> &'static str {
        self.route
            .template
            .map(TemplateId::as_str)
            .unwrap_or(IDENTITY_TEMPLATE)
    }

    pub fn cache_key(&self, model_id: &str) -> CacheKey {
        CacheKey::new(
            self.template_id(),
            model_id,
            self.original_text.as_deref().unwrap_or_default(),
            // The modification prompt never sees the image.
            match self.route.template {
                Some(TemplateId::Modification) => None,
                _ => self.image_ref.as_deref(),
            },
            match self.route.template {
                Some(TemplateId::Modification) => &[],
                _ => &self.visual_tokens,
            },
        )
    }

    fn original(&self) -> &str {
        self.original_text.as_deref().unwrap_or_default()
    }

    fn identity_record(&self) -> EnhancedRecord {
        EnhancedRecord {
            source_id: self.source_id.clone(),
            side: self.side,
            enhanced_text: self.original().to_owned(),
            category: self.route.category,
            template_id: IDENTITY_TEMPLATE.into(),
            model_id: String::new(),
            raw_reply: String::new(),
            fallback: false,
            over_budget: false,
        }
    }

    fn fallback_record(&self, model_id: &str) -> EnhancedRecord {
        EnhancedRecord {
            enhanced_text: self.original().to_owned(),
            template_id: self.template_id().into(),
            model_id: model_id.into(),
            fallback: true,
            ..self.identity_record()
        }
    }

    fn compose_record(&self, reply: &str, model_id: &str) -> EnhancedRecord {
        let reply = reply.trim();
        let enhanced_text = match self.route.compose {
            Compose::Identity => self.original().to_owned(),
            Compose::Replace => reply.to_owned(),
            Compose::Append => format!("{}{VISUAL_CONTEXT_SEPARATOR}{reply}", self.original()),
        };
        let over_budget = self
            .route
            .template
            .and_then(TemplateId::word_budget)
            .is_some_and(|budget| reply.split_whitespace().count() > 2 * budget);
        if over_budget {
            log::warn!("{}: reply exceeds twice the word budget", self.source_id);
        }
        EnhancedRecord {
            source_id: self.source_id.clone(),
            side: self.side,
            enhanced_text,
            category: self.route.category,
            template_id: self.template_id().into(),
            model_id: model_id.into(),
            raw_reply: reply.to_owned(),
            fallback: false,
            over_budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// Category I: no gateway involvement.
    Identity,
    Cached,
    Enhanced,
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchOutcome {
    pub record: EnhancedRecord,
    pub resolution: Resolution,
    /// Gateway calls made for this item's key (shared with duplicates).
    pub attempts: u32,
    pub error: Option<String>,
}

impl DispatchOutcome {
    pub fn retries(&self) -> u32 {
        self.attempts.saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DispatchSummary {
    pub total: usize,
    pub identity: usize,
    pub cached: usize,
    pub enhanced: usize,
    pub fallback: usize,
}

impl DispatchSummary {
    pub fn from_outcomes(outcomes: &[DispatchOutcome]) -> Self {
        let mut s = DispatchSummary {
            total: outcomes.len(),
            ..Default::default()
        };
        for o in outcomes {
            match o.resolution {
                Resolution::Identity => s.identity += 1,
                Resolution::Cached => s.cached += 1,
                Resolution::Enhanced => s.enhanced += 1,
                Resolution::Fallback => s.fallback += 1,
            }
        }
        s
    }
}

struct CallResult {
    reply: std::result::Result<String, GatewayError>,
    attempts: u32,
}

fn call_with_retry<G: VlmGateway + ?Sized>(
    gateway: &G,
    request: &ChatRequest,
    config: &VlmGatewayConfig,
) -> CallResult {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match gateway.complete(request) {
            Ok(reply) if reply.trim().is_empty() => {
                return CallResult {
                    reply: Err(GatewayError::Permanent("empty reply".into())),
                    attempts,
                }
            }
            Ok(reply) => {
                return CallResult {
                    reply: Ok(reply),
                    attempts,
                }
            }
            Err(GatewayError::Transient(e)) if attempts <= config.max_retries => {
                log::debug!("transient gateway failure (attempt {attempts}): {e}");
                std::thread::sleep(config.backoff(attempts - 1));
            }
            Err(e) => {
                return CallResult {
                    reply: Err(e),
                    attempts,
                }
            }
        }
    }
}

/// Resolves a batch of jobs: cache first, one gateway call per distinct key,
/// at most `max_in_flight` calls at once. Results align with `jobs`.
///
/// Failures never abort the batch; the affected items fall back to their
/// original text with `fallback == true`.
pub fn dispatch_batch<G: VlmGateway + ?Sized>(
    jobs: &[EnhanceJob],
    gateway: &G,
    cache: &EnhancementCache,
    config: &VlmGatewayConfig,
) -> Result<Vec<DispatchOutcome>> {
    config.validate()?;
    let model_id = config.model_id.as_str();
    let mut outcomes: Vec<Option<DispatchOutcome>> = vec![None; jobs.len()];

    // Distinct uncached keys, in first-seen order, and the jobs that share them.
    let mut pending: Vec<(CacheKey, usize)> = Vec::new();
    let mut waiting: HashMap<CacheKey, Vec<usize>> = HashMap::new();
    for (i, job) in jobs.iter().enumerate() {
        if job.route.template.is_none() {
            outcomes[i] = Some(DispatchOutcome {
                record: job.identity_record(),
                resolution: Resolution::Identity,
                attempts: 0,
                error: None,
            });
            continue;
        }
        let key = job.cache_key(model_id);
        if let Some(mut hit) = cache.get(&key) {
            hit.source_id = job.source_id.clone();
            hit.side = job.side;
            outcomes[i] = Some(DispatchOutcome {
                record: hit,
                resolution: Resolution::Cached,
                attempts: 0,
                error: None,
            });
            continue;
        }
        let slot = waiting.entry(key.clone()).or_default();
        if slot.is_empty() {
            pending.push((key, i));
        }
        slot.push(i);
    }

    let results: Mutex<Vec<Option<CallResult>>> =
        Mutex::new((0..pending.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = config.max_in_flight.min(pending.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let n = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, job_idx)) = pending.get(n) else {
                    break;
                };
                let prompt = jobs[*job_idx]
                    .prompt
                    .as_ref()
                    .expect("routed jobs carry a prompt");
                let request = ChatRequest::from_prompt(prompt, config);
                let result = call_with_retry(gateway, &request, config);
                results.lock().unwrap()[n] = Some(result);
            });
        }
    });

    for ((key, _), result) in pending.iter().zip(results.into_inner().unwrap()) {
        let result = result.expect("every pending key is processed");
        let indices = &waiting[key];
        match result.reply {
            Ok(reply) => {
                let lead = &jobs[indices[0]];
                let record = lead.compose_record(&reply, model_id);
                cache.put(key.clone(), record.clone())?;
                for &i in indices {
                    let mut record = record.clone();
                    record.source_id = jobs[i].source_id.clone();
                    outcomes[i] = Some(DispatchOutcome {
                        record,
                        resolution: Resolution::Enhanced,
                        attempts: result.attempts,
                        error: None,
                    });
                }
            }
            Err(e) => {
                for &i in indices {
                    log::error!("enhancement of {} failed: {e}", jobs[i].source_id);
                    outcomes[i] = Some(DispatchOutcome {
                        record: jobs[i].fallback_record(model_id),
                        resolution: Resolution::Fallback,
                        attempts: result.attempts,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }

    Ok(outcomes
        .into_iter()
        .map(|o| o.expect("every job resolved"))
        .collect())
}

pub fn enhance_corpus<G: VlmGateway + ?Sized>(
    doc: &Document,
    gateway: &G,
    cache: &EnhancementCache,
    config: &VlmGatewayConfig,
) -> Result<EnhancedRecord> {
    let job = EnhanceJob::for_document(doc)?;
    Ok(dispatch_batch(&[job], gateway, cache, config)?
        .remove(0)
        .record)
}

pub fn enhance_query<G: VlmGateway + ?Sized>(
    q: &Query,
    gateway: &G,
    cache: &EnhancementCache,
    config: &VlmGatewayConfig,
) -> Result<EnhancedRecord> {
    let job = EnhanceJob::for_query(q)?;
    Ok(dispatch_batch(&[job], gateway, cache, config)?
        .remove(0)
        .record)
}

pub fn enhance_documents<G: VlmGateway + ?Sized>(
    docs: &[Document],
    gateway: &G,
    cache: &EnhancementCache,
    config: &VlmGatewayConfig,
) -> Result<Vec<DispatchOutcome>> {
    let jobs = docs
        .iter()
        .map(EnhanceJob::for_document)
        .collect::<Result<Vec<_>>>()?;
    dispatch_batch(&jobs, gateway, cache, config)
}

pub fn enhance_queries<G: VlmGateway + ?Sized>(
    queries: &[Query],
    gateway: &G,
    cache: &EnhancementCache,
    config: &VlmGatewayConfig,
) -> Result<Vec<DispatchOutcome>> {
    let jobs = queries
        .iter()
        .map(EnhanceJob::for_query)
        .collect::<Result<Vec<_>>>()?;
    dispatch_batch(&jobs, gateway, cache, config)
}

/// Enhances every document and every train and test query of `bench`.
pub fn enhance_benchmark<G: VlmGateway + ?Sized>(
    bench: &Benchmark,
    gateway: &G,
    cache: &EnhancementCache,
    config: &VlmGatewayConfig,
) -> Result<(EnhancedStore, DispatchSummary)> {
    let docs: Vec<Document> = bench.all_documents().into_iter().cloned().collect();
    let queries: Vec<Query> = bench.train.iter().chain(&bench.test).cloned().collect();
    let mut outcomes = enhance_documents(&docs, gateway, cache, config)?;
    outcomes.extend(enhance_queries(&queries, gateway, cache, config)?);
    let summary = DispatchSummary::from_outcomes(&outcomes);
    let mut store = EnhancedStore::default();
    store.extend(outcomes.into_iter().map(|o| o.record));
    Ok((store, summary))
}
