//! Corpus, query and task schemas plus their line-delimited JSON interchange.
//!
//! Field names follow the M-BEIR release (`did`, `qid`, `txt`, `img_path`,
//! `modality`, `task_id`, `pos_cand_list`) so its files load unmodified; the
//! query-side `query_*` spellings are accepted as aliases. Images are opaque
//! references. An optional `img_tokens_path` sidecar (one token per line) is
//! the only visual signal an un-enhanced embedder ever sees.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "image")]
    Image,
    #[serde(rename = "image,text")]
    ImageText,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::ImageText => "image,text",
        }
    }

    pub fn has_image(self) -> bool {
        matches!(self, Modality::Image | Modality::ImageText)
    }

    pub fn has_text(self) -> bool {
        matches!(self, Modality::Text | Modality::ImageText)
    }

    fn check(self, text: Option<&str>, image: Option<&str>) -> std::result::Result<(), String> {
        let ok = match self {
            Modality::Text => text.is_some() && image.is_none(),
            Modality::Image => text.is_none() && image.is_some(),
            Modality::ImageText => text.is_some() && image.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!(
                "modality {:?} inconsistent with fields (txt: {}, img_path: {})",
                self.as_str(),
                if text.is_some() { "present" } else { "absent" },
                if image.is_some() { "present" } else { "absent" },
            ))
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How an image-text query must be interpreted before retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Plain,
    #[serde(rename = "qa")]
    QA,
    Modification,
}

impl QueryKind {
    /// Default task-name table used when a registry entry carries no `kind`.
    ///
    /// Composed-retrieval benchmarks are modification requests and
    /// knowledge-seeking VQA benchmarks are QA; everything else is plain.
    pub fn for_task_name(name: &str) -> QueryKind {
        let lower = name.to_ascii_lowercase();
        const MODIFICATION: [&str; 4] = ["cirr", "fashioniq", "fashiq", "synth-cir"];
        const QA: [&str; 3] = ["infoseek", "oven", "synth-qa"];
        if MODIFICATION.iter().any(|p| lower.starts_with(p)) {
            QueryKind::Modification
        } else if QA.iter().any(|p| lower.starts_with(p)) {
            QueryKind::QA
        } else {
            QueryKind::Plain
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub did: String,
    #[serde(rename = "txt", default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(rename = "img_path", default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub modality: Modality,
    #[serde(
        rename = "img_tokens_path",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub image_tokens_ref: Option<String>,
    /// Sidecar tokens resolved at load time.
    #[serde(skip)]
    pub visual_tokens: Vec<String>,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        self.modality
            .check(self.text.as_deref(), self.image_ref.as_deref())
            .map_err(|message| Error::InvalidRecord {
                id: self.did.clone(),
                message,
            })
    }
}

/// Query as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: String,
    #[serde(
        rename = "txt",
        alias = "query_txt",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub text: Option<String>,
    #[serde(
        rename = "img_path",
        alias = "query_img_path",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub image_ref: Option<String>,
    #[serde(alias = "query_modality")]
    pub modality: Modality,
    #[serde(deserialize_with = "string_or_number")]
    pub task_id: String,
    #[serde(deserialize_with = "strings_or_numbers")]
    pub pos_cand_list: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(
        rename = "img_tokens_path",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub image_tokens_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub qid: String,
    pub text: Option<String>,
    pub image_ref: Option<String>,
    pub modality: Modality,
    pub task_id: String,
    pub kind: QueryKind,
    pub positives: BTreeSet<String>,
    pub instruction: String,
    pub image_tokens_ref: Option<String>,
    pub visual_tokens: Vec<String>,
}

impl Query {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidRecord {
            id: self.qid.clone(),
            message,
        };
        self.modality
            .check(self.text.as_deref(), self.image_ref.as_deref())
            .map_err(invalid)?;
        if self.positives.is_empty() {
            return Err(invalid("empty positives list".into()));
        }
        if self.kind != QueryKind::Plain && self.modality != Modality::ImageText {
            return Err(invalid(format!(
                "kind {:?} requires modality image,text",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_record(&self) -> QueryRecord {
        QueryRecord {
            qid: self.qid.clone(),
            text: self.text.clone(),
            image_ref: self.image_ref.clone(),
            modality: self.modality,
            task_id: self.task_id.clone(),
            pos_cand_list: self.positives.iter().cloned().collect(),
            instruction: (!self.instruction.is_empty()).then(|| self.instruction.clone()),
            image_tokens_ref: self.image_tokens_ref.clone(),
        }
    }
}

fn default_cutoffs() -> Vec<usize> {
    vec![1, 5, 10, 50]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(skip)]
    pub task_id: String,
    pub name: String,
    pub query_modality: Modality,
    pub corpus_modality: Modality,
    pub pool_id: String,
    /// Interpretation of image-text queries; derived from `name` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<QueryKind>,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    /// Unreliable ground truth: reported, but excluded from the main macro average.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub advisory: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub instruction: String,
}

impl TaskSpec {
    pub fn query_kind(&self) -> QueryKind {
        self.kind
            .unwrap_or_else(|| QueryKind::for_task_name(&self.name))
    }

    pub fn max_cutoff(&self) -> usize {
        self.cutoffs.last().copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Error::Config(format!("task {}: {m}", self.task_id));
        if self.cutoffs.is_empty() {
            return Err(bad("cutoffs must be non-empty"));
        }
        if self.cutoffs[0] == 0 {
            return Err(bad("cutoffs must be positive"));
        }
        if self.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("cutoffs must be strictly increasing"));
        }
        Ok(())
    }
}

/// Task registry keyed (and therefore ordered) by task id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskRegistry {
    tasks: BTreeMap<String, TaskSpec>,
}

impl TaskRegistry {
    pub fn new(tasks: impl IntoIterator<Item = TaskSpec>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for task in tasks {
            task.validate()?;
            if map.insert(task.task_id.clone(), task.clone()).is_some() {
                return Err(Error::DuplicateId(task.task_id));
            }
        }
        Ok(Self { tasks: map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, TaskSpec> =
            serde_json::from_str(&raw).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: e.line(),
                message: e.to_string(),
            })?;
        Self::new(map.into_iter().map(|(id, mut t)| {
            t.task_id = id;
            t
        }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(&self.tasks)?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.get(task_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "corpus")]
    CorpusSide,
    #[serde(rename = "query")]
    QuerySide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    I,
    II,
    III,
}

/// Output of the enhancer for one corpus entry or query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedRecord {
    pub source_id: String,
    pub side: Side,
    pub enhanced_text: String,
    pub category: Category,
    pub template_id: String,
    pub model_id: String,
    pub raw_reply: String,
    pub fallback: bool,
    /// Reply exceeded twice the prompt's word budget.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub over_budget: bool,
}

impl EnhancedRecord {
    pub fn validate(&self) -> Result<()> {
        if self.category == Category::I && self.fallback {
            return Err(Error::InvalidRecord {
                id: self.source_id.clone(),
                message: "category I records are never fallbacks".into(),
            });
        }
        Ok(())
    }
}

/// Enhanced records for both sides, keyed by source id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnhancedStore {
    pub corpus: HashMap<String, EnhancedRecord>,
    pub queries: HashMap<String, EnhancedRecord>,
}

impl EnhancedStore {
    pub fn insert(&mut self, record: EnhancedRecord) {
        let map = match record.side {
            Side::CorpusSide => &mut self.corpus,
            Side::QuerySide => &mut self.queries,
        };
        map.insert(record.source_id.clone(), record);
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = EnhancedRecord>) {
        for r in records {
            self.insert(r);
        }
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::S(s) => s,
        Raw::N(n) => n.to_string(),
    })
}

fn strings_or_numbers<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        N(serde_json::Number),
    }
    Ok(Vec::<Raw>::deserialize(d)?
        .into_iter()
        .map(|r| match r {
            Raw::S(s) => s,
            Raw::N(n) => n.to_string(),
        })
        .collect())
}

/// Reads non-blank lines of a JSONL file as `T`, with 1-based line numbers.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.is_empty())
}

/// Loads a sidecar token file: one token per line, blank lines ignored.
pub fn load_sidecar(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

pub fn write_sidecar(path: &Path, tokens: &[String]) -> Result<()> {
    let mut body = tokens.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve_sidecar(base: &Path, reference: Option<&str>) -> Result<Vec<String>> {
    match reference {
        Some(r) => load_sidecar(&base.join(r)),
        None => Ok(Vec::new()),
    }
}

/// Loads a corpus file. Sidecar paths resolve relative to the file's directory.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let base = base_dir(path);
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, mut doc) in read_jsonl::<Document>(path)? {
        doc.text = non_empty(doc.text);
        doc.image_ref = non_empty(doc.image_ref);
        doc.validate().map_err(|e| Error::Parse {
            path: path.to_owned(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(doc.did.clone()) {
            return Err(Error::DuplicateId(doc.did));
        }
        doc.visual_tokens = resolve_sidecar(&base, doc.image_tokens_ref.as_deref())?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), docs)
}

/// Loads queries, assigning each a [`QueryKind`] from its task.
///
/// Only image-text queries take the task's kind; text-only and image-only
/// queries are always plain.
pub fn load_queries(path: impl AsRef<Path>, tasks: &TaskRegistry) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let base = base_dir(path);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<QueryRecord>(path)? {
        let at_line = |e: Error| Error::Parse {
            path: path.to_owned(),
            line,
            message: e.to_string(),
        };
        let task = tasks
            .get(&rec.task_id)
            .ok_or_else(|| at_line(Error::UnknownTask(rec.task_id.clone())))?;
        let query = query_from_record(rec, task);
        query.validate().map_err(at_line)?;
        if !seen.insert(query.qid.clone()) {
            return Err(Error::DuplicateId(query.qid));
        }
        let mut query = query;
        query.visual_tokens = resolve_sidecar(&base, query.image_tokens_ref.as_deref())?;
        out.push(query);
    }
    Ok(out)
}

pub fn query_from_record(rec: QueryRecord, task: &TaskSpec) -> Query {
    let text = non_empty(rec.text);
    let image_ref = non_empty(rec.image_ref);
    let kind = match rec.modality {
        Modality::ImageText => task.query_kind(),
        _ => QueryKind::Plain,
    };
    Query {
        qid: rec.qid,
        text,
        image_ref,
        modality: rec.modality,
        task_id: rec.task_id,
        kind,
        positives: rec.pos_cand_list.into_iter().collect(),
        instruction: rec.instruction.unwrap_or_else(|| task.instruction.clone()),
        image_tokens_ref: rec.image_tokens_ref,
        visual_tokens: Vec::new(),
    }
}

pub fn write_queries(queries: &[Query], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), queries.iter().map(Query::to_record))
}

pub fn write_enhanced(records: &[EnhancedRecord], path: impl AsRef<Path>) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    write_jsonl(path.as_ref(), records)
}

pub fn read_enhanced(path: impl AsRef<Path>) -> Result<Vec<EnhancedRecord>> {
    Ok(read_jsonl(path.as_ref())?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

/// File layout of a benchmark, paths relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    pub tasks: PathBuf,
    pub pools: BTreeMap<String, PathBuf>,
    pub train_queries: PathBuf,
    pub test_queries: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
}

impl DataManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A fully loaded benchmark: registry, candidate pools and query splits.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub tasks: TaskRegistry,
    pub pools: BTreeMap<String, Vec<Document>>,
    pub train: Vec<Query>,
    pub test: Vec<Query>,
}

impl Benchmark {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DataManifest::load(manifest_path)?;
        let base = base_dir(manifest_path);
        let tasks = TaskRegistry::load(base.join(&manifest.tasks))?;
        let pools = manifest
            .pools
            .iter()
            .map(|(id, p)| Ok((id.clone(), load_corpus(base.join(p))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        for task in tasks.iter() {
            if !pools.contains_key(&task.pool_id) {
                return Err(Error::Config(format!(
                    "task {} references unknown pool {}",
                    task.task_id, task.pool_id
                )));
            }
        }
        let train = load_queries(base.join(&manifest.train_queries), &tasks)?;
        let test = load_queries(base.join(&manifest.test_queries), &tasks)?;
        Ok(Self {
            tasks,
            pools,
            train,
            test,
        })
    }

    /// Every corpus document across pools, deduplicated by did in pool order.
    pub fn all_documents(&self) -> Vec<&Document> {
        let mut seen = HashSet::new();
        self.pools
            .values()
            .flatten()
            .filter(|d| seen.insert(d.did.as_str()))
            .collect()
    }

    pub fn pool_for(&self, task: &TaskSpec) -> &[Document] {
        self.pools
            .get(&task.pool_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}
