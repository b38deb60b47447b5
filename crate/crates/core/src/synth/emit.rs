//! Lays a [`SynthWorld`] out as a benchmark in the datamodel formats.
//!
//! Three documents per object (entities and distractors alike):
//!
//! | id      | pool     | content                                        |
//! |---------|----------|------------------------------------------------|
//! | `t-<o>` | `texts`  | name, category and attributes in prose         |
//! | `i-<o>` | `images` | image only; sidecar holds scene tokens         |
//! | `m-<o>` | `mixed`  | image plus a short text naming the object      |
//!
//! Five query tasks per entity; entities are split in half between train
//! and test. Attribute tokens never reach a sidecar: they live in the answer
//! file read by the mock captioner.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{Entity, SynthWorld};
use crate::datamodel::{
    write_corpus, write_queries, write_sidecar, Benchmark, DataManifest, Document, Modality, Query,
    QueryKind, TaskRegistry, TaskSpec,
};
use crate::error::{Error, Result};

pub const TASK_T2I: &str = "synth-t2i";
pub const TASK_I2T: &str = "synth-i2t";
pub const TASK_QA: &str = "synth-qa";
pub const TASK_QA_MIXED: &str = "synth-qa-it";
pub const TASK_CIR: &str = "synth-cir";

pub const POOL_TEXTS: &str = "texts";
pub const POOL_IMAGES: &str = "images";
pub const POOL_MIXED: &str = "mixed";

/// What the oracle knows about one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAnswer {
    pub canonical_name: String,
    pub attribute_tokens: BTreeSet<String>,
    pub category: super::world::EntityCategory,
    pub spurious_tokens: BTreeSet<String>,
}

/// Hidden ground truth plus the knobs the mock oracle needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerFile {
    pub seed: u64,
    pub caption_noise: f64,
    pub filler_phrases: Vec<String>,
    pub images: BTreeMap<String, ImageAnswer>,
}

impl AnswerFile {
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

/// A benchmark held in memory, sidecar tokens already attached.
#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub tasks: TaskRegistry,
    pub pools: BTreeMap<String, Vec<Document>>,
    pub train: Vec<Query>,
    pub test: Vec<Query>,
    pub answers: AnswerFile,
}

impl SynthBenchmark {
    pub fn to_benchmark(&self) -> Benchmark {
        Benchmark {
            tasks: self.tasks.clone(),
            pools: self.pools.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
        }
    }
}

fn image_ref(id: &str) -> String {
    format!("img/{id}.png")
}

fn tokens_ref(id: &str) -> String {
    format!("img/{id}.tok")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn join_words(words: &[&str]) -> String {
    match words {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn task(id: &str, query: Modality, corpus: Modality, pool: &str, kind: QueryKind) -> TaskSpec {
    TaskSpec {
        task_id: id.into(),
        name: id.into(),
        query_modality: query,
        corpus_modality: corpus,
        pool_id: pool.into(),
        kind: Some(kind),
        cutoffs: vec![1, 5, 10, 50],
        advisory: false,
        instruction: String::new(),
    }
}

pub fn task_registry(with_cir: bool) -> TaskRegistry {
    let mut tasks = vec![
        task(
            TASK_T2I,
            Modality::Text,
            Modality::Image,
            POOL_IMAGES,
            QueryKind::Plain,
        ),
        task(
            TASK_I2T,
            Modality::Image,
            Modality::Text,
            POOL_TEXTS,
            QueryKind::Plain,
        ),
        task(
            TASK_QA,
            Modality::ImageText,
            Modality::Text,
            POOL_TEXTS,
            QueryKind::QA,
        ),
        task(
            TASK_QA_MIXED,
            Modality::ImageText,
            Modality::ImageText,
            POOL_MIXED,
            QueryKind::QA,
        ),
    ];
    if with_cir {
        tasks.push(task(
            TASK_CIR,
            Modality::ImageText,
            Modality::Image,
            POOL_IMAGES,
            QueryKind::Modification,
        ));
    }
    TaskRegistry::new(tasks).expect("static task table is valid")
}

struct Builder<'w> {
    world: &'w SynthWorld,
    images: BTreeMap<String, ImageAnswer>,
}

impl<'w> Builder<'w> {
    /// Registers an image of `e` and returns `(image_ref, sidecar_ref, tokens)`.
    fn image(&mut self, e: &Entity, id: &str) -> (String, String, Vec<String>) {
        let r = image_ref(id);
        self.images.insert(
            r.clone(),
            ImageAnswer {
                canonical_name: e.canonical_name.clone(),
                attribute_tokens: e.attribute_tokens.clone(),
                category: e.category,
                spurious_tokens: e.spurious_tokens.clone(),
            },
        );
        (
            r,
            tokens_ref(id),
            e.spurious_tokens.iter().cloned().collect(),
        )
    }

    fn documents(&mut self, e: &Entity) -> [Document; 3] {
        let attrs: Vec<&str> = e.attribute_tokens.iter().map(String::as_str).collect();
        let (img, tok, visual) = self.image(e, &e.id);
        let (mimg, mtok, mvisual) = self.image(e, &format!("{}-m", e.id));
        [
            Document {
                did: format!("t-{}", e.id),
                text: Some(format!(
                    "{} is a {}. It is {}.",
                    capitalize(&e.canonical_name),
                    e.category.noun(),
                    join_words(&attrs)
                )),
                image_ref: None,
                modality: Modality::Text,
                image_tokens_ref: None,
                visual_tokens: vec![],
            },
            Document {
                did: format!("i-{}", e.id),
                text: None,
                image_ref: Some(img),
                modality: Modality::Image,
                image_tokens_ref: Some(tok),
                visual_tokens: visual,
            },
            Document {
                did: format!("m-{}", e.id),
                text: Some(format!(
                    "{} is a {} listed in the regional catalogue.",
                    capitalize(&e.canonical_name),
                    e.category.noun()
                )),
                image_ref: Some(mimg),
                modality: Modality::ImageText,
                image_tokens_ref: Some(mtok),
                visual_tokens: mvisual,
            },
        ]
    }

    fn referent(&self, e: &Entity, rng: &mut ChaCha8Rng) -> String {
        if rng.random_bool(self.world.config.deixis_rate) {
            e.category.deictic()
        } else {
            format!("the {}", e.canonical_name)
        }
    }

    fn queries(&mut self, e: &Entity, rng: &mut ChaCha8Rng) -> Vec<Query> {
        let attrs: Vec<&str> = e.attribute_tokens.iter().map(String::as_str).collect();
        let query = |qid: String,
                     task: &str,
                     kind,
                     text: Option<String>,
                     img: Option<(String, String, Vec<String>)>,
                     pos: String| {
            let modality = match (&text, &img) {
                (Some(_), Some(_)) => Modality::ImageText,
                (None, Some(_)) => Modality::Image,
                _ => Modality::Text,
            };
            let (image_ref, image_tokens_ref, visual_tokens) = match img {
                Some((r, t, v)) => (Some(r), Some(t), v),
                None => (None, None, vec![]),
            };
            Query {
                qid,
                text,
                image_ref,
                modality,
                task_id: task.into(),
                kind,
                positives: BTreeSet::from([pos]),
                instruction: String::new(),
                image_tokens_ref,
                visual_tokens,
            }
        };

        let mut out = Vec::with_capacity(5);
        out.push(query(
            format!("q-t2i-{}", e.id),
            TASK_T2I,
            QueryKind::Plain,
            Some(format!(
                "A {} that is {}.",
                e.category.noun(),
                join_words(&attrs)
            )),
            None,
            format!("i-{}", e.id),
        ));
        let img = self.image(e, &format!("{}-q", e.id));
        out.push(query(
            format!("q-i2t-{}", e.id),
            TASK_I2T,
            QueryKind::Plain,
            None,
            Some(img),
            format!("t-{}", e.id),
        ));
        let [q1, q2] = e.category.questions();
        let img = self.image(e, &format!("{}-qa", e.id));
        let text = capitalize(&q1.replace("{}", &self.referent(e, rng)));
        out.push(query(
            format!("q-qa-{}", e.id),
            TASK_QA,
            QueryKind::QA,
            Some(text),
            Some(img),
            format!("t-{}", e.id),
        ));
        let img = self.image(e, &format!("{}-qa2", e.id));
        let text = capitalize(&q2.replace("{}", &self.referent(e, rng)));
        out.push(query(
            format!("q-qait-{}", e.id),
            TASK_QA_MIXED,
            QueryKind::QA,
            Some(text),
            Some(img),
            format!("m-{}", e.id),
        ));

        let distractors: Vec<&Entity> = self.world.distractors_of(e).collect();
        if let Some(reference) = distractors.choose(rng) {
            let changed: Vec<&str> = e
                .attribute_tokens
                .difference(&reference.attribute_tokens)
                .map(String::as_str)
                .collect();
            let kept = e
                .attribute_tokens
                .intersection(&reference.attribute_tokens)
                .next();
            let mut request = format!("Is {}", join_words(&changed));
            if let Some(k) = kept {
                request.push_str(&format!(" with {k}"));
            }
            let filler = self
                .world
                .config
                .filler_phrases
                .choose(rng)
                .map(|f| format!("{f} "))
                .unwrap_or_default();
            let img = self.image(reference, &reference.id);
            out.push(query(
                format!("q-cir-{}", e.id),
                TASK_CIR,
                QueryKind::Modification,
                Some(format!(
                    "{filler}{}.",
                    lower_first(&request, !filler.is_empty())
                )),
                Some(img),
                format!("i-{}", e.id),
            ));
        }
        out
    }
}

fn lower_first(s: &str, lower: bool) -> String {
    if !lower {
        return s.to_owned();
    }
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Builds the benchmark in memory. Pure in the world.
pub fn build_benchmark(world: &SynthWorld) -> Result<SynthBenchmark> {
    world.validate()?;
    let mut b = Builder {
        world,
        images: BTreeMap::new(),
    };
    let mut pools: BTreeMap<String, Vec<Document>> = [POOL_TEXTS, POOL_IMAGES, POOL_MIXED]
        .into_iter()
        .map(|p| (p.to_owned(), Vec::new()))
        .collect();
    for o in world.objects() {
        let [t, i, m] = b.documents(o);
        pools.get_mut(POOL_TEXTS).unwrap().push(t);
        pools.get_mut(POOL_IMAGES).unwrap().push(i);
        pools.get_mut(POOL_MIXED).unwrap().push(m);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..world.entities.len()).collect();
    order.shuffle(&mut rng);
    let n_train = world.entities.len() / 2;
    let train_set: BTreeSet<usize> = order[..n_train].iter().copied().collect();

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, e) in world.entities.iter().enumerate() {
        let qs = b.queries(e, &mut rng);
        if train_set.contains(&i) {
            train.extend(qs);
        } else {
            test.extend(qs);
        }
    }

    Ok(SynthBenchmark {
        tasks: task_registry(world.config.distractors_per_entity > 0),
        pools,
        train,
        test,
        answers: AnswerFile {
            seed: world.seed,
            caption_noise: world.config.caption_noise,
            filler_phrases: world.config.filler_phrases.clone(),
            images: b.images,
        },
    })
}

/// Writes the benchmark under `out_dir` and returns its manifest, which is
/// also saved as `manifest.json`.
pub fn emit_benchmark(world: &SynthWorld, out_dir: impl AsRef<Path>) -> Result<DataManifest> {
    let out = out_dir.as_ref();
    let bench = build_benchmark(world)?;
    fs::create_dir_all(out.join("img")).map_err(|e| Error::io(out, e))?;

    let mut sidecars: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for d in bench.pools.values().flatten() {
        if let Some(t) = &d.image_tokens_ref {
            sidecars.insert(t.clone(), d.visual_tokens.clone());
        }
    }
    for q in bench.train.iter().chain(&bench.test) {
        if let Some(t) = &q.image_tokens_ref {
            sidecars.insert(t.clone(), q.visual_tokens.clone());
        }
    }
    for (r, tokens) in &sidecars {
        write_sidecar(&out.join(r), tokens)?;
    }

    let mut counts = BTreeMap::new();
    let mut pools = BTreeMap::new();
    for (id, docs) in &bench.pools {
        let file = format!("pool_{id}.jsonl");
        write_corpus(docs, out.join(&file))?;
        pools.insert(id.clone(), file.into());
        counts.insert(format!("pool_{id}"), docs.len());
    }
    write_queries(&bench.train, out.join("train_queries.jsonl"))?;
    write_queries(&bench.test, out.join("test_queries.jsonl"))?;
    bench.tasks.save(out.join("tasks.json"))?;
    bench.answers.save(out.join("answers.json"))?;
    counts.insert("train_queries".into(), bench.train.len());
    counts.insert("test_queries".into(), bench.test.len());
    counts.insert("tasks".into(), bench.tasks.len());
    counts.insert("images".into(), bench.answers.images.len());

    let manifest = DataManifest {
        tasks: "tasks.json".into(),
        pools,
        train_queries: "train_queries.jsonl".into(),
        test_queries: "test_queries.jsonl".into(),
        answers: Some("answers.json".into()),
        counts,
    };
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}
