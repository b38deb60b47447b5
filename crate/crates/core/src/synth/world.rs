//! Entities with hidden attributes, their distractors, and scene clusters.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Visual descriptors an image can have. Disjoint from every word inside the
/// spurious vocabulary, so tokenized captions never collide with it.
pub const ATTRIBUTE_VOCAB: &[&str] = &[
    "red",
    "green",
    "yellow",
    "orange",
    "purple",
    "crimson",
    "golden",
    "silver",
    "black",
    "white",
    "ivory",
    "scarlet",
    "amber",
    "teal",
    "striped",
    "spotted",
    "checkered",
    "dotted",
    "speckled",
    "banded",
    "wooden",
    "metallic",
    "glass",
    "stone",
    "brick",
    "marble",
    "leather",
    "velvet",
    "ceramic",
    "copper",
    "bronze",
    "furry",
    "feathered",
    "scaly",
    "spiky",
    "glossy",
    "matte",
    "rusty",
    "mossy",
    "frosted",
    "painted",
    "carved",
    "woven",
    "round",
    "square",
    "tall",
    "slender",
    "curved",
    "spiral",
    "domed",
    "arched",
    "pointed",
    "horned",
    "winged",
    "stubby",
    "twisted",
    "hollow",
    "layered",
];

/// Low-level scene features shared inside a cluster.
pub const SPURIOUS_VOCAB: &[&str] = &[
    "sky_blue",
    "sky_overcast",
    "sky_dusk",
    "viewpoint_aerial",
    "viewpoint_closeup",
    "viewpoint_profile",
    "texture_grainy",
    "texture_smooth",
    "lighting_harsh",
    "lighting_dim",
    "lens_wide",
    "lens_telephoto",
    "tint_warm",
    "tint_cool",
    "backdrop_urban",
    "backdrop_field",
];

const SPURIOUS_PER_CLUSTER: usize = 3;
const ENTITIES_PER_CLUSTER: usize = 8;
const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityCategory {
    Animal,
    Building,
    Dish,
    Vehicle,
    Plant,
    Artwork,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 6] = [
        EntityCategory::Animal,
        EntityCategory::Building,
        EntityCategory::Dish,
        EntityCategory::Vehicle,
        EntityCategory::Plant,
        EntityCategory::Artwork,
    ];

    pub fn noun(self) -> &'static str {
        match self {
            EntityCategory::Animal => "animal",
            EntityCategory::Building => "building",
            EntityCategory::Dish => "dish",
            EntityCategory::Vehicle => "vehicle",
            EntityCategory::Plant => "plant",
            EntityCategory::Artwork => "artwork",
        }
    }

    pub fn deictic(self) -> String {
        format!("this {}", self.noun())
    }

    /// Question templates; `{}` marks the referent.
    pub fn questions(self) -> [&'static str; 2] {
        match self {
            EntityCategory::Animal => ["When was {} discovered?", "Where does {} live?"],
            EntityCategory::Building => ["Who built {}?", "When was {} completed?"],
            EntityCategory::Dish => ["Where does {} come from?", "What goes into {}?"],
            EntityCategory::Vehicle => ["Who manufactures {}?", "When was {} first produced?"],
            EntityCategory::Plant => ["Where does {} grow?", "When does {} flower?"],
            EntityCategory::Artwork => ["Who created {}?", "Where is {} exhibited?"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub canonical_name: String,
    pub category: EntityCategory,
    pub attribute_tokens: BTreeSet<String>,
    pub spurious_tokens: BTreeSet<String>,
    pub cluster: usize,
    /// Set on distractors: the entity they imitate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub distractors_per_entity: usize,
    /// Fraction of attribute tokens the mock captioner omits.
    pub caption_noise: f64,
    /// Probability that a QA query refers to its subject deictically.
    pub deixis_rate: f64,
    pub filler_phrases: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            distractors_per_entity: 3,
            caption_noise: 0.2,
            deixis_rate: 1.0,
            filler_phrases: [
                "Make it",
                "Change it so it",
                "Show me the one that",
                "Put it in a version that",
            ]
            .map(String::from)
            .to_vec(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 1 {
            return Err(Error::Config("n_entities must be >= 1".into()));
        }
        for (name, v) in [
            ("caption_noise", self.caption_noise),
            ("deixis_rate", self.deixis_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.filler_phrases.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Config("filler phrases must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub seed: u64,
    pub entities: Vec<Entity>,
    pub distractors: Vec<Entity>,
}

impl SynthWorld {
    pub fn distractors_of<'a>(&'a self, entity: &'a Entity) -> impl Iterator<Item = &'a Entity> {
        self.distractors
            .iter()
            .filter(move |d| d.distractor_of.as_deref() == Some(entity.id.as_str()))
    }

    /// Entities followed by distractors.
    pub fn objects(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().chain(&self.distractors)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        let spurious_words: HashSet<&str> =
            SPURIOUS_VOCAB.iter().flat_map(|s| s.split('_')).collect();
        for e in self.objects() {
            if !names.insert(e.canonical_name.as_str()) {
                return Err(Error::DuplicateId(e.canonical_name.clone()));
            }
            if e.attribute_tokens.is_empty() {
                return Err(Error::InvalidRecord {
                    id: e.id.clone(),
                    message: "no attribute tokens".into(),
                });
            }
            if e.attribute_tokens
                .iter()
                .any(|a| spurious_words.contains(a.as_str()))
            {
                return Err(Error::InvalidRecord {
                    id: e.id.clone(),
                    message: "attribute overlaps the spurious vocabulary".into(),
                });
            }
        }
        Ok(())
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS.choose(rng).unwrap(),
                NUCLEI.choose(rng).unwrap()
            )
        })
        .collect()
}

fn fresh_name(
    rng: &mut ChaCha8Rng,
    taken: &mut HashSet<String>,
    reserved: &HashSet<&str>,
) -> String {
    loop {
        let (a, b) = (pseudo_word(rng), pseudo_word(rng));
        if a == b || reserved.contains(a.as_str()) || reserved.contains(b.as_str()) {
            continue;
        }
        let name = format!("{a} {b}");
        if taken.insert(name.clone()) {
            return name;
        }
    }
}

fn sample_set(rng: &mut ChaCha8Rng, vocab: &[&str], n: usize) -> BTreeSet<String> {
    vocab
        .choose_multiple(rng, n)
        .map(|s| s.to_string())
        .collect()
}

/// Builds a world deterministically from `config.seed`.
pub fn generate_world(config: &SynthConfig) -> Result<SynthWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reserved: HashSet<&str> = ATTRIBUTE_VOCAB
        .iter()
        .copied()
        .chain(SPURIOUS_VOCAB.iter().flat_map(|s| s.split('_')))
        .chain(["the", "this", "it", "a", "an", "is", "and", "with"])
        .collect();
    let n_clusters = config.n_entities.div_ceil(ENTITIES_PER_CLUSTER);
    let clusters: Vec<BTreeSet<String>> = (0..n_clusters)
        .map(|_| sample_set(&mut rng, SPURIOUS_VOCAB, SPURIOUS_PER_CLUSTER))
        .collect();

    let mut taken = HashSet::new();
    let mut entities = Vec::with_capacity(config.n_entities);
    for i in 0..config.n_entities {
        let n_attrs = rng.random_range(3..=5);
        let cluster = rng.random_range(0..n_clusters);
        entities.push(Entity {
            id: format!("e{i:04}"),
            canonical_name: fresh_name(&mut rng, &mut taken, &reserved),
            category: *EntityCategory::ALL.choose(&mut rng).unwrap(),
            attribute_tokens: sample_set(&mut rng, ATTRIBUTE_VOCAB, n_attrs),
            spurious_tokens: clusters[cluster].clone(),
            cluster,
            distractor_of: None,
        });
    }

    let mut distractors = Vec::with_capacity(config.n_entities * config.distractors_per_entity);
    for e in &entities {
        for j in 0..config.distractors_per_entity {
            let mut attrs: Vec<String> = e.attribute_tokens.iter().cloned().collect();
            attrs.shuffle(&mut rng);
            let swaps = rng.random_range(1..=attrs.len().min(2));
            let unused: Vec<&str> = ATTRIBUTE_VOCAB
                .iter()
                .copied()
                .filter(|a| !e.attribute_tokens.contains(*a))
                .collect();
            let replacements = unused.choose_multiple(&mut rng, swaps);
            for (slot, r) in attrs.iter_mut().zip(replacements) {
                *slot = r.to_string();
            }
            distractors.push(Entity {
                id: format!("{}-d{}", e.id, j + 1),
                canonical_name: fresh_name(&mut rng, &mut taken, &reserved),
                category: e.category,
                attribute_tokens: attrs.into_iter().collect(),
                spurious_tokens: e.spurious_tokens.clone(),
                cluster: e.cluster,
                distractor_of: Some(e.id.clone()),
            });
        }
    }

    let world = SynthWorld {
        config: config.clone(),
        seed: config.seed,
        entities,
        distractors,
    };
    world.validate()?;
    Ok(world)
}
