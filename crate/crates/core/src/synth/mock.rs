//! Deterministic stand-in for the enhancer, backed by the answer file.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::emit::{build_benchmark, AnswerFile, ImageAnswer};
use super::world::SynthWorld;
use crate::enhance::gateway::{ChatRequest, GatewayError, VlmGateway};
use crate::enhance::prompts::{CORPUS_CAPTION, MODIFICATION, QA_REWRITE, QUERY_CAPTION};
use crate::error::Result;

/// Words a modification request loses during distillation.
pub const BANNED_WORDS: &[&str] = &[
    "is", "has", "make", "change", "show", "put", "be", "it", "the", "a", "an", "my", "me", "them",
    "this",
];

#[derive(Debug, Clone)]
pub struct MockVlm {
    answers: AnswerFile,
    /// Filler phrases as lowercase token lists, longest first.
    fillers: Vec<Vec<String>>,
}

fn first_line(template: &str) -> &str {
    template.lines().next().unwrap_or_default()
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.rfind(start)? + start.len();
    let rest = &text[from..];
    Some(rest.find(end).map_or(rest, |i| &rest[..i]).trim())
}

impl MockVlm {
    pub fn new(answers: AnswerFile) -> Self {
        let mut fillers: Vec<Vec<String>> = answers
            .filler_phrases
            .iter()
            .map(|f| f.split_whitespace().map(str::to_lowercase).collect())
            .collect();
        fillers.sort_by_key(|f| std::cmp::Reverse(f.len()));
        Self { answers, fillers }
    }

    pub fn for_world(world: &SynthWorld) -> Result<Self> {
        Ok(Self::new(build_benchmark(world)?.answers))
    }

    pub fn answers(&self) -> &AnswerFile {
        &self.answers
    }

    fn lookup(&self, request: &ChatRequest) -> std::result::Result<&ImageAnswer, GatewayError> {
        let refs = request.image_refs();
        let r = refs
            .first()
            .ok_or_else(|| GatewayError::Permanent("request carries no image".into()))?;
        self.answers
            .images
            .get(*r)
            .ok_or_else(|| GatewayError::Permanent(format!("unknown image {r}")))
    }

    /// Name, category, the attributes that survive caption noise, and one
    /// or two scene tokens.
    pub fn caption(&self, image_ref: &str, a: &ImageAnswer) -> String {
        let mut h = Sha256::new();
        h.update(self.answers.seed.to_le_bytes());
        h.update(image_ref.as_bytes());
        let digest = h.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let attrs: Vec<&String> = a.attribute_tokens.iter().collect();
        let drop = (self.answers.caption_noise * attrs.len() as f64).round() as usize;
        let mut idx: Vec<usize> = (0..attrs.len()).collect();
        idx.shuffle(&mut rng);
        let mut kept: Vec<usize> = idx[drop.min(attrs.len())..].to_vec();
        kept.sort_unstable();

        let spurious: Vec<&String> = a.spurious_tokens.iter().collect();
        let n_spurious = rng.random_range(1..=2).min(spurious.len());
        let mut sidx: Vec<usize> = (0..spurious.len()).collect();
        sidx.shuffle(&mut rng);
        let mut chosen: Vec<usize> = sidx[..n_spurious].to_vec();
        chosen.sort_unstable();

        let mut parts = vec![a.canonical_name.clone(), a.category.noun().to_owned()];
        parts.extend(kept.into_iter().map(|i| attrs[i].clone()));
        parts.extend(chosen.into_iter().map(|i| spurious[i].clone()));
        parts.join(", ")
    }

    /// Replaces the first deictic reference with the subject's name.
    pub fn resolve_deixis(query: &str, a: &ImageAnswer) -> String {
        let named = format!("the {}", a.canonical_name);
        let phrase = a.category.deictic();
        let lower = query.to_lowercase();
        if let Some(i) = find_word(&lower, &phrase) {
            return format!("{}{}{}", &query[..i], named, &query[i + phrase.len()..]);
        }
        for w in ["this", "it"] {
            if let Some(i) = find_word(&lower, w) {
                return format!("{}{}{}", &query[..i], named, &query[i + w.len()..]);
            }
        }
        query.to_owned()
    }

    /// Strips filler phrases and grammar words from a modification request.
    pub fn distill(&self, input: &str) -> String {
        let raw: Vec<&str> = input.split_whitespace().collect();
        let lower: Vec<String> = raw.iter().map(|t| t.to_lowercase()).collect();
        let mut keep = vec![true; raw.len()];
        let mut i = 0;
        while i < raw.len() {
            let hit = self
                .fillers
                .iter()
                .find(|f| !f.is_empty() && lower.get(i..i + f.len()) == Some(f.as_slice()));
            match hit {
                Some(f) => {
                    keep[i..i + f.len()].iter_mut().for_each(|k| *k = false);
                    i += f.len();
                }
                None => i += 1,
            }
        }

        let mut tokens: Vec<(usize, String)> = raw
            .iter()
            .enumerate()
            .filter(|(i, _)| keep[*i])
            .map(|(i, t)| (i, t.to_string()))
            .collect();
        if let Some((_, last)) = tokens.last_mut() {
            if let Some(stripped) = last.strip_suffix('.') {
                *last = stripped.to_owned();
            }
        }
        let banned: HashSet<&str> = BANNED_WORDS.iter().copied().collect();
        tokens.retain(|(_, t)| !t.is_empty() && !banned.contains(t.to_lowercase().as_str()));

        let mut out: Vec<String> = Vec::with_capacity(tokens.len());
        let mut phrase_len = 0;
        for (_, t) in &tokens {
            if t.eq_ignore_ascii_case("and") {
                if phrase_len >= 2 {
                    if let Some(prev) = out.last_mut() {
                        prev.push(';');
                    }
                    phrase_len = 0;
                }
                continue;
            }
            out.push(t.clone());
            phrase_len += 1;
        }
        let mut text = out.join(" ");
        let first_deleted = tokens.first().is_none_or(|(i, _)| *i != 0);
        if first_deleted {
            let mut c = text.chars();
            text = match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            };
        }
        text
    }

    pub fn reply(&self, request: &ChatRequest) -> std::result::Result<String, GatewayError> {
        let text = request.text();
        let starts = |t: &str| text.starts_with(first_line(t));
        if starts(CORPUS_CAPTION) || starts(QUERY_CAPTION) {
            let refs = request.image_refs();
            let a = self.lookup(request)?;
            Ok(self.caption(refs[0], a))
        } else if starts(QA_REWRITE) {
            let a = self.lookup(request)?;
            let query = between(&text, "\nQuery: ", "\nInput Image:")
                .ok_or_else(|| GatewayError::Permanent("no query in request".into()))?;
            Ok(Self::resolve_deixis(query, a))
        } else if starts(MODIFICATION) {
            let input = between(&text, "Current Input: ", "\nOutput:")
                .ok_or_else(|| GatewayError::Permanent("no input in request".into()))?;
            Ok(self.distill(input))
        } else {
            Err(GatewayError::Permanent("unrecognized prompt".into()))
        }
    }
}

/// Byte offset of `word` in `haystack` at word boundaries.
fn find_word(haystack: &str, word: &str) -> Option<usize> {
    let bytes = haystack.as_bytes();
    let mut from = 0;
    while let Some(off) = haystack[from..].find(word) {
        let i = from + off;
        let end = i + word.len();
        let before = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let after = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if before && after {
            return Some(i);
        }
        from = i + 1;
    }
    None
}

impl VlmGateway for MockVlm {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, GatewayError> {
        self.reply(request)
    }
}
