//! Content-addressed store of enhancement results.
//!
//! Keys digest everything that determines a reply, so a warm cache makes
//! re-enhancement free. Entries live in memory and, when a directory is
//! configured, as one JSON file per key.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::datamodel::EnhancedRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(
        template_id: &str,
        model_id: &str,
        input_text: &str,
        image_ref: Option<&str>,
        visual_tokens: &[String],
    ) -> Self {
        let mut tokens = Sha256::new();
        for t in visual_tokens {
            field(&mut tokens, t.as_bytes());
        }
        let token_digest = tokens.finalize();

        let mut h = Sha256::new();
        field(&mut h, template_id.as_bytes());
        field(&mut h, model_id.as_bytes());
        field(&mut h, input_text.as_bytes());
        match image_ref {
            Some(r) => {
                h.update([1u8]);
                field(&mut h, r.as_bytes());
            }
            None => h.update([0u8]),
        }
        field(&mut h, &token_digest);
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

// Length-prefixed so field boundaries can't be forged by concatenation.
fn field(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

#[derive(Debug, Default)]
pub struct EnhancementCache {
    entries: Mutex<HashMap<CacheKey, EnhancedRecord>>,
    dir: Option<PathBuf>,
}

impl EnhancementCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            entries: Mutex::default(),
            dir: Some(dir),
        })
    }

    fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.json", key.0)))
    }

    pub fn get(&self, key: &CacheKey) -> Option<EnhancedRecord> {
        if let Some(hit) = self.entries.lock().unwrap().get(key) {
            return Some(hit.clone());
        }
        let path = self.path_for(key)?;
        let raw = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<EnhancedRecord>(&raw) {
            Ok(rec) => {
                self.entries
                    .lock()
                    .unwrap()
                    .insert(key.clone(), rec.clone());
                Some(rec)
            }
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    /// Last write wins; concurrent puts of one key carry equal values.
    pub fn put(&self, key: CacheKey, record: EnhancedRecord) -> Result<()> {
        if let Some(path) = self.path_for(&key) {
            write_atomic(&path, &serde_json::to_vec(&record)?)?;
        }
        self.entries.lock().unwrap().insert(key, record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "tmp.{}.{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Category, Side};

    fn record(text: &str) -> EnhancedRecord {
        EnhancedRecord {
            source_id: "d1".into(),
            side: Side::CorpusSide,
            enhanced_text: text.into(),
            category: Category::II,
            template_id: "corpus_caption".into(),
            model_id: "m".into(),
            raw_reply: text.into(),
            fallback: false,
            over_budget: false,
        }
    }

    #[test]
    fn key_is_deterministic_and_field_sensitive() {
        let toks = vec!["sky_blue".to_string()];
        let k = CacheKey::new("t", "m", "x", Some("a.png"), &toks);
        assert_eq!(k, CacheKey::new("t", "m", "x", Some("a.png"), &toks));
        assert_ne!(k, CacheKey::new("t", "m2", "x", Some("a.png"), &toks));
        assert_ne!(k, CacheKey::new("t", "m", "x", None, &toks));
        assert_ne!(k, CacheKey::new("t", "m", "x", Some("a.png"), &[]));
        assert_ne!(
            CacheKey::new("ab", "c", "", None, &[]),
            CacheKey::new("a", "bc", "", None, &[])
        );
        assert_eq!(k.as_str().len(), 64);
    }

    #[test]
    fn get_after_put() {
        let cache = EnhancementCache::in_memory();
        let k = CacheKey::new("t", "m", "x", None, &[]);
        assert!(cache.get(&k).is_none());
        cache.put(k.clone(), record("c")).unwrap();
        assert_eq!(cache.get(&k), Some(record("c")));
    }

    #[test]
    fn persists_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let k = CacheKey::new("t", "m", "x", None, &[]);
        EnhancementCache::with_dir(dir.path())
            .unwrap()
            .put(k.clone(), record("c"))
            .unwrap();
        let fresh = EnhancementCache::with_dir(dir.path()).unwrap();
        assert_eq!(fresh.get(&k), Some(record("c")));
    }

    #[test]
    fn concurrent_puts_same_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EnhancementCache::with_dir(dir.path()).unwrap();
        let k = CacheKey::new("t", "m", "x", None, &[]);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.put(k.clone(), record("c")).unwrap());
            }
        });
        assert_eq!(cache.get(&k), Some(record("c")));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
