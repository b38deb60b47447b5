//! Exact top-k search over normalized embeddings.
//!
//! Scores are plain dot products accumulated left to right, so results are
//! bit-identical across runs and thread counts. Ties rank by ascending id.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::embed::Embedding;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UMRIDX\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    /// Row-major `len × dim`.
    rows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResult {
    pub entries: Vec<(String, f64)>,
}

impl SearchResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

impl VectorIndex {
    pub fn build(vectors: Vec<(String, Embedding)>) -> Result<Self> {
        let Some((_, first)) = vectors.first() else {
            return Err(Error::Config("cannot build an empty index".into()));
        };
        let dim = first.len();
        let mut seen = HashSet::with_capacity(vectors.len());
        let mut ids = Vec::with_capacity(vectors.len());
        let mut rows = Vec::with_capacity(vectors.len() * dim);
        for (id, v) in vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            rows.extend_from_slice(&v);
        }
        Ok(Self { dim, ids, rows })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn rank(&self, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
    }

    /// The `min(k, len)` highest dot products with `query`.
    pub fn search(&self, query: &[f64], k: usize) -> Result<SearchResult> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|i| (dot(query, self.row(i)), i))
            .collect();
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |a, b| self.rank(a, b));
            scored.truncate(k);
        }
        scored.sort_unstable_by(|a, b| self.rank(a, b));
        Ok(SearchResult {
            entries: scored
                .into_iter()
                .map(|(s, i)| (self.ids[i].clone(), s))
                .collect(),
        })
    }

    /// [`search`](Self::search) for every query, parallel when enabled.
    pub fn batch_search(&self, queries: &[Embedding], k: usize) -> Result<Vec<SearchResult>> {
        crate::par::try_map(queries, |q| self.search(q, k))
    }

    pub fn batch_search_serial(
        &self,
        queries: &[Embedding],
        k: usize,
    ) -> Result<Vec<SearchResult>> {
        queries.iter().map(|q| self.search(q, k)).collect()
    }

    /// Binary layout: magic, version (u32), N (u64), dim (u64), N·dim f64
    /// row-major, then N ids as (u32 byte length, UTF-8). Little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(24 + self.rows.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for x in &self.rows {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut raw = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut raw))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Parse {
            path: path.to_owned(),
            line: 0,
            message: m.to_owned(),
        };
        let mut cur = Cursor { buf: &raw, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not an index file"));
        }
        let version = u32::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?);
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported index version {version}")));
        }
        let n = u64::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?) as usize;
        let dim = u64::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?) as usize;
        let mut rows = Vec::with_capacity(n.saturating_mul(dim).min(1 << 24));
        for _ in 0..n * dim {
            rows.push(f64::from_le_bytes(
                cur.array().ok_or_else(|| bad("truncated matrix"))?,
            ));
        }
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len =
                u32::from_le_bytes(cur.array().ok_or_else(|| bad("truncated id table"))?) as usize;
            let bytes = cur.take(len).ok_or_else(|| bad("truncated id table"))?;
            ids.push(String::from_utf8(bytes.to_vec()).map_err(|_| bad("id is not UTF-8"))?);
        }
        if cur.pos != raw.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { dim, ids, rows })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N)?.try_into().ok()
    }
}
