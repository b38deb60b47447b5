use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hashing::TokenHasher;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const INIT_NOISE: f64 = 1e-3;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `selfᵀ · x` for `x` of length `rows`; zero rows of `x` are skipped.
    pub fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += xr * w;
            }
        }
        out
    }

    /// `self += x ⊗ g` (outer product, `x` over rows, `g` over columns).
    pub fn add_outer(&mut self, x: &[f64], g: &[f64]) {
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (w, gc) in self.row_mut(r).iter_mut().zip(g) {
                *w += xr * gc;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Query and document projections over a shared hashed input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTowerModel {
    pub version: u32,
    pub dim_in: usize,
    pub dim_out: usize,
    pub temperature: f64,
    /// Seeds both the token hasher and the initial weights.
    pub seed: u64,
    pub w_query: Matrix,
    pub w_doc: Matrix,
}

impl TwoTowerModel {
    /// Folded identity (`W[i][i mod dim_out] = 1`) plus uniform noise of
    /// amplitude [`INIT_NOISE`], seeded per tower.
    pub fn init(dim_in: usize, dim_out: usize, temperature: f64, seed: u64) -> Result<Self> {
        TokenHasher::new(seed, dim_in)?;
        if dim_out == 0 {
            return Err(Error::Config("output dimension must be >= 1".into()));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let tower = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut m = Matrix::zeros(dim_in, dim_out);
            for r in 0..dim_in {
                for c in 0..dim_out {
                    let base = if r % dim_out == c { 1.0 } else { 0.0 };
                    m.data[r * dim_out + c] = base + rng.random_range(-INIT_NOISE..INIT_NOISE);
                }
            }
            m
        };
        Ok(Self {
            version: CHECKPOINT_VERSION,
            dim_in,
            dim_out,
            temperature,
            seed,
            w_query: tower(1),
            w_doc: tower(2),
        })
    }

    /// Exact identity towers; requires `dim_in == dim_out`.
    pub fn identity(dim: usize, temperature: f64, seed: u64) -> Result<Self> {
        let mut m = Self::init(dim, dim, temperature, seed)?;
        for w in [&mut m.w_query, &mut m.w_doc] {
            for r in 0..dim {
                for c in 0..dim {
                    w.data[r * dim + c] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(m)
    }

    pub fn hasher(&self) -> TokenHasher {
        TokenHasher {
            seed: self.seed,
            dim: self.dim_in,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        for (name, w) in [("w_query", &self.w_query), ("w_doc", &self.w_doc)] {
            if w.rows != self.dim_in || w.cols != self.dim_out || w.data.len() != w.rows * w.cols {
                return Err(Error::Config(format!("{name} has wrong shape")));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    pub fn project_query(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.w_query, x)
    }

    pub fn project_doc(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.w_doc, x)
    }

    fn project(&self, w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim_in {
            return Err(Error::DimensionMismatch {
                expected: self.dim_in,
                actual: x.len(),
            });
        }
        let mut z = w.transpose_mul(x);
        super::normalize(&mut z);
        Ok(z)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_slice(&raw)?;
        if model.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                model.version
            )));
        }
        model.validate()?;
        Ok(model)
    }

    /// Short content digest used to identify checkpoints in reports.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}
