//! InfoNCE over in-batch (and optional extra) negatives with analytic
//! gradients for both towers.

use super::model::{Matrix, TwoTowerModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_query: Matrix,
    pub grad_doc: Matrix,
}

struct Projected {
    unit: Vec<f64>,
    norm: f64,
}

fn project(w: &Matrix, x: &[f64]) -> Projected {
    let u = w.transpose_mul(x);
    let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let unit = if norm > 0.0 {
        u.iter().map(|a| a / norm).collect()
    } else {
        u
    };
    Projected { unit, norm }
}

/// Backpropagates through `û = u / ‖u‖`: `(g − û(û·g)) / ‖u‖`.
fn unnormalize_grad(p: &Projected, g: &[f64]) -> Vec<f64> {
    if p.norm == 0.0 {
        return vec![0.0; g.len()];
    }
    let dot: f64 = p.unit.iter().zip(g).map(|(a, b)| a * b).sum();
    g.iter()
        .zip(&p.unit)
        .map(|(gi, ui)| (gi - ui * dot) / p.norm)
        .collect()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_inputs(model: &TwoTowerModel, sets: &[&[Vec<f64>]]) -> Result<()> {
    for set in sets {
        for v in *set {
            if v.len() != model.dim_in {
                return Err(Error::DimensionMismatch {
                    expected: model.dim_in,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("loss input".into()));
            }
        }
    }
    Ok(())
}

/// Query-to-document InfoNCE.
///
/// Row `i` scores query `i` against the `B` positives followed by `extra`;
/// the target is column `i`. With `symmetric`, the document-to-query loss
/// over the `B × B` block is added.
pub fn infonce_loss(
    model: &TwoTowerModel,
    queries: &[Vec<f64>],
    positives: &[Vec<f64>],
    extra: &[Vec<f64>],
    symmetric: bool,
) -> Result<LossOutput> {
    let b = queries.len();
    if b == 0 || positives.len() != b {
        return Err(Error::Config(format!(
            "batch needs matching non-empty queries/positives, got {}/{}",
            b,
            positives.len()
        )));
    }
    check_inputs(model, &[queries, positives, extra])?;
    model.validate()?;
    let tau = model.temperature;

    let q: Vec<Projected> = queries.iter().map(|x| project(&model.w_query, x)).collect();
    let docs: Vec<&Vec<f64>> = positives.iter().chain(extra).collect();
    let d: Vec<Projected> = docs.iter().map(|x| project(&model.w_doc, x)).collect();
    let m = d.len();

    let mut logits = vec![0.0; b * m];
    for i in 0..b {
        for j in 0..m {
            let s: f64 = q[i].unit.iter().zip(&d[j].unit).map(|(a, c)| a * c).sum();
            logits[i * m + j] = s / tau;
        }
    }

    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    // dL/ds, row-major b × m
    let mut g = vec![0.0; b * m];
    for i in 0..b {
        let row = &logits[i * m..(i + 1) * m];
        loss += (log_sum_exp(row) - row[i]) * inv_b;
        let mut p = row.to_vec();
        softmax_in_place(&mut p);
        for j in 0..m {
            g[i * m + j] = (p[j] - if i == j { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    if symmetric {
        for j in 0..b {
            let mut col: Vec<f64> = (0..b).map(|i| logits[i * m + j]).collect();
            loss += (log_sum_exp(&col) - col[j]) * inv_b;
            softmax_in_place(&mut col);
            for i in 0..b {
                g[i * m + j] += (col[i] - if i == j { 1.0 } else { 0.0 }) * inv_b;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }

    let k = model.dim_out;
    let mut grad_query = Matrix::zeros(model.dim_in, k);
    for i in 0..b {
        let mut gu = vec![0.0; k];
        for j in 0..m {
            let gij = g[i * m + j] / tau;
            if gij != 0.0 {
                for (acc, v) in gu.iter_mut().zip(&d[j].unit) {
                    *acc += gij * v;
                }
            }
        }
        grad_query.add_outer(&queries[i], &unnormalize_grad(&q[i], &gu));
    }
    let mut grad_doc = Matrix::zeros(model.dim_in, k);
    for j in 0..m {
        let mut gv = vec![0.0; k];
        for i in 0..b {
            let gij = g[i * m + j] / tau;
            if gij != 0.0 {
                for (acc, u) in gv.iter_mut().zip(&q[i].unit) {
                    *acc += gij * u;
                }
            }
        }
        grad_doc.add_outer(docs[j], &unnormalize_grad(&d[j], &gv));
    }

    Ok(LossOutput {
        loss,
        grad_query,
        grad_doc,
    })
}
