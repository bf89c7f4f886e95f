//! Batch-hard triplet loss.
//!
//! For every anchor the farthest same-label sample and the nearest other-label
//! sample are mined from the batch, and the loss is the mean over anchors of
//! `max(0, margin + d_pos - d_neg)` or `softplus(d_pos - d_neg)`. Distances are
//! plain Euclidean; at zero distance the gradient of the norm is taken as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::squared_distance;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Margin {
    #[default]
    Soft,
    Hard(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    /// `d loss / d embedding`, one row per input embedding.
    pub gradient: Vec<Vec<f64>>,
    /// Fraction of anchors with a non-zero hinge (or, for the soft margin,
    /// whose hardest negative is not farther than the hardest positive).
    pub active_fraction: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn batch_hard_triplet_loss<V: AsRef<[f64]>>(
    embeddings: &[V],
    labels: &[usize],
    margin: Margin,
) -> Result<TripletLoss> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(Error::Batch(format!("{n} embeddings but {} labels", labels.len())));
    }
    if let Margin::Hard(m) = margin {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::Batch(format!("margin must be finite and non-negative, got {m}")));
        }
    }
    let dim = embeddings.first().map(|e| e.as_ref().len()).unwrap_or(0);
    if embeddings.iter().any(|e| e.as_ref().len() != dim) {
        return Err(Error::Batch("embeddings differ in dimension".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Batch("batch needs at least two distinct labels".into()));
    }
    if let Some((label, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Batch(format!("label {label} has a single sample in the batch")));
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(embeddings[i].as_ref(), embeddings[j].as_ref()).sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut loss = 0.0;
    let mut active = 0usize;
    let mut gradient = vec![vec![0.0; dim]; n];
    let scale = 1.0 / n as f64;
    for a in 0..n {
        let row = &dist[a * n..(a + 1) * n];
        let mut pos = None::<usize>;
        let mut neg = None::<usize>;
        for j in 0..n {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if pos.is_none_or(|p| row[j] > row[p]) {
                    pos = Some(j);
                }
            } else if neg.is_none_or(|q| row[j] < row[q]) {
                neg = Some(j);
            }
        }
        let (p, q) = (pos.expect("label has two members"), neg.expect("two labels"));
        let x = row[p] - row[q];

        let (value, slope) = match margin {
            Margin::Hard(m) => {
                let h = m + x;
                if h > 0.0 {
                    (h, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Margin::Soft => (softplus(x), sigmoid(x)),
        };
        loss += value;
        if match margin {
            Margin::Hard(_) => slope > 0.0,
            Margin::Soft => x >= 0.0,
        } {
            active += 1;
        }
        if slope == 0.0 {
            continue;
        }

        let c = slope * scale;
        add_norm_gradient(&mut gradient, embeddings, a, p, row[p], c);
        add_norm_gradient(&mut gradient, embeddings, a, q, row[q], -c);
    }

    Ok(TripletLoss {
        loss: loss * scale,
        gradient,
        active_fraction: active as f64 * scale,
    })
}

/// Adds `c * d||x_a - x_b|| / dx` to the rows of `a` and `b`.
fn add_norm_gradient<V: AsRef<[f64]>>(gradient: &mut [Vec<f64>], embeddings: &[V], a: usize, b: usize, d: f64, c: f64) {
    if d == 0.0 {
        return;
    }
    let (xa, xb) = (embeddings[a].as_ref(), embeddings[b].as_ref());
    for k in 0..xa.len() {
        let g = c * (xa[k] - xb[k]) / d;
        gradient[a][k] += g;
        gradient[b][k] -= g;
    }
}
