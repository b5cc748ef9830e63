//! Scaled-cosine similarity against speaker centroids and its softmax
//! contrast loss.
//!
//! For anchor embedding e(j,i) the centroid of its own speaker excludes the
//! anchor itself (leave-one-out) before the cosine is taken; centroids of
//! other speakers use all M embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale and offset of the similarity: S = w * cos + b, with w kept
/// positive by clamping after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ge2eParams {
    pub w: f64,
    pub b: f64,
}

pub const GE2E_MIN_W: f64 = 1e-6;

impl Default for Ge2eParams {
    fn default() -> Self {
        Self { w: 10.0, b: -5.0 }
    }
}

impl Ge2eParams {
    pub fn clamp_w(&mut self) {
        self.w = self.w.max(GE2E_MIN_W);
    }
}

/// Dense N x M x N similarity tensor: anchor speaker j, anchor utterance i,
/// target speaker k.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTensor {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    values: Vec<f64>,
}

impl SimilarityTensor {
    pub fn get(&self, j: usize, i: usize, k: usize) -> f64 {
        let (n, m) = (self.n_speakers, self.utterances_per_speaker);
        debug_assert!(j < n && i < m && k < n);
        self.values[(j * m + i) * n + k]
    }

    fn row(&self, j: usize, i: usize) -> &[f64] {
        let n = self.n_speakers;
        let base = (j * self.utterances_per_speaker + i) * n;
        &self.values[base..base + n]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(a: &[f64], c: &[f64], context: &str) -> Result<f64> {
    let (na, nc) = (norm(a), norm(c));
    if na == 0.0 || nc == 0.0 {
        return Err(Error::ZeroNorm(context.to_string()));
    }
    Ok(dot(a, c) / (na * nc))
}

fn check_batch(embeddings: &[Vec<f64>], n: usize, m: usize) -> Result<usize> {
    if n < 2 || m < 2 {
        return Err(Error::InvalidConfig(
            "similarity batch needs N >= 2 speakers and M >= 2 utterances".into(),
        ));
    }
    if embeddings.len() != n * m {
        return Err(Error::LengthMismatch {
            left: embeddings.len(),
            right: n * m,
            context: "embedding batch".into(),
        });
    }
    let dim = embeddings[0].len();
    for e in embeddings {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.len(),
                context: "embedding batch".into(),
            });
        }
    }
    Ok(dim)
}

/// Centroid of speaker k as seen from anchor (j, i): leave-one-out for the
/// anchor's own speaker, full mean otherwise.
fn centroid(
    embeddings: &[Vec<f64>],
    sums: &[Vec<f64>],
    m: usize,
    j: usize,
    i: usize,
    k: usize,
) -> Vec<f64> {
    if k == j {
        let anchor = &embeddings[j * m + i];
        sums[k]
            .iter()
            .zip(anchor)
            .map(|(s, a)| (s - a) / (m as f64 - 1.0))
            .collect()
    } else {
        sums[k].iter().map(|s| s / m as f64).collect()
    }
}

/// S[j,i,k] = w * cos(e(j,i), c_k) + b with leave-one-out own-speaker
/// centroids. `embeddings` is laid out speaker-major: index j*M + i.
pub fn ge2e_similarity_matrix(
    embeddings: &[Vec<f64>],
    n_speakers: usize,
    utterances_per_speaker: usize,
    params: &Ge2eParams,
) -> Result<SimilarityTensor> {
    let (n, m) = (n_speakers, utterances_per_speaker);
    let dim = check_batch(embeddings, n, m)?;
    let sums: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut s = vec![0.0; dim];
            for i in 0..m {
                for (acc, v) in s.iter_mut().zip(&embeddings[k * m + i]) {
                    *acc += v;
                }
            }
            s
        })
        .collect();
    let mut values = Vec::with_capacity(n * m * n);
    for j in 0..n {
        for i in 0..m {
            let anchor = &embeddings[j * m + i];
            for k in 0..n {
                let c = centroid(embeddings, &sums, m, j, i, k);
                let cos = cosine(anchor, &c, "ge2e centroid")?;
                values.push(params.w * cos + params.b);
            }
        }
    }
    Ok(SimilarityTensor {
        n_speakers: n,
        utterances_per_speaker: m,
        values,
    })
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax contrast loss: sum over anchors of
/// `-S[j,i,j] + logsumexp_k S[j,i,k]`.
pub fn ge2e_softmax_loss(s: &SimilarityTensor) -> Result<f64> {
    if s.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity tensor".into()));
    }
    let mut loss = 0.0;
    for j in 0..s.n_speakers {
        for i in 0..s.utterances_per_speaker {
            let row = s.row(j, i);
            loss += -row[j] + logsumexp(row);
        }
    }
    Ok(loss)
}

/// Loss plus exact gradients with respect to every embedding and to (w, b).
pub struct Ge2eGrads {
    pub loss: f64,
    pub d_embeddings: Vec<Vec<f64>>,
    pub d_w: f64,
    pub d_b: f64,
}

pub fn ge2e_loss_grads(
    embeddings: &[Vec<f64>],
    n_speakers: usize,
    utterances_per_speaker: usize,
    params: &Ge2eParams,
) -> Result<Ge2eGrads> {
    let (n, m) = (n_speakers, utterances_per_speaker);
    let dim = check_batch(embeddings, n, m)?;
    let tensor = ge2e_similarity_matrix(embeddings, n, m, params)?;
    let loss = ge2e_softmax_loss(&tensor)?;

    let sums: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut s = vec![0.0; dim];
            for i in 0..m {
                for (acc, v) in s.iter_mut().zip(&embeddings[k * m + i]) {
                    *acc += v;
                }
            }
            s
        })
        .collect();

    let mut d_emb = vec![vec![0.0; dim]; n * m];
    let mut d_w = 0.0;
    let mut d_b = 0.0;
    for j in 0..n {
        for i in 0..m {
            let anchor = &embeddings[j * m + i];
            let row = tensor.row(j, i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for k in 0..n {
                // dL/dS = softmax - [k == j]
                let g = exps[k] / z - if k == j { 1.0 } else { 0.0 };
                let c = centroid(embeddings, &sums, m, j, i, k);
                let cos = (row[k] - params.b) / params.w;
                d_w += g * cos;
                d_b += g;
                let gc = g * params.w;
                let (na, nc) = (norm(anchor), norm(&c));
                // dcos/danchor and dcos/dcentroid
                for d in 0..dim {
                    let a_hat = anchor[d] / na;
                    let c_hat = c[d] / nc;
                    d_emb[j * m + i][d] += gc * (c_hat - cos * a_hat) / na;
                }
                let dc: Vec<f64> = (0..dim)
                    .map(|d| gc * (anchor[d] / na - cos * c[d] / nc) / nc)
                    .collect();
                // Distribute the centroid gradient onto its members.
                if k == j {
                    let scale = 1.0 / (m as f64 - 1.0);
                    for other in 0..m {
                        if other == i {
                            continue;
                        }
                        for d in 0..dim {
                            d_emb[j * m + other][d] += dc[d] * scale;
                        }
                    }
                } else {
                    let scale = 1.0 / m as f64;
                    for other in 0..m {
                        for d in 0..dim {
                            d_emb[k * m + other][d] += dc[d] * scale;
                        }
                    }
                }
            }
        }
    }
    Ok(Ge2eGrads {
        loss,
        d_embeddings: d_emb,
        d_w,
        d_b,
    })
}
