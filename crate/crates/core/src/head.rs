//! Similarity-based segmentation head: masked-average prototypes, cosine
//! scores against the prototypes, and the exponential activation.

use std::borrow::Borrow;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, EncoderConfig};
use crate::error::{Error, Result};
use crate::types::{Episode, FeatureMatrix, PrototypeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub gamma: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { gamma: 400.0 }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma {} must be positive", self.gamma)));
        }
        Ok(())
    }
}

/// Masked average pooling over the support set.
///
/// `support_feats[n][k]` is shot `k` of target class `n + 1`. Foreground
/// class `n + 1` pools its own shots only; background pools the label-0
/// points of every shot. Classes without any point get a zero row and
/// `valid_mask = false`.
pub fn compute_prototypes<F: Borrow<Array2<f64>>>(
    support_feats: &[Vec<F>],
    support_labels: &[Vec<Vec<i32>>],
) -> Result<PrototypeSet> {
    let n = support_feats.len();
    if n == 0 || support_labels.len() != n {
        return Err(Error::InvalidArgument("support set shape mismatch".into()));
    }
    let d = support_feats[0]
        .first()
        .map(|f| f.borrow().ncols())
        .ok_or_else(|| Error::InvalidArgument("empty support shots".into()))?;
    let mut sums = Array2::<f64>::zeros((n + 1, d));
    let mut counts = vec![0usize; n + 1];
    for (ci, (shots, labels)) in support_feats.iter().zip(support_labels).enumerate() {
        if shots.len() != labels.len() {
            return Err(Error::InvalidArgument("support labels shape mismatch".into()));
        }
        let own = ci as i32 + 1;
        for (feats, labels) in shots.iter().zip(labels) {
            let feats = feats.borrow();
            if feats.nrows() != labels.len() || feats.ncols() != d {
                return Err(Error::InvalidArgument("support feature shape mismatch".into()));
            }
            for (row, &l) in feats.rows().into_iter().zip(labels) {
                let slot = if l == 0 {
                    0
                } else if l == own {
                    own as usize
                } else {
                    continue;
                };
                sums.row_mut(slot).scaled_add(1.0, &row);
                counts[slot] += 1;
            }
        }
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    PrototypeSet::new(sums, counts.iter().map(|&c| c > 0).collect())
}

/// Row-normalizes `m`; zero rows stay zero.
pub(crate) fn normalize_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Cosine similarity of one cloud's features against raw prototype rows.
pub(crate) fn cosine_matrix(
    feats: &Array2<f64>,
    prototypes: &Array2<f64>,
    valid: &[bool],
) -> Array2<f64> {
    let q = normalize_rows(feats);
    let p = normalize_rows(prototypes);
    let mut s = q.dot(&p.t());
    for (c, &ok) in valid.iter().enumerate() {
        if !ok {
            s.column_mut(c).fill(f64::NEG_INFINITY);
        }
    }
    s
}

/// `M x (N + 1)` cosine scores per query cloud; invalid classes are `-inf`.
pub fn cosine_scores(query_feats: &[FeatureMatrix], protos: &PrototypeSet) -> Result<Vec<Array2<f64>>> {
    query_feats
        .iter()
        .map(|f| {
            if f.channels() != protos.channels() {
                return Err(Error::InvalidArgument(format!(
                    "query has {} channels, prototypes {}",
                    f.channels(),
                    protos.channels()
                )));
            }
            Ok(cosine_matrix(f.as_array(), protos.prototypes(), protos.valid_mask()))
        })
        .collect()
}

/// `exp(-gamma (1 - s))`.
pub fn activation(score: f64, gamma: f64) -> f64 {
    (-gamma * (1.0 - score)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<Array2<f64>>,
    pub labels: Vec<Vec<i32>>,
}

/// Index of the largest entry of `row`, lowest index on ties.
pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Activated logits and argmax labels.
///
/// The prototype label matrix is the identity, so the logits are the
/// activation applied elementwise. Labels are taken on the raw scores:
/// the activation is strictly increasing, and scores do not underflow the
/// way `exp(-gamma ...)` does for large `gamma`.
pub fn predict(scores: &[Array2<f64>], cfg: &HeadConfig) -> Result<Prediction> {
    cfg.validate()?;
    let logits = scores
        .iter()
        .map(|s| s.mapv(|v| activation(v, cfg.gamma)))
        .collect();
    let labels = scores
        .iter()
        .map(|s| s.rows().into_iter().map(|r| argmax(r) as i32).collect())
        .collect();
    Ok(Prediction { logits, labels })
}

/// Encoded support and query features of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeFeatures {
    pub support: Vec<Vec<FeatureMatrix>>,
    pub support_labels: Vec<Vec<Vec<i32>>>,
    pub query: Vec<FeatureMatrix>,
    pub query_labels: Vec<Option<Vec<i32>>>,
}

impl EpisodeFeatures {
    pub fn encode(episode: &Episode, cfg: &EncoderConfig) -> Result<Self> {
        let support = episode
            .support()
            .iter()
            .map(|shots| {
                shots
                    .iter()
                    .map(|c| encode(c, cfg).map(|e| e.final_features))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let query = episode
            .query()
            .iter()
            .map(|c| encode(c, cfg).map(|e| e.final_features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            support,
            support_labels: episode.support_labels(),
            query,
            query_labels: episode.query_labels(),
        })
    }

    pub fn n_way(&self) -> usize {
        self.support.len()
    }

    pub fn channels(&self) -> usize {
        self.query[0].channels()
    }
}

/// Training-free segmentation of already encoded features.
pub fn segment_features(feats: &EpisodeFeatures, cfg: &HeadConfig) -> Result<Prediction> {
    let support: Vec<Vec<&Array2<f64>>> = feats
        .support
        .iter()
        .map(|s| s.iter().map(FeatureMatrix::as_array).collect())
        .collect();
    let protos = compute_prototypes(&support, &feats.support_labels)?;
    let scores = cosine_scores(&feats.query, &protos)?;
    predict(&scores, cfg)
}

/// Training-free segmentation of an episode, end to end.
pub fn segment_episode(
    episode: &Episode,
    encoder: &EncoderConfig,
    head: &HeadConfig,
) -> Result<Prediction> {
    segment_features(&EpisodeFeatures::encode(episode, encoder)?, head)
}
