//! Cross-entropy over the query points and its exact reverse-mode gradient.
//!
//! Forward: FC stack on every support and query cloud, masked-average
//! prototypes of the refined support features, pooled statistics, attention
//! residual per query, cosine scores against the adjusted prototypes, and a
//! softmax cross-entropy on `gamma * score`. The log of the activation
//! `exp(-gamma (1 - s))` is `gamma s` up to a constant, so this is the same
//! softmax without the underflow.

use ndarray::{Array2, Axis};

use super::attention::{quest_backward, quest_forward, QuestForward};
use super::fc::{fc_backward, fc_forward_cached, FcCache};
use super::pool::{local_max_pool_tracked, scatter_pool_grad, Pooled};
use super::{QuestConfig, QuestWeights};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::head::{compute_prototypes, cosine_matrix, normalize_rows, predict, EpisodeFeatures, HeadConfig, Prediction};
use crate::types::Episode;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: QuestWeights,
    /// Query points that entered the loss.
    pub supervised_points: usize,
}

struct Forward {
    support_fc: Vec<Vec<(Array2<f64>, FcCache)>>,
    query_fc: Vec<(Array2<f64>, FcCache)>,
    protos: Array2<f64>,
    valid: Vec<bool>,
    support_pools: Vec<Vec<Pooled>>,
    query_pools: Vec<Pooled>,
    class_pooled: Vec<Vec<Array2<f64>>>,
    query_pooled: Vec<Array2<f64>>,
    quest: QuestForward,
}

fn forward(feats: &EpisodeFeatures, w: &QuestWeights, cfg: &QuestConfig) -> Result<Forward> {
    cfg.validate()?;
    let n_way = feats.n_way();
    if n_way == 0 || feats.query.is_empty() {
        return Err(Error::Quest("episode needs support and query clouds".into()));
    }
    if feats.channels() != w.channels() {
        return Err(Error::Quest(format!(
            "features have {} channels, weights expect {}",
            feats.channels(),
            w.channels()
        )));
    }
    let shots = feats.support[0].len();
    let pooled_len = w.pooled_len();
    let check_points = |p: usize| {
        if cfg.pooled_len(p) != pooled_len {
            Err(Error::Quest(format!(
                "{p} points pool to {} statistics, weights expect {pooled_len}",
                cfg.pooled_len(p)
            )))
        } else {
            Ok(())
        }
    };
    for f in feats.support.iter().flatten().chain(&feats.query) {
        check_points(f.point_count())?;
    }

    let support_fc: Vec<Vec<(Array2<f64>, FcCache)>> = feats
        .support
        .iter()
        .map(|shots| shots.iter().map(|f| fc_forward_cached(f.as_array(), w)).collect())
        .collect();
    let query_fc: Vec<(Array2<f64>, FcCache)> = feats
        .query
        .iter()
        .map(|f| fc_forward_cached(f.as_array(), w))
        .collect();

    let refined: Vec<Vec<&Array2<f64>>> = support_fc
        .iter()
        .map(|s| s.iter().map(|(x, _)| x).collect())
        .collect();
    let proto_set = compute_prototypes(&refined, &feats.support_labels)?;

    let support_pools: Vec<Vec<Pooled>> = support_fc
        .iter()
        .map(|s| {
            s.iter()
                .map(|(x, _)| local_max_pool_tracked(x, cfg.pool_kernel, cfg.pool_stride))
                .collect()
        })
        .collect();
    let query_pools: Vec<Pooled> = query_fc
        .iter()
        .map(|(x, _)| local_max_pool_tracked(x, cfg.pool_kernel, cfg.pool_stride))
        .collect();

    // background statistics of shot k: mean over the N support clouds of shot k
    let mut class_pooled = Vec::with_capacity(n_way + 1);
    class_pooled.push(
        (0..shots)
            .map(|k| {
                let mut acc = Array2::<f64>::zeros(support_pools[0][k].values.raw_dim());
                for pools in &support_pools {
                    acc += &pools[k].values;
                }
                acc / n_way as f64
            })
            .collect::<Vec<_>>(),
    );
    for pools in &support_pools {
        class_pooled.push(pools.iter().map(|p| p.values.clone()).collect());
    }
    let query_pooled: Vec<Array2<f64>> = query_pools.iter().map(|p| p.values.clone()).collect();

    let quest = quest_forward(
        &class_pooled,
        &query_pooled,
        proto_set.prototypes(),
        w,
        cfg.combine_mode,
    )?;
    Ok(Forward {
        support_fc,
        query_fc,
        protos: proto_set.prototypes().clone(),
        valid: proto_set.valid_mask().to_vec(),
        support_pools,
        query_pools,
        class_pooled,
        query_pooled,
        quest,
    })
}

/// Loss and gradients for already encoded episode features.
pub fn feature_loss(
    feats: &EpisodeFeatures,
    head: &HeadConfig,
    w: &QuestWeights,
    cfg: &QuestConfig,
) -> Result<LossOutput> {
    head.validate()?;
    let fwd = forward(feats, w, cfg)?;
    let classes = fwd.protos.nrows();
    let gamma = head.gamma;

    let labels: Vec<&Vec<i32>> = feats
        .query_labels
        .iter()
        .enumerate()
        .map(|(q, l)| {
            l.as_ref()
                .ok_or_else(|| Error::Training(format!("query cloud {q} has no labels")))
        })
        .collect::<Result<_>>()?;
    let supervised = |l: i32| l >= 0 && (l as usize) < classes && fwd.valid[l as usize];
    let total: usize = labels
        .iter()
        .map(|l| l.iter().filter(|&&v| supervised(v)).count())
        .sum();
    if total == 0 {
        return Err(Error::Training(
            "no query point carries a label with a support prototype".into(),
        ));
    }
    let inv_total = 1.0 / total as f64;

    let mut loss = 0.0;
    let mut grads = w.zeros_like();
    let mut d_query_fc: Vec<Array2<f64>> = Vec::with_capacity(fwd.query_fc.len());
    let mut d_adjusted = Vec::with_capacity(fwd.query_fc.len());

    for (q, (x, _)) in fwd.query_fc.iter().enumerate() {
        let adj = &fwd.quest.adjusted[q];
        let x_hat = normalize_rows(x);
        let p_hat = normalize_rows(adj);
        let mut s = x_hat.dot(&p_hat.t());
        for (c, &ok) in fwd.valid.iter().enumerate() {
            if !ok {
                s.column_mut(c).fill(0.0);
            }
        }
        let mut d_s = Array2::<f64>::zeros(s.raw_dim());
        for (i, &label) in labels[q].iter().enumerate() {
            if !supervised(label) {
                continue;
            }
            let row = s.row(i);
            let max = (0..classes)
                .filter(|&c| fwd.valid[c])
                .map(|c| gamma * row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..classes {
                if fwd.valid[c] {
                    z += (gamma * row[c] - max).exp();
                }
            }
            loss += (max + z.ln() - gamma * row[label as usize]) * inv_total;
            for c in 0..classes {
                if fwd.valid[c] {
                    let p = (gamma * row[c] - max).exp() / z;
                    let target = if c == label as usize { 1.0 } else { 0.0 };
                    d_s[[i, c]] = gamma * (p - target) * inv_total;
                }
            }
        }

        // cosine backward on both sides
        let gs_rows = (&d_s * &s).sum_axis(Axis(1));
        let gs_cols = (&d_s * &s).sum_axis(Axis(0));
        let mut d_x = d_s.dot(&p_hat) - &x_hat * &gs_rows.insert_axis(Axis(1));
        for (mut row, xr) in d_x.rows_mut().into_iter().zip(x.rows()) {
            let norm = xr.dot(&xr).sqrt();
            if norm > 0.0 {
                row /= norm;
            } else {
                row.fill(0.0);
            }
        }
        let mut d_adj = d_s.t().dot(&x_hat) - &p_hat * &gs_cols.insert_axis(Axis(1));
        for (mut row, pr) in d_adj.rows_mut().into_iter().zip(adj.rows()) {
            let norm = pr.dot(&pr).sqrt();
            if norm > 0.0 {
                row /= norm;
            } else {
                row.fill(0.0);
            }
        }
        d_query_fc.push(d_x);
        d_adjusted.push(d_adj);
    }

    let input_grads = quest_backward(
        &fwd.quest,
        &fwd.class_pooled,
        &fwd.query_pooled,
        &fwd.protos,
        w,
        cfg.combine_mode,
        &d_adjusted,
        &mut grads,
    );

    for (q, pool) in fwd.query_pools.iter().enumerate() {
        scatter_pool_grad(pool, &input_grads.query_pooled[q], &mut d_query_fc[q]);
    }

    let n_way = feats.n_way();
    let mut d_support_fc: Vec<Vec<Array2<f64>>> = fwd
        .support_fc
        .iter()
        .map(|s| s.iter().map(|(x, _)| Array2::zeros(x.raw_dim())).collect())
        .collect();
    for (n, pools) in fwd.support_pools.iter().enumerate() {
        for (k, pool) in pools.iter().enumerate() {
            let mut d_pooled = input_grads.support_pooled[n + 1][k].clone();
            d_pooled.scaled_add(1.0 / n_way as f64, &input_grads.support_pooled[0][k]);
            scatter_pool_grad(pool, &d_pooled, &mut d_support_fc[n][k]);
        }
    }

    // masked-average prototypes
    let mut counts = vec![0usize; classes];
    for (n, shots) in feats.support_labels.iter().enumerate() {
        for l in shots.iter().flatten() {
            if *l == 0 {
                counts[0] += 1;
            } else if *l == n as i32 + 1 {
                counts[n + 1] += 1;
            }
        }
    }
    for (n, shots) in feats.support_labels.iter().enumerate() {
        for (k, l) in shots.iter().enumerate() {
            for (i, &label) in l.iter().enumerate() {
                let slot = if label == 0 {
                    0
                } else if label == n as i32 + 1 {
                    n + 1
                } else {
                    continue;
                };
                let g = &input_grads.protos.row(slot) / counts[slot] as f64;
                d_support_fc[n][k].row_mut(i).scaled_add(1.0, &g);
            }
        }
    }

    for (q, (_, cache)) in fwd.query_fc.iter().enumerate() {
        fc_backward(cache, std::mem::take(&mut d_query_fc[q]), w, &mut grads);
    }
    for (n, shots) in fwd.support_fc.iter().enumerate() {
        for (k, (_, cache)) in shots.iter().enumerate() {
            fc_backward(cache, std::mem::take(&mut d_support_fc[n][k]), w, &mut grads);
        }
    }

    Ok(LossOutput {
        loss,
        grads,
        supervised_points: total,
    })
}

/// Encodes the episode with the frozen encoder and evaluates [`feature_loss`].
pub fn episode_loss(
    episode: &Episode,
    encoder: &EncoderConfig,
    head: &HeadConfig,
    w: &QuestWeights,
    cfg: &QuestConfig,
) -> Result<LossOutput> {
    feature_loss(&EpisodeFeatures::encode(episode, encoder)?, head, w, cfg)
}

/// Scores of every query against its own adjusted prototypes.
pub fn quest_scores(
    feats: &EpisodeFeatures,
    w: &QuestWeights,
    cfg: &QuestConfig,
) -> Result<(Vec<Array2<f64>>, QuestForward)> {
    let fwd = forward(feats, w, cfg)?;
    let scores = fwd
        .query_fc
        .iter()
        .zip(&fwd.quest.adjusted)
        .map(|((x, _), adj)| cosine_matrix(x, adj, &fwd.valid))
        .collect();
    Ok((scores, fwd.quest))
}

/// Segmentation with the trained adjustment.
pub fn segment_with_quest(
    feats: &EpisodeFeatures,
    head: &HeadConfig,
    w: &QuestWeights,
    cfg: &QuestConfig,
) -> Result<Prediction> {
    let (scores, _) = quest_scores(feats, w, cfg)?;
    predict(&scores, head)
}

/// Refined features, raw prototypes and adjusted prototypes of one episode,
/// for diagnostics.
pub struct QuestDiagnostics {
    pub query_refined: Vec<Array2<f64>>,
    pub prototypes: Array2<f64>,
    pub valid: Vec<bool>,
    pub adjusted: Vec<Array2<f64>>,
}

pub fn quest_diagnostics(
    feats: &EpisodeFeatures,
    w: &QuestWeights,
    cfg: &QuestConfig,
) -> Result<QuestDiagnostics> {
    let fwd = forward(feats, w, cfg)?;
    Ok(QuestDiagnostics {
        query_refined: fwd.query_fc.into_iter().map(|(x, _)| x).collect(),
        prototypes: fwd.protos,
        valid: fwd.valid,
        adjusted: fwd.quest.adjusted,
    })
}
