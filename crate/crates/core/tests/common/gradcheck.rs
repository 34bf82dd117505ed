//! Finite-difference checking of the hand-written QUEST gradients.

use super::fixtures::{jitter_weights, random_features, rng};
use tfs3d_core::quest::{
    fc_forward, fc_pre_activations, feature_loss, CombineMode, QuestConfig, QuestWeights,
};
use tfs3d_core::{EpisodeFeatures, HeadConfig};

pub const H: f64 = 1e-4;
/// Instances are redrawn until every relu input and every positive max-pool
/// gap is at least this far from a kink, so a step of `H` cannot cross one.
pub const KINK_MARGIN: f64 = 2e-3;

pub fn kink_margin(feats: &EpisodeFeatures, w: &QuestWeights, kernel: usize) -> f64 {
    let mut margin = f64::INFINITY;
    for f in feats.support.iter().flatten().chain(&feats.query) {
        for pre in fc_pre_activations(f.as_array(), w) {
            margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
        }
        let out = fc_forward(f.as_array(), w);
        for start in (0..out.nrows()).step_by(kernel) {
            let end = (start + kernel).min(out.nrows());
            for col in out.columns() {
                let mut top = [f64::NEG_INFINITY; 2];
                for &v in col.slice(ndarray::s![start..end]) {
                    if v > top[0] {
                        top = [v, top[0]];
                    } else if v > top[1] {
                        top[1] = v;
                    }
                }
                if top[0] > 0.0 && end - start > 1 {
                    margin = margin.min(top[0] - top[1]);
                }
            }
        }
    }
    margin
}

/// Worst per-tensor relative error `|a - f| / max(|a|, |f|)` over all tensors.
pub fn max_relative_error(seed: u64, combine: CombineMode, gamma: f64) -> (f64, String) {
    let cfg = QuestConfig {
        pool_kernel: 8,
        pool_stride: 8,
        combine_mode: combine,
        seed,
        ..QuestConfig::default()
    };
    let head = HeadConfig { gamma };
    let (feats, w) = (0..)
        .map(|attempt| {
            let mut r = rng(seed * 1000 + attempt);
            let feats = random_features(&mut r, 2, 1, 1, 32, 6);
            let mut w = QuestWeights::init(6, 4, cfg.fc_depth, seed + attempt);
            jitter_weights(&mut w, &mut r, 0.3);
            (feats, w)
        })
        .find(|(f, w)| kink_margin(f, w, cfg.pool_kernel) >= KINK_MARGIN)
        .unwrap();
    let analytic = feature_loss(&feats, &head, &w, &cfg).unwrap().grads;

    let mut worst = (0.0, String::new());
    let names: Vec<String> = w.tensors().into_iter().map(|t| t.0).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|t| t.2.to_vec()).collect();
    for (t, name) in names.iter().enumerate() {
        let len = grads[t].len();
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut f2 = 0.0;
        for i in 0..len {
            let mut plus = w.clone();
            plus.tensors_mut()[t][i] += H;
            let mut minus = w.clone();
            minus.tensors_mut()[t][i] -= H;
            let lp = feature_loss(&feats, &head, &plus, &cfg).unwrap().loss;
            let lm = feature_loss(&feats, &head, &minus, &cfg).unwrap().loss;
            let fd = (lp - lm) / (2.0 * H);
            let a = grads[t][i];
            diff2 += (a - fd).powi(2);
            a2 += a * a;
            f2 += fd * fd;
        }
        let scale = a2.sqrt().max(f2.sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}

