//! AdamW with decoupled weight decay.
//!
//! ```text
//! t     += 1
//! theta *= 1 - lr * wd
//! m      = b1 m + (1 - b1) g
//! v      = b2 v + (1 - b2) g^2
//! theta -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use super::{QuestConfig, QuestWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: QuestWeights,
    pub second_moment: QuestWeights,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &QuestWeights) -> Self {
        Self {
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
            step: 0,
        }
    }
}

/// One optimizer update of `weights` with learning rate `lr`.
pub fn adamw_step(
    weights: &mut QuestWeights,
    grads: &QuestWeights,
    state: &mut AdamState,
    lr: f64,
    cfg: &QuestConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    let grads = grads.tensors();
    let params = weights.tensors_mut();
    let firsts = state.first_moment.tensors_mut();
    let seconds = state.second_moment.tensors_mut();
    for (((p, (_, _, g)), m), v) in params.into_iter().zip(grads).zip(firsts).zip(seconds) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}
