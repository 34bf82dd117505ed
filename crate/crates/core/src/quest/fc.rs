//! The shared fully connected stack:
//! `norm + relu`, then `fc_depth` times `linear + norm + relu`.
//!
//! Normalization statistics are computed over the points of each call, so
//! there is no separate inference mode.

use ndarray::{Array1, Array2, Axis};

use super::QuestWeights;

pub const NORM_EPS: f64 = 1e-5;

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct StageCache {
    /// Input of the linear map (`None` for the leading stage).
    linear_input: Option<Array2<f64>>,
    norm: NormCache,
    /// Normalized, scaled and shifted values before the relu.
    pre_relu: Array2<f64>,
}

pub(crate) struct FcCache {
    stages: Vec<StageCache>,
}

fn normalize(x: &Array2<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let mean = x.mean_axis(Axis(0)).expect("at least one point");
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
    let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
    let xhat = centered * &inv_std;
    let y = &xhat * scale + shift;
    (y, NormCache { xhat, inv_std })
}

/// Gradient of the normalization input given the gradient of its output.
fn normalize_backward(
    cache: &NormCache,
    scale: &Array1<f64>,
    d_out: &Array2<f64>,
    d_scale: &mut Array1<f64>,
    d_shift: &mut Array1<f64>,
) -> Array2<f64> {
    *d_scale += &(d_out * &cache.xhat).sum_axis(Axis(0));
    *d_shift += &d_out.sum_axis(Axis(0));
    let dxhat = d_out * scale;
    let mean_dxhat = dxhat.mean_axis(Axis(0)).unwrap();
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).mean_axis(Axis(0)).unwrap();
    (dxhat - &mean_dxhat - &cache.xhat * &mean_dxhat_xhat) * &cache.inv_std
}

pub(crate) fn fc_forward_cached(feats: &Array2<f64>, w: &QuestWeights) -> (Array2<f64>, FcCache) {
    let mut stages = Vec::with_capacity(w.linear.len() + 1);
    let (pre, norm) = normalize(feats, &w.norm_scale[0], &w.norm_shift[0]);
    let mut h = pre.mapv(|v| v.max(0.0));
    stages.push(StageCache {
        linear_input: None,
        norm,
        pre_relu: pre,
    });
    for (s, lin) in w.linear.iter().enumerate() {
        let z = h.dot(lin);
        let (pre, norm) = normalize(&z, &w.norm_scale[s + 1], &w.norm_shift[s + 1]);
        let next = pre.mapv(|v| v.max(0.0));
        stages.push(StageCache {
            linear_input: Some(std::mem::replace(&mut h, next)),
            norm,
            pre_relu: pre,
        });
    }
    (h, FcCache { stages })
}

/// Values entering each relu, one matrix per stage. Useful for checking how
/// close an input sits to the nondifferentiable points of the stack.
pub fn fc_pre_activations(feats: &Array2<f64>, w: &QuestWeights) -> Vec<Array2<f64>> {
    fc_forward_cached(feats, w)
        .1
        .stages
        .into_iter()
        .map(|s| s.pre_relu)
        .collect()
}

/// Accumulates parameter gradients for one call; the input gradient is dropped
/// because the encoder below is frozen.
pub(crate) fn fc_backward(cache: &FcCache, d_out: Array2<f64>, w: &QuestWeights, grads: &mut QuestWeights) {
    let mut d = d_out;
    for (s, stage) in cache.stages.iter().enumerate().rev() {
        let d_pre = &d * &stage.pre_relu.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let (scales, shifts) = (&mut grads.norm_scale, &mut grads.norm_shift);
        let d_z = normalize_backward(&stage.norm, &w.norm_scale[s], &d_pre, &mut scales[s], &mut shifts[s]);
        if let Some(input) = &stage.linear_input {
            grads.linear[s - 1] += &input.t().dot(&d_z);
            d = d_z.dot(&w.linear[s - 1].t());
        }
    }
}

/// Applies the stack to `feats` (`P x D`).
pub fn fc_forward(feats: &Array2<f64>, w: &QuestWeights) -> Array2<f64> {
    fc_forward_cached(feats, w).0
}
