use ndarray::Array2;

/// Pooled statistics plus the winning row of every entry, for the backward pass.
pub(crate) struct Pooled {
    pub values: Array2<f64>,
    pub argmax: Array2<usize>,
}

pub(crate) fn local_max_pool_tracked(feats: &Array2<f64>, kernel: usize, stride: usize) -> Pooled {
    let (p, d) = feats.dim();
    let windows = p.div_ceil(stride);
    let mut values = Array2::from_elem((windows, d), f64::NEG_INFINITY);
    let mut argmax = Array2::zeros((windows, d));
    for w in 0..windows {
        let start = w * stride;
        let end = (start + kernel).min(p);
        for i in start..end {
            for c in 0..d {
                let v = feats[[i, c]];
                if v > values[[w, c]] {
                    values[[w, c]] = v;
                    argmax[[w, c]] = i;
                }
            }
        }
    }
    Pooled { values, argmax }
}

/// Channelwise max over windows `[w * stride, w * stride + kernel)` of the
/// point axis; `ceil(P / stride)` windows, the last one possibly partial.
pub fn local_max_pool(feats: &Array2<f64>, kernel: usize, stride: usize) -> Array2<f64> {
    assert!(kernel > 0 && stride > 0, "kernel and stride must be positive");
    local_max_pool_tracked(feats, kernel, stride).values
}

/// Routes pooled gradients back to the winning rows.
pub(crate) fn scatter_pool_grad(pooled: &Pooled, d_pooled: &Array2<f64>, d_feats: &mut Array2<f64>) {
    for ((w, c), &g) in d_pooled.indexed_iter() {
        d_feats[[pooled.argmax[[w, c]], c]] += g;
    }
}
