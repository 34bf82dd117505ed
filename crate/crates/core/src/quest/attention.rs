//! Channel-wise cross-attention between query and support statistics.
//!
//! With pooled query statistics `Fq` (`M' x D`) and pooled support statistics
//! `Fs_k` (`M' x D`) for one class and shot:
//!
//! ```text
//! Qm = Fq^T Wq            (D x M')
//! Km = Fs_k^T Wk          (D x M')
//! V  = P Wv               ((N+1) x D)
//! A  = softmax_rows(Qm Km^T / sqrt(D))   (D x D)
//! r_k = Wout (A V[n])     (D)
//! adjusted[n] = P[n] + combine_k r_k
//! ```
//!
//! Every channel of the query attends over the support channels, which keeps
//! the attention `D x D` per query, class and shot.

use ndarray::{Array1, Array2, Axis};

use super::{CombineMode, QuestWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuestForward {
    /// `adjusted[q]` is `(N+1) x D`.
    pub adjusted: Vec<Array2<f64>>,
    /// `attention[q][n][k]`, each `D x D` with rows summing to one.
    pub attention: Vec<Vec<Vec<Array2<f64>>>>,
    query_proj: Vec<Array2<f64>>,
    support_proj: Vec<Vec<Array2<f64>>>,
    values: Array2<f64>,
    /// `A V[n]` for every `[q][n][k]`.
    mixed: Vec<Vec<Vec<Array1<f64>>>>,
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
}

fn combine_weight(mode: CombineMode, shots: usize) -> f64 {
    match mode {
        CombineMode::Sum => 1.0,
        CombineMode::Mean => 1.0 / shots as f64,
    }
}

/// Adjusted prototypes for every query.
///
/// `support_pooled[n][k]` holds the pooled statistics for class `n`
/// (0 = background) and shot `k`; `protos` is `(N+1) x D`.
pub fn quest_forward(
    support_pooled: &[Vec<Array2<f64>>],
    query_pooled: &[Array2<f64>],
    protos: &Array2<f64>,
    w: &QuestWeights,
    combine: CombineMode,
) -> Result<QuestForward> {
    let classes = protos.nrows();
    let d = protos.ncols();
    let mp = w.pooled_len();
    if w.channels() != d {
        return Err(Error::Quest(format!(
            "prototypes have {d} channels, weights expect {}",
            w.channels()
        )));
    }
    if support_pooled.len() != classes {
        return Err(Error::Quest(format!(
            "{} support groups for {classes} prototypes",
            support_pooled.len()
        )));
    }
    let shots = support_pooled[0].len();
    if shots == 0 || support_pooled.iter().any(|s| s.len() != shots) {
        return Err(Error::Quest("every class needs the same nonzero shot count".into()));
    }
    let bad_shape = |m: &Array2<f64>| m.dim() != (mp, d);
    if query_pooled.iter().any(bad_shape) || support_pooled.iter().flatten().any(bad_shape) {
        return Err(Error::Quest(format!("pooled statistics must be {mp} x {d}")));
    }

    let scale = 1.0 / (d as f64).sqrt();
    let query_proj: Vec<Array2<f64>> = query_pooled.iter().map(|f| f.t().dot(&w.w_q)).collect();
    let support_proj: Vec<Vec<Array2<f64>>> = support_pooled
        .iter()
        .map(|shots| shots.iter().map(|f| f.t().dot(&w.w_k)).collect())
        .collect();
    let values = protos.dot(&w.w_v);
    let cw = combine_weight(combine, shots);

    let mut adjusted = Vec::with_capacity(query_pooled.len());
    let mut attention = Vec::with_capacity(query_pooled.len());
    let mut mixed = Vec::with_capacity(query_pooled.len());
    for qm in &query_proj {
        let mut adj = protos.clone();
        let mut att_q = Vec::with_capacity(classes);
        let mut mix_q = Vec::with_capacity(classes);
        for n in 0..classes {
            let mut att_n = Vec::with_capacity(shots);
            let mut mix_n = Vec::with_capacity(shots);
            for km in &support_proj[n] {
                let mut a = qm.dot(&km.t());
                a *= scale;
                softmax_rows(&mut a);
                let y = a.dot(&values.row(n));
                let r = w.w_out.dot(&y);
                adj.row_mut(n).scaled_add(cw, &r);
                att_n.push(a);
                mix_n.push(y);
            }
            att_q.push(att_n);
            mix_q.push(mix_n);
        }
        adjusted.push(adj);
        attention.push(att_q);
        mixed.push(mix_q);
    }
    Ok(QuestForward {
        adjusted,
        attention,
        query_proj,
        support_proj,
        values,
        mixed,
    })
}

pub(crate) struct AttentionInputGrads {
    pub protos: Array2<f64>,
    pub query_pooled: Vec<Array2<f64>>,
    pub support_pooled: Vec<Vec<Array2<f64>>>,
}

/// Backward pass of [`quest_forward`] given `d_adjusted[q]`.
pub(crate) fn quest_backward(
    fwd: &QuestForward,
    support_pooled: &[Vec<Array2<f64>>],
    query_pooled: &[Array2<f64>],
    protos: &Array2<f64>,
    w: &QuestWeights,
    combine: CombineMode,
    d_adjusted: &[Array2<f64>],
    grads: &mut QuestWeights,
) -> AttentionInputGrads {
    let classes = protos.nrows();
    let d = protos.ncols();
    let shots = support_pooled[0].len();
    let scale = 1.0 / (d as f64).sqrt();
    let cw = combine_weight(combine, shots);

    let mut d_protos = Array2::<f64>::zeros(protos.raw_dim());
    let mut d_values = Array2::<f64>::zeros(fwd.values.raw_dim());
    let mut d_support_proj: Vec<Vec<Array2<f64>>> = fwd
        .support_proj
        .iter()
        .map(|s| s.iter().map(|m| Array2::zeros(m.raw_dim())).collect())
        .collect();
    let mut d_query_pooled = Vec::with_capacity(query_pooled.len());

    for (q, d_adj) in d_adjusted.iter().enumerate() {
        d_protos += d_adj;
        let mut d_qm = Array2::<f64>::zeros(fwd.query_proj[q].raw_dim());
        for n in 0..classes {
            let d_r = &d_adj.row(n) * cw;
            let v_n = fwd.values.row(n);
            for k in 0..shots {
                let a = &fwd.attention[q][n][k];
                let y = &fwd.mixed[q][n][k];
                // r = Wout y
                let d_r_col = d_r.view().insert_axis(Axis(1));
                grads.w_out += &d_r_col.dot(&y.view().insert_axis(Axis(0)));
                let d_y = w.w_out.t().dot(&d_r);
                // y = A v
                d_values.row_mut(n).scaled_add(1.0, &a.t().dot(&d_y));
                // dA = d_y v^T, then through the row softmax
                let mut d_z = d_y
                    .view()
                    .insert_axis(Axis(1))
                    .dot(&v_n.insert_axis(Axis(0)));
                let row_dot = (&d_z * a).sum_axis(Axis(1));
                d_z -= &row_dot.insert_axis(Axis(1));
                d_z *= a;
                d_z *= scale;
                let km = &fwd.support_proj[n][k];
                d_qm += &d_z.dot(km);
                d_support_proj[n][k] += &d_z.t().dot(&fwd.query_proj[q]);
            }
        }
        // Qm = Fq^T Wq
        grads.w_q += &query_pooled[q].dot(&d_qm);
        d_query_pooled.push(w.w_q.dot(&d_qm.t()));
    }

    grads.w_v += &protos.t().dot(&d_values);
    d_protos += &d_values.dot(&w.w_v.t());

    let d_support_pooled = d_support_proj
        .iter()
        .zip(support_pooled)
        .map(|(d_shots, shots)| {
            d_shots
                .iter()
                .zip(shots)
                .map(|(d_km, fs)| {
                    grads.w_k += &fs.dot(d_km);
                    w.w_k.dot(&d_km.t())
                })
                .collect()
        })
        .collect();

    AttentionInputGrads {
        protos: d_protos,
        query_pooled: d_query_pooled,
        support_pooled: d_support_pooled,
    }
}
