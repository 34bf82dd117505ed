//! Straightforward reference implementations, written from the definitions
//! without sharing code with the library.

use std::cmp::Ordering;
use std::f64::consts::PI;

use ndarray::Array2;
use tfs3d_core::encoder::PeMode;

fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn lex(a: [f64; 3], b: [f64; 3]) -> Ordering {
    for i in 0..3 {
        match a[i].total_cmp(&b[i]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Restarts the min-distance computation from scratch for every pick.
pub fn fps(coords: &[[f64; 3]], count: usize) -> Vec<usize> {
    let n = coords.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex(coords[a], coords[b]).then(a.cmp(&b)));
    let mut picked = vec![order[0]];
    while picked.len() < count {
        let mut candidates: Vec<(f64, usize)> = (0..n)
            .filter(|i| !picked.contains(i))
            .map(|i| {
                let m = picked
                    .iter()
                    .map(|&p| d2(coords[i], coords[p]))
                    .fold(f64::INFINITY, f64::min);
                (m, i)
            })
            .collect();
        // largest distance first, then lexicographically smallest, then lowest index
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(lex(coords[a.1], coords[b.1]))
                .then(a.1.cmp(&b.1))
        });
        picked.push(candidates[0].1);
    }
    picked
}

/// Full sort of every reference point per query.
pub fn knn(query: &[[f64; 3]], reference: &[[f64; 3]], k: usize) -> Vec<Vec<(usize, f64)>> {
    query
        .iter()
        .map(|&q| {
            let mut all: Vec<usize> = (0..reference.len()).collect();
            all.sort_by(|&a, &b| {
                d2(q, reference[a])
                    .total_cmp(&d2(q, reference[b]))
                    .then(lex(reference[a], reference[b]))
                    .then(a.cmp(&b))
            });
            all.truncate(k);
            all.into_iter().map(|i| (i, d2(q, reference[i]).sqrt())).collect()
        })
        .collect()
}

/// Per-point accumulation with an explicit indicator for every class.
pub fn prototypes(support: &[Vec<Array2<f64>>], labels: &[Vec<Vec<i32>>]) -> (Array2<f64>, Vec<bool>) {
    let n = support.len();
    let d = support[0][0].ncols();
    let mut sums = Array2::<f64>::zeros((n + 1, d));
    let mut counts = vec![0.0; n + 1];
    for class in 0..=n {
        for (owner, shots) in support.iter().enumerate() {
            for (k, feats) in shots.iter().enumerate() {
                for i in 0..feats.nrows() {
                    let l = labels[owner][k][i];
                    let hit = if class == 0 { l == 0 } else { owner + 1 == class && l == class as i32 };
                    if hit {
                        counts[class] += 1.0;
                        for c in 0..d {
                            sums[[class, c]] += feats[[i, c]];
                        }
                    }
                }
            }
        }
    }
    let valid: Vec<bool> = counts.iter().map(|&c| c > 0.0).collect();
    for class in 0..=n {
        if valid[class] {
            for c in 0..d {
                sums[[class, c]] /= counts[class];
            }
        }
    }
    (sums, valid)
}

pub fn cosine(feats: &Array2<f64>, protos: &Array2<f64>, valid: &[bool]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((feats.nrows(), protos.nrows()));
    for i in 0..feats.nrows() {
        for c in 0..protos.nrows() {
            if !valid[c] {
                out[[i, c]] = f64::NEG_INFINITY;
                continue;
            }
            let mut dot = 0.0;
            let mut a = 0.0;
            let mut b = 0.0;
            for j in 0..feats.ncols() {
                dot += feats[[i, j]] * protos[[c, j]];
                a += feats[[i, j]] * feats[[i, j]];
                b += protos[[c, j]] * protos[[c, j]];
            }
            out[[i, c]] = if a == 0.0 || b == 0.0 { 0.0 } else { dot / (a.sqrt() * b.sqrt()) };
        }
    }
    out
}

/// `[sin(2π u_i x_a)] ++ [cos(2π u_i x_a)]`, frequency-major.
pub fn embedding(x: [f64; 3], freqs: &[f64]) -> Vec<f64> {
    let mut sines = Vec::new();
    let mut cosines = Vec::new();
    for &u in freqs {
        for a in 0..3 {
            sines.push((2.0 * PI * u * x[a]).sin());
            cosines.push((2.0 * PI * u * x[a]).cos());
        }
    }
    sines.extend(cosines);
    sines
}

pub struct LocalInputs<'a> {
    pub feats: &'a Array2<f64>,
    pub coords: &'a [[f64; 3]],
    pub colors: &'a [[f64; 3]],
    pub freqs: &'a [f64],
    pub k: usize,
    pub alpha: f64,
    pub use_color: bool,
    pub mode: PeMode,
}

fn weigh(mode: PeMode, h: &[f64], e: &[f64]) -> Vec<f64> {
    h.iter()
        .zip(e)
        .map(|(&h, &e)| match mode {
            PeMode::None => h,
            PeMode::Add => h + e,
            PeMode::Multiply => h * e,
            PeMode::AddMultiply => (h + e) * e,
        })
        .collect()
}

/// Grouping, relative embedding and max + mean pooling, one center at a time.
pub fn local_layer(x: &LocalInputs<'_>) -> (Vec<usize>, Array2<f64>) {
    let centers = fps(x.coords, x.coords.len() / 2);
    let center_coords: Vec<[f64; 3]> = centers.iter().map(|&c| x.coords[c]).collect();
    let groups = knn(&center_coords, x.coords, x.k);
    let width = 2 * x.feats.ncols();
    let mut out = Array2::<f64>::zeros((centers.len(), width));
    for (r, &c) in centers.iter().enumerate() {
        let radius = groups[r].iter().map(|g| g.1).fold(0.0, f64::max) + 1e-8;
        let mut rows = Vec::new();
        for &(j, _) in &groups[r] {
            let h: Vec<f64> = x.feats.row(c).iter().chain(x.feats.row(j).iter()).copied().collect();
            let dp = [0, 1, 2].map(|a| (x.coords[j][a] - x.coords[c][a]) / radius);
            let fp = weigh(x.mode, &h, &embedding(dp, x.freqs));
            let f = if x.use_color {
                let dc = [0, 1, 2].map(|a| x.colors[j][a] - x.colors[c][a]);
                let fc = weigh(x.mode, &h, &embedding(dc, x.freqs));
                fp.iter().zip(&fc).map(|(p, q)| x.alpha * p + (1.0 - x.alpha) * q).collect()
            } else {
                fp
            };
            rows.push(f);
        }
        for ch in 0..width {
            let max = rows.iter().map(|v| v[ch]).fold(f64::NEG_INFINITY, f64::max);
            let mean = rows.iter().map(|v| v[ch]).sum::<f64>() / rows.len() as f64;
            out[[r, ch]] = max + mean;
        }
    }
    (centers, out)
}

/// Skip features followed by inverse-distance interpolation.
pub fn upsample(
    child: &Array2<f64>,
    child_coords: &[[f64; 3]],
    target_coords: &[[f64; 3]],
    skip: &Array2<f64>,
    k: usize,
) -> Array2<f64> {
    let groups = knn(target_coords, child_coords, k);
    let cs = skip.ncols();
    let mut out = Array2::<f64>::zeros((target_coords.len(), cs + child.ncols()));
    for t in 0..target_coords.len() {
        for c in 0..cs {
            out[[t, c]] = skip[[t, c]];
        }
        let total: f64 = groups[t].iter().map(|g| 1.0 / (g.1 + 1e-8)).sum();
        for &(j, d) in &groups[t] {
            let w = (1.0 / (d + 1e-8)) / total;
            for c in 0..child.ncols() {
                out[[t, cs + c]] += w * child[[j, c]];
            }
        }
    }
    out
}
