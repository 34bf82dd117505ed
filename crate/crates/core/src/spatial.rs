//! Deterministic geometric primitives: farthest point sampling, exact k-NN
//! and inverse-distance interpolation weights.
//!
//! Every ordering decision breaks ties first by squared distance, then by the
//! lexicographic order of the coordinates, then by index. Since the squared
//! distance is always evaluated with the same expression, results depend only
//! on the coordinates and not on the input order (for distinct points).

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Distance guard for inverse-distance weights.
pub const IDW_EPS: f64 = 1e-8;

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub(crate) fn lex_cmp(a: &[f64; 3], b: &[f64; 3]) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Selects `count` distinct indices by farthest point sampling.
///
/// The first pick is the lexicographically smallest coordinate; each following
/// pick maximizes the minimum distance to the picks so far.
pub fn farthest_point_sample(coords: &[[f64; 3]], count: usize) -> Result<Vec<usize>> {
    let n = coords.len();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {count} of {n} points"
        )));
    }
    let start = (0..n)
        .min_by(|&a, &b| lex_cmp(&coords[a], &coords[b]).then(a.cmp(&b)))
        .expect("non-empty");
    let mut selected = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(count);
    let mut current = start;
    loop {
        selected[current] = true;
        out.push(current);
        if out.len() == count {
            break;
        }
        let c = coords[current];
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = dist2(&coords[i], &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let ord = min_d2[i]
                        .total_cmp(&min_d2[b])
                        .then_with(|| lex_cmp(&coords[b], &coords[i]))
                        .then_with(|| b.cmp(&i));
                    if ord == Ordering::Greater {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        current = best.expect("count <= n leaves an unselected point");
    }
    Ok(out)
}

/// `k` nearest reference points for each query point, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self, row: usize) -> &[usize] {
        &self.indices[row * self.k..(row + 1) * self.k]
    }

    pub fn distances(&self, row: usize) -> &[f64] {
        &self.distances[row * self.k..(row + 1) * self.k]
    }
}

const LEAF_SIZE: usize = 12;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree used to answer exact k-NN queries.
struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    fn build(points: &'a [[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, points.len());
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] == lo[axis] {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn query(&self, q: &[f64; 3], k: usize, best: &mut Vec<(f64, usize)>) {
        best.clear();
        self.visit(0, q, k, best);
    }

    fn worse(&self, a: (f64, usize), b: (f64, usize)) -> bool {
        a.0.total_cmp(&b.0)
            .then_with(|| lex_cmp(&self.points[a.1], &self.points[b.1]))
            .then(a.1.cmp(&b.1))
            == Ordering::Greater
    }

    fn offer(&self, cand: (f64, usize), k: usize, best: &mut Vec<(f64, usize)>) {
        if best.len() == k && !self.worse(best[k - 1], cand) {
            return;
        }
        let pos = best
            .iter()
            .position(|&b| self.worse(b, cand))
            .unwrap_or(best.len());
        best.insert(pos, cand);
        best.truncate(k);
    }

    fn visit(&self, node: usize, q: &[f64; 3], k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    self.offer((dist2(q, &self.points[i]), i), k, best);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near, q, k, best);
                // Points exactly on the plane may sit on either side, so only a
                // strictly larger bound is pruned; ties stay reachable.
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.visit(far, q, k, best);
                }
            }
        }
    }
}

/// Exact k nearest neighbors of every query point among `reference`.
pub fn knn(query: &[[f64; 3]], reference: &[[f64; 3]], k: usize) -> Result<NeighborTable> {
    if k == 0 || k > reference.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} with {} reference points",
            reference.len()
        )));
    }
    let tree = KdTree::build(reference);
    let mut indices = Vec::with_capacity(query.len() * k);
    let mut distances = Vec::with_capacity(query.len() * k);
    let mut best = Vec::with_capacity(k + 1);
    for q in query {
        tree.query(q, k, &mut best);
        for &(d2, i) in &best {
            indices.push(i);
            distances.push(d2.sqrt());
        }
    }
    Ok(NeighborTable {
        k,
        indices,
        distances,
    })
}

/// Normalized inverse-distance weights, `w_j ∝ 1 / (d_j + eps)`.
pub fn inverse_distance_weights(distances: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = distances.iter().map(|d| 1.0 / (d + IDW_EPS)).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|w| w / total).collect()
}
