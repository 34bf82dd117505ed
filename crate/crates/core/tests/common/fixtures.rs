use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tfs3d_core::episodes::{synth_scene, ClusterSpec};
use tfs3d_core::quest::QuestWeights;
use tfs3d_core::{remap_episode_labels, Episode, EpisodeFeatures, FeatureMatrix, PointCloud, RawEpisode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn random_coords(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, labels: Option<i32>) -> PointCloud {
    let coords = random_coords(rng, n);
    let colors = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let labels = labels.map(|top| (0..n).map(|_| rng.random_range(0..=top)).collect());
    PointCloud::new(coords, colors, labels).unwrap()
}

/// Labels in `0..=n_way` where every value occurs at least once.
pub fn covering_labels(rng: &mut ChaCha8Rng, points: usize, n_way: i32) -> Vec<i32> {
    let mut l: Vec<i32> = (0..points).map(|_| rng.random_range(0..=n_way)).collect();
    for c in 0..=n_way {
        l[c as usize] = c;
    }
    l
}

/// Random episode features in "episode space".
pub fn random_features(
    rng: &mut ChaCha8Rng,
    n_way: usize,
    k_shot: usize,
    queries: usize,
    points: usize,
    channels: usize,
) -> EpisodeFeatures {
    let mut support = Vec::new();
    let mut support_labels = Vec::new();
    for n in 0..n_way {
        let mut shots = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..k_shot {
            shots.push(FeatureMatrix::new(gaussian_matrix(rng, points, channels)).unwrap());
            let mut l: Vec<i32> = (0..points)
                .map(|_| if rng.random_bool(0.5) { n as i32 + 1 } else { 0 })
                .collect();
            l[0] = 0;
            l[1] = n as i32 + 1;
            labels.push(l);
        }
        support.push(shots);
        support_labels.push(labels);
    }
    let query = (0..queries)
        .map(|_| FeatureMatrix::new(gaussian_matrix(rng, points, channels)).unwrap())
        .collect();
    let query_labels = (0..queries)
        .map(|_| Some(covering_labels(rng, points, n_way as i32)))
        .collect();
    EpisodeFeatures {
        support,
        support_labels,
        query,
        query_labels,
    }
}

/// Perturbs every tensor so no gradient path is trivially zero.
pub fn jitter_weights(w: &mut QuestWeights, rng: &mut ChaCha8Rng, scale: f64) {
    for t in w.tensors_mut() {
        for v in t.iter_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}

/// Parameters of a two-class synthetic scene family.
#[derive(Debug, Clone, Copy)]
pub struct SceneFamily {
    pub points: usize,
    pub separation: f64,
    pub extent: f64,
    pub sigma: f64,
    pub color_jitter: f64,
    /// Added to every color channel of query clouds, then clamped.
    pub query_color_shift: f64,
}

impl Default for SceneFamily {
    fn default() -> Self {
        Self {
            points: 512,
            separation: 1.0,
            extent: 0.2,
            sigma: 0.08,
            color_jitter: 0.03,
            query_color_shift: 0.0,
        }
    }
}

/// Dataset class ids: 10 and 11 are the foreground pair, 1..=3 background.
const PALETTE: [(i32, [f64; 3]); 5] = [
    (10, [0.9, 0.15, 0.1]),
    (11, [0.1, 0.3, 0.9]),
    (1, [0.5, 0.5, 0.5]),
    (2, [0.2, 0.7, 0.3]),
    (3, [0.85, 0.8, 0.3]),
];

impl SceneFamily {
    fn scene(&self, rng: &mut ChaCha8Rng, foreground: i32, shift: f64) -> PointCloud {
        // foreground cluster plus two background clusters on a random layout
        let mut slots = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let bg: Vec<usize> = {
            let a = rng.random_range(2..5);
            let mut b = rng.random_range(2..5);
            while b == a {
                b = rng.random_range(2..5);
            }
            vec![a, b]
        };
        let fg = PALETTE.iter().position(|p| p.0 == foreground).unwrap();
        let per = self.points / 3;
        let clusters: Vec<ClusterSpec> = [fg, bg[0], bg[1]]
            .iter()
            .enumerate()
            .map(|(i, &c)| ClusterSpec {
                label: PALETTE[c].0,
                center: [slots[i][0] * self.separation, slots[i][1] * self.separation, 0.0],
                extent: self.extent,
                color: PALETTE[c].1.map(|v| (v + shift).clamp(0.0, 1.0)),
                points: if i == 0 { self.points - 2 * per } else { per },
                color_jitter: self.color_jitter,
            })
            .collect();
        synth_scene(&clusters, self.sigma, rng.random()).unwrap()
    }

    /// 2-way 1-shot episode; queries alternate between the two classes.
    pub fn episode(&self, seed: u64, queries: usize) -> Episode {
        let mut rng = rng(seed);
        let support = vec![vec![self.scene(&mut rng, 10, 0.0)], vec![self.scene(&mut rng, 11, 0.0)]];
        let query = (0..queries)
            .map(|q| self.scene(&mut rng, if q % 2 == 0 { 10 } else { 11 }, self.query_color_shift))
            .collect();
        remap_episode_labels(RawEpisode {
            support,
            query,
            target_classes: vec![10, 11],
        })
        .unwrap()
    }
}
