//! Synthetic labeled scenes and datasets built from Gaussian clusters.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::SplitManifest;
use crate::error::{Error, Result};
use crate::types::PointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub label: i32,
    pub center: [f64; 3],
    /// Radius of the ball the cluster's points stay inside.
    pub extent: f64,
    pub color: [f64; 3],
    pub points: usize,
    /// Standard deviation of per-point color noise.
    #[serde(default)]
    pub color_jitter: f64,
}

/// One labeled cloud: per-axis Gaussian offsets with standard deviation
/// `sigma`, resampled until inside the cluster's extent. `sigma = 0` puts
/// every point of a cluster at its center.
pub fn synth_scene(clusters: &[ClusterSpec], sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = clusters.iter().map(|c| c.points).sum();
    let mut coords = Vec::with_capacity(total);
    let mut colors = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let unit = Normal::new(0.0, 1.0).unwrap();
    for c in clusters {
        if !(c.extent >= 0.0) || !(c.color_jitter >= 0.0) {
            return Err(Error::InvalidArgument("extent and color_jitter must be >= 0".into()));
        }
        for _ in 0..c.points {
            let mut offset = [0.0; 3];
            for _ in 0..64 {
                offset = [0, 1, 2].map(|_| sigma * unit.sample(&mut rng));
                if offset.iter().map(|v| v * v).sum::<f64>() <= c.extent * c.extent {
                    break;
                }
            }
            let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > c.extent {
                offset = offset.map(|v| v * c.extent / norm);
            }
            coords.push([0, 1, 2].map(|a| c.center[a] + offset[a]));
            colors.push([0, 1, 2].map(|a| {
                let noise = if c.color_jitter > 0.0 {
                    c.color_jitter * unit.sample(&mut rng)
                } else {
                    0.0
                };
                (c.color[a] + noise).clamp(0.0, 1.0)
            }));
            labels.push(c.label);
        }
    }
    PointCloud::new(coords, colors, Some(labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClass {
    pub id: i32,
    pub name: String,
    pub color: [f64; 3],
}

/// Recipe for a block dataset with a class split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub blocks: usize,
    pub points_per_block: usize,
    /// Distinct classes placed in each block.
    pub classes_per_block: usize,
    pub sigma: f64,
    pub extent: f64,
    #[serde(default)]
    pub color_jitter: f64,
    #[serde(default = "crate::episodes::manifest::default_threshold")]
    pub threshold: usize,
    pub seen: Vec<i32>,
    pub unseen: Vec<i32>,
    #[serde(rename = "class")]
    pub classes: Vec<SynthClass>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Block file names relative to the manifest, with their clouds.
    pub blocks: Vec<(PathBuf, PointCloud)>,
    pub manifest: SplitManifest,
}

/// Cluster centers sit on a grid whose spacing is six extents, so clusters
/// are separated by at least four extents of empty space.
pub fn synth_dataset(spec: &DatasetSpec) -> Result<SynthDataset> {
    let n_classes = spec.classes.len();
    if spec.classes_per_block == 0 || spec.classes_per_block > n_classes {
        return Err(Error::InvalidArgument(format!(
            "classes_per_block must be in 1..={n_classes}"
        )));
    }
    if spec.points_per_block < spec.classes_per_block {
        return Err(Error::InvalidArgument("fewer points than classes per block".into()));
    }
    let cells = 9.max(spec.classes_per_block);
    let side = (cells as f64).sqrt().ceil() as usize;
    let spacing = 6.0 * spec.extent.max(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut blocks = Vec::with_capacity(spec.blocks);
    for b in 0..spec.blocks {
        // round-robin lead class keeps every class represented
        let lead = b % n_classes;
        let mut chosen = vec![lead];
        let others: Vec<usize> = (0..n_classes).filter(|&c| c != lead).collect();
        chosen.extend(
            sample(&mut rng, others.len(), spec.classes_per_block - 1)
                .into_iter()
                .map(|i| others[i]),
        );
        let cells_used = sample(&mut rng, side * side, chosen.len()).into_vec();
        let base = spec.points_per_block / chosen.len();
        let extra = spec.points_per_block % chosen.len();
        let clusters: Vec<ClusterSpec> = chosen
            .iter()
            .zip(&cells_used)
            .enumerate()
            .map(|(i, (&c, &cell))| ClusterSpec {
                label: spec.classes[c].id,
                center: [(cell % side) as f64 * spacing, (cell / side) as f64 * spacing, 0.0],
                extent: spec.extent,
                color: spec.classes[c].color,
                points: base + if i == 0 { extra } else { 0 },
                color_jitter: spec.color_jitter,
            })
            .collect();
        let scene_seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(b as u64);
        let cloud = synth_scene(&clusters, spec.sigma, scene_seed)?;
        blocks.push((PathBuf::from(format!("block_{b:04}.pcb")), cloud));
    }
    let names: BTreeMap<i32, String> = spec.classes.iter().map(|c| (c.id, c.name.clone())).collect();
    let manifest = SplitManifest::build(
        &names,
        spec.seen.clone(),
        spec.unseen.clone(),
        spec.threshold,
        blocks.iter().map(|(p, c)| (p.clone(), c)),
    )?;
    Ok(SynthDataset { blocks, manifest })
}
