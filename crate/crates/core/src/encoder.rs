//! The training-free point encoder.
//!
//! An initial trigonometric embedding of coordinates and colors, three local
//! embedding layers over a farthest-point-sampling pyramid (each halves the
//! point count and doubles the channels), then three upsampling layers that
//! interpolate coarse features back and concatenate the matching skip level.
//! With `d` initial frequencies the final width is `90 d`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequencies::{
    embed_into, make_loglinear, make_random, FrequencyDistribution, FrequencyVector,
};
use crate::spatial::{farthest_point_sample, inverse_distance_weights, knn};
use crate::types::{EncodedCloud, FeatureMatrix, PointCloud, PyramidLevel};

/// Guard for the per-group radius used to normalize relative coordinates.
const RADIUS_EPS: f64 = 1e-8;

/// How the relative-position embedding weighs the grouped features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PeMode {
    None,
    Add,
    Multiply,
    #[default]
    AddMultiply,
}

impl std::str::FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PeMode::None),
            "add" => Ok(PeMode::Add),
            "multiply" | "mul" => Ok(PeMode::Multiply),
            "add-multiply" | "add-mul" => Ok(PeMode::AddMultiply),
            other => Err(Error::InvalidArgument(format!("unknown pe mode `{other}`"))),
        }
    }
}

/// Frequency family for the local-embedding layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalFrequencies {
    /// Gaussian with variance `EncoderConfig::delta`.
    #[default]
    Gaussian,
    Uniform { range: f64 },
    Laplacian { scale: f64 },
    /// Log-linear with `EncoderConfig::theta`.
    LogLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Initial frequency count.
    pub d: usize,
    pub theta: f64,
    /// Variance of the Gaussian local frequencies.
    pub delta: f64,
    /// Coordinate weight in the coordinate/color blend.
    pub alpha: f64,
    /// Neighbors for both local embedding and upsampling.
    pub k: usize,
    pub pe_mode: PeMode,
    pub use_color: bool,
    pub local_distribution: LocalFrequencies,
    pub seed: u64,
    pub normalize_coords: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 15,
            theta: 20.0,
            delta: 0.1,
            alpha: 0.8,
            k: 8,
            pe_mode: PeMode::AddMultiply,
            use_color: true,
            local_distribution: LocalFrequencies::Gaussian,
            seed: 0,
            normalize_coords: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if !(self.theta > 0.0) {
            return Err(Error::InvalidArgument(format!("theta {} must be positive", self.theta)));
        }
        Ok(())
    }

    /// Final feature width `(2^0 + ... + 2^3) * 6d`.
    pub fn output_channels(&self) -> usize {
        90 * self.d
    }

    /// Channel count of pyramid level `level` (0..=3).
    pub fn level_channels(&self, level: usize) -> usize {
        (1 << level) * 6 * self.d
    }

    fn initial_frequencies(&self) -> Result<FrequencyVector> {
        make_loglinear(self.d, self.theta)
    }

    /// Frequencies `v` of local layer `level`, seeded with `seed ^ level`.
    pub fn local_frequencies(&self, level: usize) -> Result<FrequencyVector> {
        let count = (1 << level) * self.d;
        let dist = match self.local_distribution {
            LocalFrequencies::Gaussian => FrequencyDistribution::Gaussian {
                variance: self.delta,
            },
            LocalFrequencies::Uniform { range } => FrequencyDistribution::Uniform { range },
            LocalFrequencies::Laplacian { scale } => FrequencyDistribution::Laplacian { scale },
            LocalFrequencies::LogLinear => FrequencyDistribution::LogLinear { theta: self.theta },
        };
        make_random(count, dist, self.seed ^ level as u64)
    }
}

/// Rescales coordinates into `[0, 1]^3` with one isotropic factor (the largest extent).
pub fn normalize_block(coords: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in coords {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    coords
        .iter()
        .map(|p| {
            [
                (p[0] - lo[0]) * scale,
                (p[1] - lo[1]) * scale,
                (p[2] - lo[2]) * scale,
            ]
        })
        .collect()
}

fn encoder_coords(cloud: &PointCloud, cfg: &EncoderConfig) -> Vec<[f64; 3]> {
    if cfg.normalize_coords {
        normalize_block(cloud.coords())
    } else {
        cloud.coords().to_vec()
    }
}

fn initial_from_coords(
    coords: &[[f64; 3]],
    colors: &[[f64; 3]],
    cfg: &EncoderConfig,
) -> Result<FeatureMatrix> {
    let u = cfg.initial_frequencies()?;
    let w = u.embedding_width();
    let mut out = Array2::<f64>::zeros((coords.len(), w));
    let mut color_emb = vec![0.0; w];
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        embed_into(&coords[i], u.values(), row);
        if cfg.use_color {
            embed_into(&colors[i], u.values(), &mut color_emb);
            for (r, c) in row.iter_mut().zip(&color_emb) {
                *r = cfg.alpha * *r + (1.0 - cfg.alpha) * c;
            }
        }
    }
    FeatureMatrix::new(out)
}

/// Level-0 features: `alpha * Emb(p; u) + (1 - alpha) * Emb(c; u)`.
pub fn initial_embed(cloud: &PointCloud, cfg: &EncoderConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    initial_from_coords(&encoder_coords(cloud, cfg), cloud.colors(), cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLayerOutput {
    /// Indices of the retained centers into the parent level.
    pub sample_indices: Vec<usize>,
    pub features: FeatureMatrix,
}

#[inline]
fn weigh(mode: PeMode, grouped: &[f64], emb: &[f64], out: &mut [f64]) {
    match mode {
        PeMode::AddMultiply => {
            for ((o, h), e) in out.iter_mut().zip(grouped).zip(emb) {
                *o = (h + e) * e;
            }
        }
        PeMode::Add => {
            for ((o, h), e) in out.iter_mut().zip(grouped).zip(emb) {
                *o = h + e;
            }
        }
        PeMode::Multiply => {
            for ((o, h), e) in out.iter_mut().zip(grouped).zip(emb) {
                *o = h * e;
            }
        }
        PeMode::None => out.copy_from_slice(grouped),
    }
}

/// One local embedding layer; `level` is 1, 2 or 3.
pub fn local_embed_layer(
    level: usize,
    parent_feats: &FeatureMatrix,
    parent_coords: &[[f64; 3]],
    parent_colors: &[[f64; 3]],
    cfg: &EncoderConfig,
) -> Result<LocalLayerOutput> {
    if !(1..=3).contains(&level) {
        return Err(Error::Encode(format!("local layer level {level} not in 1..=3")));
    }
    let p = parent_coords.len();
    if parent_feats.point_count() != p || parent_colors.len() != p {
        return Err(Error::Encode(format!(
            "level {level}: {} features, {} coordinates, {} colors",
            parent_feats.point_count(),
            p,
            parent_colors.len()
        )));
    }
    let c_in = parent_feats.channels();
    let v = cfg.local_frequencies(level)?;
    let width = 2 * c_in;
    if v.embedding_width() != width {
        return Err(Error::Encode(format!(
            "level {level}: parent has {c_in} channels, expected {}",
            v.embedding_width() / 2
        )));
    }
    let count = p / 2;
    if p < cfg.k || count == 0 {
        return Err(Error::Encode(format!(
            "level {level}: {p} parent points cannot support k = {}",
            cfg.k
        )));
    }
    let centers = farthest_point_sample(parent_coords, count)?;
    let center_coords: Vec<[f64; 3]> = centers.iter().map(|&i| parent_coords[i]).collect();
    let table = knn(&center_coords, parent_coords, cfg.k)?;

    let mut out = Array2::<f64>::zeros((count, width));
    let mut grouped = vec![0.0; width];
    let mut emb_p = vec![0.0; width];
    let mut emb_c = vec![0.0; width];
    let mut f_p = vec![0.0; width];
    let mut f_c = vec![0.0; width];
    let mut sum = vec![0.0; width];
    let inv_k = 1.0 / cfg.k as f64;

    for (row_idx, mut out_row) in out.rows_mut().into_iter().enumerate() {
        let center = centers[row_idx];
        let pc = parent_coords[center];
        let cc = parent_colors[center];
        let neighbors = table.indices(row_idx);
        let radius = table.distances(row_idx).iter().copied().fold(0.0, f64::max) + RADIUS_EPS;
        grouped[..c_in].copy_from_slice(parent_feats.row(center));
        let out_row = out_row.as_slice_mut().expect("standard layout");
        out_row.fill(f64::NEG_INFINITY);
        sum.fill(0.0);

        for &j in neighbors {
            grouped[c_in..].copy_from_slice(parent_feats.row(j));
            let pj = parent_coords[j];
            let dp = [
                (pj[0] - pc[0]) / radius,
                (pj[1] - pc[1]) / radius,
                (pj[2] - pc[2]) / radius,
            ];
            embed_into(&dp, v.values(), &mut emb_p);
            weigh(cfg.pe_mode, &grouped, &emb_p, &mut f_p);
            if cfg.use_color {
                let cj = parent_colors[j];
                let dc = [cj[0] - cc[0], cj[1] - cc[1], cj[2] - cc[2]];
                embed_into(&dc, v.values(), &mut emb_c);
                weigh(cfg.pe_mode, &grouped, &emb_c, &mut f_c);
                for (fp, fc) in f_p.iter_mut().zip(&f_c) {
                    *fp = cfg.alpha * *fp + (1.0 - cfg.alpha) * fc;
                }
            }
            for ((m, s), f) in out_row.iter_mut().zip(sum.iter_mut()).zip(&f_p) {
                if *f > *m {
                    *m = *f;
                }
                *s += f;
            }
        }
        for (m, s) in out_row.iter_mut().zip(&sum) {
            *m += s * inv_k;
        }
    }
    Ok(LocalLayerOutput {
        sample_indices: centers,
        features: FeatureMatrix::new(out)?,
    })
}

/// One upsampling layer; `level` is 4, 5 or 6.
///
/// Output rows are `[skip, interpolated]`, where the interpolation uses
/// normalized inverse-distance weights over the `k` nearest child points.
pub fn upsample_layer(
    level: usize,
    child_feats: &FeatureMatrix,
    child_coords: &[[f64; 3]],
    target_coords: &[[f64; 3]],
    skip_feats: &FeatureMatrix,
    cfg: &EncoderConfig,
) -> Result<FeatureMatrix> {
    if !(4..=6).contains(&level) {
        return Err(Error::Encode(format!("upsampling level {level} not in 4..=6")));
    }
    if child_feats.point_count() != child_coords.len() {
        return Err(Error::Encode(format!(
            "level {level}: {} child features for {} child points",
            child_feats.point_count(),
            child_coords.len()
        )));
    }
    if skip_feats.point_count() != target_coords.len() {
        return Err(Error::Encode(format!(
            "level {level}: {} skip features for {} target points",
            skip_feats.point_count(),
            target_coords.len()
        )));
    }
    let skip_level = 6 - level;
    if skip_feats.channels() != cfg.level_channels(skip_level) {
        return Err(Error::Encode(format!(
            "level {level}: skip has {} channels, expected {}",
            skip_feats.channels(),
            cfg.level_channels(skip_level)
        )));
    }
    if child_coords.len() < cfg.k {
        return Err(Error::Encode(format!(
            "level {level}: {} child points cannot support k = {}",
            child_coords.len(),
            cfg.k
        )));
    }
    let table = knn(target_coords, child_coords, cfg.k)?;
    let cs = skip_feats.channels();
    let cc = child_feats.channels();
    let mut out = Array2::<f64>::zeros((target_coords.len(), cs + cc));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        row[..cs].copy_from_slice(skip_feats.row(t));
        let interp = &mut row[cs..];
        let weights = inverse_distance_weights(table.distances(t));
        for (&j, w) in table.indices(t).iter().zip(weights) {
            for (o, f) in interp.iter_mut().zip(child_feats.row(j)) {
                *o += w * f;
            }
        }
    }
    FeatureMatrix::new(out)
}

/// Runs the full encoder on one cloud.
pub fn encode(cloud: &PointCloud, cfg: &EncoderConfig) -> Result<EncodedCloud> {
    cfg.validate()?;
    let m = cloud.len();
    let coarsest = m >> 3;
    if coarsest < cfg.k {
        return Err(Error::Encode(format!(
            "{m} points leave {coarsest} at the coarsest level, fewer than k = {}; need at least {}",
            cfg.k,
            8 * cfg.k
        )));
    }
    let coords0 = encoder_coords(cloud, cfg);
    let colors0 = cloud.colors().to_vec();
    let f0 = initial_from_coords(&coords0, &colors0, cfg)?;

    let mut pyramid = vec![PyramidLevel {
        indices: (0..m).collect(),
        coords: coords0,
        features: f0,
    }];
    let mut colors = vec![colors0];
    for level in 1..=3 {
        let parent = &pyramid[level - 1];
        let parent_colors = &colors[level - 1];
        let out = local_embed_layer(level, &parent.features, &parent.coords, parent_colors, cfg)?;
        let coords = out.sample_indices.iter().map(|&i| parent.coords[i]).collect();
        let indices = out.sample_indices.iter().map(|&i| parent.indices[i]).collect();
        colors.push(out.sample_indices.iter().map(|&i| parent_colors[i]).collect());
        pyramid.push(PyramidLevel {
            indices,
            coords,
            features: out.features,
        });
    }

    let mut current = pyramid[3].features.clone();
    for level in 4..=6 {
        let child = &pyramid[7 - level];
        let target = &pyramid[6 - level];
        current = upsample_layer(
            level,
            &current,
            &child.coords,
            &target.coords,
            &target.features,
            cfg,
        )?;
    }
    Ok(EncodedCloud {
        final_features: current,
        pyramid,
    })
}
