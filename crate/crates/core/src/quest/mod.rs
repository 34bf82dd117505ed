//! Trainable prototype adjustment.
//!
//! A shared fully connected stack refines the frozen encoder features, a
//! windowed max pooling summarizes each channel over the points, and a
//! channel-wise cross-attention between query and support statistics
//! produces a residual that moves each prototype toward the query set.
//! Gradients are written out by hand in [`loss`], checked against finite
//! differences in the tests.

pub mod attention;
pub mod checkpoint;
pub mod fc;
pub mod loss;
pub mod optim;
pub mod pool;
pub mod train;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attention::{quest_forward, QuestForward};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use fc::{fc_forward, fc_pre_activations};
pub use loss::{episode_loss, feature_loss, segment_with_quest, LossOutput};
pub use optim::{adamw_step, AdamState};
pub use pool::local_max_pool;
pub use train::{train, TrainOutcome, Trainer};

/// How the per-shot residuals are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuestConfig {
    pub pool_kernel: usize,
    pub pool_stride: usize,
    /// Number of linear stages after the leading normalization.
    pub fc_depth: usize,
    pub combine_mode: CombineMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// The learning rate halves after every this many iterations.
    pub lr_halve_every: usize,
    pub seed: u64,
}

impl Default for QuestConfig {
    fn default() -> Self {
        Self {
            pool_kernel: 32,
            pool_stride: 32,
            fc_depth: 2,
            combine_mode: CombineMode::Mean,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-2,
            lr_halve_every: 7000,
            seed: 0,
        }
    }
}

impl QuestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_kernel == 0 || self.pool_stride == 0 {
            return Err(Error::InvalidArgument("pool kernel and stride must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("invalid optimizer hyperparameters".into()));
        }
        if self.lr_halve_every == 0 {
            return Err(Error::InvalidArgument("lr_halve_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of pooled statistics for a cloud of `points` points.
    pub fn pooled_len(&self, points: usize) -> usize {
        points.div_ceil(self.pool_stride)
    }

    /// Learning rate used at iteration `iter` (0-based).
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.lr * 0.5f64.powi((iter / self.lr_halve_every) as i32)
    }
}

/// All learnable tensors. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestWeights {
    /// Per-normalization scale, `fc_depth + 1` entries of length `D`.
    pub norm_scale: Vec<Array1<f64>>,
    pub norm_shift: Vec<Array1<f64>>,
    /// `fc_depth` matrices `D x D`, applied as `x W`.
    pub linear: Vec<Array2<f64>>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    /// Output projection of the residual, `D x D`.
    pub w_out: Array2<f64>,
}

impl QuestWeights {
    pub fn channels(&self) -> usize {
        self.w_v.nrows()
    }

    pub fn pooled_len(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn fc_depth(&self) -> usize {
        self.linear.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            norm_scale: self.norm_scale.iter().map(|a| Array1::zeros(a.raw_dim())).collect(),
            norm_shift: self.norm_shift.iter().map(|a| Array1::zeros(a.raw_dim())).collect(),
            linear: self.linear.iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
            w_q: Array2::zeros(self.w_q.raw_dim()),
            w_k: Array2::zeros(self.w_k.raw_dim()),
            w_v: Array2::zeros(self.w_v.raw_dim()),
            w_out: Array2::zeros(self.w_out.raw_dim()),
        }
    }

    /// Seeded initialization: unit scales, zero shifts, uniform
    /// `±1/sqrt(fan_in)` projections and a zero output projection, so the
    /// residual starts at zero.
    pub fn init(channels: usize, pooled_len: usize, fc_depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || bound * (2.0 * rng.random::<f64>() - 1.0))
        };
        let linear = (0..fc_depth).map(|_| uniform(channels, channels)).collect();
        let w_q = uniform(pooled_len, pooled_len);
        let w_k = uniform(pooled_len, pooled_len);
        let w_v = uniform(channels, channels);
        Self {
            norm_scale: vec![Array1::ones(channels); fc_depth + 1],
            norm_shift: vec![Array1::zeros(channels); fc_depth + 1],
            linear,
            w_q,
            w_k,
            w_v,
            w_out: Array2::zeros((channels, channels)),
        }
    }

    /// Named tensors in a fixed order: `(name, shape, row-major values)`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, a) in self.norm_scale.iter().enumerate() {
            out.push((format!("fc.norm{i}.scale"), a.shape().to_vec(), a.as_slice().unwrap()));
        }
        for (i, a) in self.norm_shift.iter().enumerate() {
            out.push((format!("fc.norm{i}.shift"), a.shape().to_vec(), a.as_slice().unwrap()));
        }
        for (i, a) in self.linear.iter().enumerate() {
            out.push((format!("fc.linear{i}"), a.shape().to_vec(), a.as_slice().unwrap()));
        }
        for (name, a) in [
            ("attn.w_q", &self.w_q),
            ("attn.w_k", &self.w_k),
            ("attn.w_v", &self.w_v),
            ("attn.w_out", &self.w_out),
        ] {
            out.push((name.to_string(), a.shape().to_vec(), a.as_slice().unwrap()));
        }
        out
    }

    /// Mutable views in the same order as [`QuestWeights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for a in &mut self.norm_scale {
            out.push(a.as_slice_mut().unwrap());
        }
        for a in &mut self.norm_shift {
            out.push(a.as_slice_mut().unwrap());
        }
        for a in &mut self.linear {
            out.push(a.as_slice_mut().unwrap());
        }
        for a in [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_out] {
            out.push(a.as_slice_mut().unwrap());
        }
        out
    }

    /// Rebuilds weights from named tensors as produced by [`QuestWeights::tensors`].
    pub fn from_tensors(
        mut lookup: impl FnMut(&str) -> Option<(Vec<usize>, Vec<f64>)>,
    ) -> Result<Self> {
        let fail = |name: &str, message: String| Error::Checkpoint {
            record: name.to_string(),
            message,
        };
        let mut get = |name: &str, rank: usize| -> Result<Option<(Vec<usize>, Vec<f64>)>> {
            match lookup(name) {
                None => Ok(None),
                Some((shape, _)) if shape.len() != rank => Err(fail(
                    name,
                    format!("expected rank {rank}, found shape {shape:?}"),
                )),
                Some(found) => Ok(Some(found)),
            }
        };
        let mut matrix = |name: &str, required: bool| -> Result<Option<Array2<f64>>> {
            match get(name, 2)? {
                None if required => Err(fail(name, "missing".into())),
                None => Ok(None),
                Some((shape, data)) => Array2::from_shape_vec((shape[0], shape[1]), data)
                    .map(Some)
                    .map_err(|e| fail(name, e.to_string())),
            }
        };
        let w_q = matrix("attn.w_q", true)?.unwrap();
        let w_k = matrix("attn.w_k", true)?.unwrap();
        let w_v = matrix("attn.w_v", true)?.unwrap();
        let w_out = matrix("attn.w_out", true)?.unwrap();
        let mut linear = Vec::new();
        while let Some(m) = matrix(&format!("fc.linear{}", linear.len()), false)? {
            linear.push(m);
        }
        drop(matrix);
        let mut vector = |name: &str| -> Result<Array1<f64>> {
            let (shape, data) = get(name, 1)?.ok_or_else(|| fail(name, "missing".into()))?;
            Array1::from_shape_vec(shape[0], data).map_err(|e| fail(name, e.to_string()))
        };
        let mut norm_scale = Vec::new();
        let mut norm_shift = Vec::new();
        for i in 0..=linear.len() {
            norm_scale.push(vector(&format!("fc.norm{i}.scale"))?);
            norm_shift.push(vector(&format!("fc.norm{i}.shift"))?);
        }
        let weights = Self {
            norm_scale,
            norm_shift,
            linear,
            w_q,
            w_k,
            w_v,
            w_out,
        };
        weights.check_shapes()?;
        Ok(weights)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.channels();
        let mp = self.pooled_len();
        let fail = |record: &str, message: String| Error::Checkpoint {
            record: record.to_string(),
            message,
        };
        if self.w_q.dim() != (mp, mp) || self.w_k.dim() != (mp, mp) {
            return Err(fail("attn.w_k", format!("expected {mp}x{mp}")));
        }
        if self.w_v.dim() != (d, d) || self.w_out.dim() != (d, d) {
            return Err(fail("attn.w_out", format!("expected {d}x{d}")));
        }
        for (i, l) in self.linear.iter().enumerate() {
            if l.dim() != (d, d) {
                return Err(fail(&format!("fc.linear{i}"), format!("expected {d}x{d}")));
            }
        }
        for (i, (s, b)) in self.norm_scale.iter().zip(&self.norm_shift).enumerate() {
            if s.len() != d || b.len() != d {
                return Err(fail(&format!("fc.norm{i}.scale"), format!("expected length {d}")));
            }
        }
        if self.tensors().iter().any(|(_, _, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(fail("*", "non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }
}

/// Learnable tensors together with their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestParameters {
    pub weights: QuestWeights,
    pub adam: AdamState,
}

impl QuestParameters {
    pub fn init(channels: usize, pooled_len: usize, cfg: &QuestConfig) -> Self {
        let weights = QuestWeights::init(channels, pooled_len, cfg.fc_depth, cfg.seed);
        let adam = AdamState::new(&weights);
        Self { weights, adam }
    }
}
