//! Domain types shared by every stage of the pipeline.
//!
//! All of these are immutable value objects once constructed; the checked
//! constructors enforce the invariants and the accessors only hand out
//! shared views.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Label value for points that carry no annotation.
pub const UNLABELED: i32 = -1;

/// One block of points: coordinates, colors in `[0, 1]` and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    labels: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn new(
        coords: Vec<[f64; 3]>,
        colors: Vec<[f64; 3]>,
        labels: Option<Vec<i32>>,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidCloud("cloud has no points".into()));
        }
        if colors.len() != coords.len() {
            return Err(Error::InvalidCloud(format!(
                "{} coordinates but {} colors",
                coords.len(),
                colors.len()
            )));
        }
        if let Some(i) = coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidCloud(format!(
                "point {i} has a color channel outside [0, 1]: {:?}",
                colors[i]
            )));
        }
        if let Some(l) = &labels {
            if l.len() != coords.len() {
                return Err(Error::InvalidCloud(format!(
                    "{} points but {} labels",
                    coords.len(),
                    l.len()
                )));
            }
        }
        Ok(Self {
            coords,
            colors,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    /// Same points, new labels.
    pub fn with_labels(&self, labels: Option<Vec<i32>>) -> Result<Self> {
        Self::new(self.coords.clone(), self.colors.clone(), labels)
    }

    /// Picks the given point indices (repetition allowed) into a new cloud.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.coords[i]).collect(),
            indices.iter().map(|&i| self.colors[i]).collect(),
            self.labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        )
    }
}

/// Dense per-point features, `points x channels`, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InvalidArgument("feature matrix has zero channels".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature matrix has non-finite entries".into()));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn point_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.data.as_slice().expect("standard layout")[i * c..(i + 1) * c]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// One level of the encoder pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    /// Indices of the retained points into the original cloud.
    pub indices: Vec<usize>,
    pub coords: Vec<[f64; 3]>,
    pub features: FeatureMatrix,
}

/// Output of the encoder: final per-point features plus the down-sampling pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCloud {
    pub final_features: FeatureMatrix,
    /// Levels 0..=3; level `l` has `floor(M / 2^l)` points and `2^l * 6d` channels.
    pub pyramid: Vec<PyramidLevel>,
}

/// An episode whose labels are the raw dataset class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpisode {
    /// `support[n][k]`: shot `k` of target class `n`.
    pub support: Vec<Vec<PointCloud>>,
    pub query: Vec<PointCloud>,
    pub target_classes: Vec<i32>,
}

/// An N-way K-shot episode in episode label space: target class `i` has label
/// `i + 1`, every other annotated point is background `0`, unlabeled stays `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    support: Vec<Vec<PointCloud>>,
    query: Vec<PointCloud>,
    target_classes: Vec<i32>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.target_classes.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn support(&self) -> &[Vec<PointCloud>] {
        &self.support
    }

    pub fn query(&self) -> &[PointCloud] {
        &self.query
    }

    pub fn target_classes(&self) -> &[i32] {
        &self.target_classes
    }

    /// Support labels as `N x K x M`.
    pub fn support_labels(&self) -> Vec<Vec<Vec<i32>>> {
        self.support
            .iter()
            .map(|shots| {
                shots
                    .iter()
                    .map(|c| c.labels().expect("remapped support is labeled").to_vec())
                    .collect()
            })
            .collect()
    }

    /// Query labels, `None` for a query cloud without annotations.
    pub fn query_labels(&self) -> Vec<Option<Vec<i32>>> {
        self.query
            .iter()
            .map(|c| c.labels().map(<[i32]>::to_vec))
            .collect()
    }
}

fn remap_labels(labels: &[i32], targets: &[i32]) -> Vec<i32> {
    labels
        .iter()
        .map(|&l| {
            if l == UNLABELED {
                UNLABELED
            } else {
                targets
                    .iter()
                    .position(|&t| t == l)
                    .map_or(0, |i| i as i32 + 1)
            }
        })
        .collect()
}

/// Maps dataset class ids to episode labels `{0..N}`.
pub fn remap_episode_labels(raw: RawEpisode) -> Result<Episode> {
    let n = raw.target_classes.len();
    if n == 0 {
        return Err(Error::InvalidEpisode("no target classes".into()));
    }
    let mut seen = HashSet::new();
    for &c in &raw.target_classes {
        if !seen.insert(c) {
            return Err(Error::InvalidEpisode(format!("duplicate target class {c}")));
        }
    }
    if raw.support.len() != n {
        return Err(Error::InvalidEpisode(format!(
            "{} target classes but {} support groups",
            n,
            raw.support.len()
        )));
    }
    let k = raw.support[0].len();
    if k == 0 || raw.support.iter().any(|s| s.len() != k) {
        return Err(Error::InvalidEpisode(
            "every target class needs the same nonzero number of shots".into(),
        ));
    }
    if raw.query.is_empty() {
        return Err(Error::InvalidEpisode("query set is empty".into()));
    }
    let targets = &raw.target_classes;
    let mut support = Vec::with_capacity(n);
    for (ci, shots) in raw.support.iter().enumerate() {
        let mut out = Vec::with_capacity(k);
        for (si, cloud) in shots.iter().enumerate() {
            let labels = cloud.labels().ok_or_else(|| {
                Error::InvalidEpisode(format!("support cloud [{ci}][{si}] has no labels"))
            })?;
            out.push(cloud.with_labels(Some(remap_labels(labels, targets)))?);
        }
        support.push(out);
    }
    let query = raw
        .query
        .iter()
        .map(|c| c.with_labels(c.labels().map(|l| remap_labels(l, targets))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        support,
        query,
        target_classes: raw.target_classes,
    })
}

/// `N + 1` class prototypes; row 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: Array2<f64>,
    valid_mask: Vec<bool>,
}

impl PrototypeSet {
    pub fn new(prototypes: Array2<f64>, valid_mask: Vec<bool>) -> Result<Self> {
        if prototypes.nrows() != valid_mask.len() || prototypes.nrows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "prototype matrix has {} rows, mask has {}",
                prototypes.nrows(),
                valid_mask.len()
            )));
        }
        if prototypes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite prototype".into()));
        }
        let mut prototypes = prototypes.as_standard_layout().into_owned();
        for (mut row, &valid) in prototypes.rows_mut().into_iter().zip(&valid_mask) {
            if !valid {
                row.fill(0.0);
            }
        }
        Ok(Self {
            prototypes,
            valid_mask,
        })
    }

    pub fn class_count(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn channels(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn prototypes(&self) -> &Array2<f64> {
        &self.prototypes
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    /// The one-hot prototype label matrix, which is the identity.
    pub fn label_onehot(&self) -> Array2<f64> {
        Array2::eye(self.class_count())
    }
}
