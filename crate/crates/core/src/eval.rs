//! Segmentation metrics, the support/query KL diagnostic and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PointCloud;

/// Intersection, union and ground-truth point count of one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub intersection: u64,
    pub union: u64,
    pub support: u64,
}

impl ClassCounts {
    fn add(&mut self, other: &ClassCounts) {
        self.intersection += other.intersection;
        self.union += other.union;
        self.support += other.support;
    }

    pub fn iou(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

/// Per-class counts keyed by dataset class id, in total and per episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricAccumulator {
    totals: BTreeMap<i32, ClassCounts>,
    episodes: BTreeMap<u64, BTreeMap<i32, ClassCounts>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiouMode {
    /// Counts summed over all episodes, then IoU per class.
    #[default]
    Global,
    /// mIoU of each episode, averaged over episodes.
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassIou {
    pub class: i32,
    pub counts: ClassCounts,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub miou: f64,
    pub classes: Vec<ClassIou>,
    /// Classes seen in some episode but with zero union overall.
    pub absent: Vec<i32>,
    pub episodes: usize,
}

fn mean_iou(counts: &BTreeMap<i32, ClassCounts>) -> Option<f64> {
    let ious: Vec<f64> = counts.values().filter_map(ClassCounts::iou).collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tallies one episode. Labels are in episode space (`0` background,
    /// `n` is `targets[n - 1]`); truth `-1` points are skipped. Background
    /// is not scored.
    pub fn accumulate(
        &mut self,
        episode_id: u64,
        pred: &[Vec<i32>],
        truth: &[Vec<i32>],
        targets: &[i32],
    ) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predicted clouds, {} ground-truth clouds",
                pred.len(),
                truth.len()
            )));
        }
        if self.episodes.contains_key(&episode_id) {
            return Err(Error::InvalidArgument(format!("episode {episode_id} accumulated twice")));
        }
        let n = targets.len() as i32;
        let mut local: BTreeMap<i32, ClassCounts> =
            targets.iter().map(|&c| (c, ClassCounts::default())).collect();
        for (p, t) in pred.iter().zip(truth) {
            if p.len() != t.len() {
                return Err(Error::InvalidArgument("prediction and truth lengths differ".into()));
            }
            for (&pl, &tl) in p.iter().zip(t) {
                if tl < 0 {
                    continue;
                }
                if pl < 0 || pl > n || tl > n {
                    return Err(Error::InvalidArgument(format!(
                        "label out of episode range 0..={n}: pred {pl}, truth {tl}"
                    )));
                }
                if tl > 0 {
                    local.get_mut(&targets[tl as usize - 1]).unwrap().support += 1;
                }
                if pl == tl && pl > 0 {
                    let c = local.get_mut(&targets[pl as usize - 1]).unwrap();
                    c.intersection += 1;
                    c.union += 1;
                } else {
                    for l in [pl, tl] {
                        if l > 0 {
                            local.get_mut(&targets[l as usize - 1]).unwrap().union += 1;
                        }
                    }
                }
            }
        }
        for (c, counts) in &local {
            self.totals.entry(*c).or_default().add(counts);
        }
        self.episodes.insert(episode_id, local);
        Ok(())
    }

    /// Combines two accumulators over disjoint episode sets.
    pub fn merge(mut self, other: MetricAccumulator) -> Result<Self> {
        for (id, counts) in other.episodes {
            if self.episodes.contains_key(&id) {
                return Err(Error::InvalidArgument(format!("episode {id} present in both")));
            }
            for (c, v) in &counts {
                self.totals.entry(*c).or_default().add(v);
            }
            self.episodes.insert(id, counts);
        }
        Ok(self)
    }

    pub fn totals(&self) -> &BTreeMap<i32, ClassCounts> {
        &self.totals
    }

    pub fn episode_counts(&self) -> &BTreeMap<u64, BTreeMap<i32, ClassCounts>> {
        &self.episodes
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn miou(&self, mode: MiouMode) -> Result<MiouReport> {
        let classes: Vec<ClassIou> = self
            .totals
            .iter()
            .filter_map(|(&class, &counts)| counts.iou().map(|iou| ClassIou { class, counts, iou }))
            .collect();
        let absent = self
            .totals
            .iter()
            .filter(|(_, c)| c.union == 0)
            .map(|(&c, _)| c)
            .collect();
        if classes.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let miou = match mode {
            MiouMode::Global => classes.iter().map(|c| c.iou).sum::<f64>() / classes.len() as f64,
            MiouMode::PerEpisode => {
                let per: Vec<f64> = self.episodes.values().filter_map(mean_iou).collect();
                per.iter().sum::<f64>() / per.len() as f64
            }
        };
        Ok(MiouReport {
            miou,
            classes,
            absent,
            episodes: self.episodes.len(),
        })
    }
}

pub const DEFAULT_KL_BINS: usize = 32;

/// Mean over channels of `KL(support || query)` between per-channel
/// histograms. Both sides share each channel's `[min, max]` range, every
/// bin starts at a count of one, and channels constant across both sets
/// contribute zero.
pub fn kl_divergence_diagnostic(
    support: ArrayView2<'_, f64>,
    query: ArrayView2<'_, f64>,
    bins: usize,
) -> Result<f64> {
    if support.ncols() != query.ncols() || support.ncols() == 0 {
        return Err(Error::InvalidArgument("feature sets need the same nonzero width".into()));
    }
    if bins == 0 || support.nrows() == 0 || query.nrows() == 0 {
        return Err(Error::InvalidArgument("need at least one bin and one row per set".into()));
    }
    let mut total = 0.0;
    for ch in 0..support.ncols() {
        let s = support.column(ch);
        let q = query.column(ch);
        let (lo, hi) = s.iter().chain(q.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if hi <= lo {
            continue;
        }
        let hist = |col: ndarray::ArrayView1<'_, f64>| {
            let mut h = vec![1.0f64; bins];
            for &v in col {
                let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
                h[b.min(bins - 1)] += 1.0;
            }
            let sum: f64 = h.iter().sum();
            h.iter_mut().for_each(|x| *x /= sum);
            h
        };
        let p = hist(s);
        let r = hist(q);
        total += p.iter().zip(&r).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    }
    Ok((total / support.ncols() as f64).max(0.0))
}

/// Support/query divergence of one query cloud.
///
/// Each query point is paired with the prototype of its ground-truth class,
/// both sides are L2-normalized row-wise (the head only sees directions), and
/// the result is [`kl_divergence_diagnostic`] of the paired prototypes
/// against the query features. Unlabeled points are skipped.
pub fn prototype_query_kl(
    prototypes: ArrayView2<'_, f64>,
    query: ArrayView2<'_, f64>,
    labels: &[i32],
    bins: usize,
) -> Result<f64> {
    if labels.len() != query.nrows() {
        return Err(Error::InvalidArgument("one label per query point required".into()));
    }
    let rows: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] >= 0 && (labels[i] as usize) < prototypes.nrows())
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no labeled query point".into()));
    }
    let unit = |v: ndarray::ArrayView1<'_, f64>| {
        let n = v.dot(&v).sqrt();
        if n > 0.0 {
            v.mapv(|x| x / n)
        } else {
            v.to_owned()
        }
    };
    let d = query.ncols();
    let mut paired = Array2::<f64>::zeros((rows.len(), d));
    let mut feats = Array2::<f64>::zeros((rows.len(), d));
    for (r, &i) in rows.iter().enumerate() {
        paired.row_mut(r).assign(&unit(prototypes.row(labels[i] as usize)));
        feats.row_mut(r).assign(&unit(query.row(i)));
    }
    kl_divergence_diagnostic(paired.view(), feats.view(), bins)
}

/// Run description printed at the top of every summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportHeader {
    pub seed: u64,
    pub n_way: usize,
    pub k_shot: usize,
    pub method: String,
}

pub fn summary_text(header: &ReportHeader, report: &MiouReport, names: &BTreeMap<i32, String>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed = {}", header.seed);
    let _ = writeln!(out, "method = \"{}\"", header.method);
    let _ = writeln!(out, "n_way = {}", header.n_way);
    let _ = writeln!(out, "k_shot = {}", header.k_shot);
    let _ = writeln!(out, "episodes = {}", report.episodes);
    let _ = writeln!(out, "miou = {:.6}", report.miou);
    let _ = writeln!(out, "absent = {:?}", report.absent);
    for c in &report.classes {
        let name = names.get(&c.class).map(String::as_str).unwrap_or("?");
        let _ = writeln!(
            out,
            "class {:>4} {:<16} iou = {:.6}  (I = {}, U = {})",
            c.class, name, c.iou, c.counts.intersection, c.counts.union
        );
    }
    out
}

/// `class,intersection,union,iou`, one row per scored class.
pub fn class_table_csv(report: &MiouReport) -> String {
    let mut out = String::from("class,intersection,union,iou\n");
    for c in &report.classes {
        let _ = writeln!(out, "{},{},{},{:.6}", c.class, c.counts.intersection, c.counts.union, c.iou);
    }
    out
}

/// One line per episode and class: `episode,class,intersection,union,support`.
pub fn episode_log_csv(acc: &MetricAccumulator) -> String {
    let mut out = String::from("episode,class,intersection,union,support\n");
    for (id, counts) in acc.episode_counts() {
        for (class, c) in counts {
            let _ = writeln!(out, "{id},{class},{},{},{}", c.intersection, c.union, c.support);
        }
    }
    out
}

/// Rebuilds an accumulator from [`episode_log_csv`] output.
pub fn parse_episode_log(text: &str) -> Result<MetricAccumulator> {
    let mut acc = MetricAccumulator::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidArgument(format!("episode log line {}: {line:?}", line_no + 1));
        if fields.len() != 5 {
            return Err(bad());
        }
        let id: u64 = fields[0].parse().map_err(|_| bad())?;
        let class: i32 = fields[1].parse().map_err(|_| bad())?;
        let nums: Vec<u64> = fields[2..]
            .iter()
            .map(|f| f.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let counts = ClassCounts {
            intersection: nums[0],
            union: nums[1],
            support: nums[2],
        };
        acc.episodes.entry(id).or_default().insert(class, counts);
        acc.totals.entry(class).or_default().add(&counts);
    }
    Ok(acc)
}

/// `x y z r g b label` per point, `label` in dataset class ids.
pub fn export_predictions(cloud: &PointCloud, labels: &[i32]) -> String {
    let mut out = String::new();
    for ((p, c), l) in cloud.coords().iter().zip(cloud.colors()).zip(labels) {
        let _ = writeln!(out, "{} {} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2], l);
    }
    out
}
