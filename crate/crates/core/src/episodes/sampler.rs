//! N-way K-shot episode samplers.
//!
//! Each episode draws from its own random stream, derived from the sampler
//! seed and the episode index, so any episode can be regenerated on its own
//! and episodes can be produced in parallel without changing the result.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::block::read_block;
use super::manifest::SplitManifest;
use crate::error::{Error, Result};
use crate::types::{remap_episode_labels, Episode, PointCloud, RawEpisode};

/// Source of block clouds by path.
pub trait BlockStore: Sync {
    fn load(&self, path: &Path) -> Result<PointCloud>;
}

/// Reads blocks from disk, keeping each one after the first read.
#[derive(Debug, Default)]
pub struct FileStore {
    cache: Mutex<HashMap<PathBuf, PointCloud>>,
}

impl FileStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BlockStore for FileStore {
    fn load(&self, path: &Path) -> Result<PointCloud> {
        if let Some(c) = self.cache.lock().unwrap().get(path) {
            return Ok(c.clone());
        }
        let cloud = read_block(path)?;
        self.cache
            .lock()
            .unwrap()
            .insert(path.to_path_buf(), cloud.clone());
        Ok(cloud)
    }
}

/// Blocks held in memory.
#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    pub blocks: HashMap<PathBuf, PointCloud>,
}

impl BlockStore for MemoryStore {
    fn load(&self, path: &Path) -> Result<PointCloud> {
        self.blocks.get(path).cloned().ok_or_else(|| {
            Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "block not in memory store"),
            )
        })
    }
}

/// Draws exactly `points` points: without replacement when the cloud is
/// large enough, otherwise every point plus a uniform draw with replacement.
pub fn resample_cloud(cloud: &PointCloud, points: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let n = cloud.len();
    let mut idx: Vec<usize> = if n >= points {
        let mut v = sample(rng, n, points).into_vec();
        v.sort_unstable();
        v
    } else {
        let mut v: Vec<usize> = (0..n).collect();
        v.extend((n..points).map(|_| rng.random_range(0..n)));
        v
    };
    idx.truncate(points);
    cloud.select(&idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSettings {
    pub n_way: usize,
    pub k_shot: usize,
    /// Query clouds per episode; query `q` is drawn for target `q mod N`.
    pub queries: usize,
    pub points: usize,
    pub seed: u64,
}

impl EpisodeSettings {
    /// `queries` defaults to `n_way`.
    pub fn new(n_way: usize, k_shot: usize, points: usize, seed: u64) -> Self {
        Self {
            n_way,
            k_shot,
            queries: n_way,
            points,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.queries == 0 || self.points == 0 {
            return Err(Error::InvalidArgument(
                "n_way, k_shot, queries and points must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Blocks needed for target `n`.
    fn demand(&self, n: usize) -> usize {
        self.k_shot + (0..self.queries).filter(|q| q % self.n_way == n).count()
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Builds one episode for `targets`, with every block distinct.
fn draw_episode(
    manifest: &SplitManifest,
    store: &dyn BlockStore,
    targets: &[i32],
    s: &EpisodeSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let mut used: HashSet<&Path> = HashSet::new();
    let mut picks: Vec<Vec<&Path>> = Vec::with_capacity(targets.len());
    for (n, &class) in targets.iter().enumerate() {
        let free: Vec<&Path> = manifest
            .blocks_of(class)
            .iter()
            .map(PathBuf::as_path)
            .filter(|p| !used.contains(p))
            .collect();
        let need = s.demand(n);
        if free.len() < need {
            return Err(Error::Sampling {
                class,
                message: format!(
                    "needs {need} distinct blocks in this episode, {} available",
                    free.len()
                ),
            });
        }
        let chosen: Vec<&Path> = sample(rng, free.len(), need).into_iter().map(|i| free[i]).collect();
        used.extend(chosen.iter().copied());
        picks.push(chosen);
    }
    let mut support = Vec::with_capacity(targets.len());
    for chosen in &picks {
        let shots = chosen[..s.k_shot]
            .iter()
            .map(|p| resample_cloud(&store.load(p)?, s.points, rng))
            .collect::<Result<Vec<_>>>()?;
        support.push(shots);
    }
    let mut next = vec![s.k_shot; targets.len()];
    let mut query = Vec::with_capacity(s.queries);
    for q in 0..s.queries {
        let n = q % targets.len();
        let path = picks[n][next[n]];
        next[n] += 1;
        query.push(resample_cloud(&store.load(path)?, s.points, rng)?);
    }
    remap_episode_labels(RawEpisode {
        support,
        query,
        target_classes: targets.to_vec(),
    })
}

fn combinations(items: &[i32], n: usize) -> Vec<Vec<i32>> {
    fn rec(items: &[i32], n: usize, start: usize, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, n, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, n, 0, &mut Vec::new(), &mut out);
    out
}

fn check_supply(manifest: &SplitManifest, classes: &[i32], s: &EpisodeSettings) -> Result<()> {
    let need = (0..s.n_way).map(|n| s.demand(n)).max().unwrap_or(0);
    for &c in classes {
        let have = manifest.blocks_of(c).len();
        if have < need {
            return Err(Error::Sampling {
                class: c,
                message: format!("{have} indexed blocks, episodes need up to {need}"),
            });
        }
    }
    Ok(())
}

/// Test protocol: every N-combination of the unseen classes, a fixed number
/// of episodes each.
pub struct TestEpisodes<'a> {
    manifest: &'a SplitManifest,
    store: &'a dyn BlockStore,
    settings: EpisodeSettings,
    per_combination: usize,
    combos: Vec<Vec<i32>>,
}

impl<'a> TestEpisodes<'a> {
    pub fn new(
        manifest: &'a SplitManifest,
        store: &'a dyn BlockStore,
        settings: EpisodeSettings,
        per_combination: usize,
    ) -> Result<Self> {
        settings.validate()?;
        if manifest.unseen.len() < settings.n_way {
            return Err(Error::InvalidArgument(format!(
                "{} unseen classes, cannot form {}-way episodes",
                manifest.unseen.len(),
                settings.n_way
            )));
        }
        check_supply(manifest, &manifest.unseen, &settings)?;
        Ok(Self {
            manifest,
            store,
            settings,
            per_combination,
            combos: combinations(&manifest.unseen, settings.n_way),
        })
    }

    pub fn len(&self) -> usize {
        self.combos.len() * self.per_combination
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn combinations(&self) -> &[Vec<i32>] {
        &self.combos
    }

    /// Target classes of episode `index`.
    pub fn targets(&self, index: usize) -> &[i32] {
        &self.combos[index / self.per_combination]
    }

    pub fn episode(&self, index: usize) -> Result<Episode> {
        if index >= self.len() {
            return Err(Error::InvalidArgument(format!("episode {index} out of range")));
        }
        let mut rng = self.settings.rng(index as u64);
        draw_episode(self.manifest, self.store, self.targets(index), &self.settings, &mut rng)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Episode>> + '_ {
        (0..self.len()).map(|i| self.episode(i))
    }
}

/// Endless training stream: random N-subsets of the seen classes.
pub struct TrainEpisodes<'a> {
    manifest: &'a SplitManifest,
    store: &'a dyn BlockStore,
    settings: EpisodeSettings,
}

impl<'a> TrainEpisodes<'a> {
    pub fn new(
        manifest: &'a SplitManifest,
        store: &'a dyn BlockStore,
        settings: EpisodeSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if manifest.seen.len() < settings.n_way {
            return Err(Error::InvalidArgument(format!(
                "{} seen classes, cannot form {}-way episodes",
                manifest.seen.len(),
                settings.n_way
            )));
        }
        check_supply(manifest, &manifest.seen, &settings)?;
        Ok(Self {
            manifest,
            store,
            settings,
        })
    }

    pub fn episode(&self, index: usize) -> Result<Episode> {
        let mut rng = self.settings.rng(index as u64);
        let seen = &self.manifest.seen;
        let targets: Vec<i32> = sample(&mut rng, seen.len(), self.settings.n_way)
            .into_iter()
            .map(|i| seen[i])
            .collect();
        draw_episode(self.manifest, self.store, &targets, &self.settings, &mut rng)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Episode>> + '_ {
        (0..).map(|i| self.episode(i))
    }
}
