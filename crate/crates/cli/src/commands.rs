use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use tfs3d_core::episodes::{
    read_block, synth_dataset, write_block, DatasetSpec, FileStore, SplitManifest, TestEpisodes,
    TrainEpisodes,
};
use tfs3d_core::eval::{
    class_table_csv, episode_log_csv, export_predictions, summary_text, MetricAccumulator,
    MiouMode, ReportHeader,
};
use tfs3d_core::quest::checkpoint::{write_records, Record};
use tfs3d_core::quest::{read_checkpoint, segment_with_quest, write_checkpoint};
use tfs3d_core::{
    encode as encode_cloud, remap_episode_labels, segment_episode, segment_features,
    EpisodeFeatures, RawEpisode,
};

use crate::config::RunConfig;
use crate::InputError;

/// Magic of the feature dump written by `encode`.
pub const FEATURES_MAGIC: &[u8; 4] = b"TFFD";

pub fn parse_support(s: &str) -> Result<(i32, PathBuf), String> {
    let (class, path) = s.split_once('=').ok_or_else(|| format!("expected CLASS=PATH, got `{s}`"))?;
    let class = class.trim().parse().map_err(|e| format!("bad class id `{class}`: {e}"))?;
    Ok((class, PathBuf::from(path)))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn encode(cfg: &RunConfig, block: &Path, out: &Path) -> anyhow::Result<()> {
    let cloud = read_block(block)?;
    let feats = encode_cloud(&cloud, &cfg.encoder)?.final_features;
    let (m, d) = (feats.point_count(), feats.channels());
    let record = Record { name: "features".into(), shape: vec![m, d], data: feats.into_inner().into_iter().collect() };
    write_file(out, write_records(FEATURES_MAGIC, &[record]))?;
    println!("seed = {}\npoints = {m}\nchannels = {d}", cfg.seed);
    Ok(())
}

pub fn segment(cfg: &RunConfig, support: &[(i32, PathBuf)], query: &[PathBuf], out: Option<&Path>) -> anyhow::Result<()> {
    let mut targets: Vec<i32> = Vec::new();
    let mut shots: Vec<Vec<_>> = Vec::new();
    for (class, path) in support {
        let cloud = read_block(path)?;
        match targets.iter().position(|c| c == class) {
            Some(i) => shots[i].push(cloud),
            None => {
                targets.push(*class);
                shots.push(vec![cloud]);
            }
        }
    }
    let queries = query.iter().map(|p| read_block(p)).collect::<tfs3d_core::Result<Vec<_>>>()?;
    let episode = remap_episode_labels(RawEpisode { support: shots, query: queries, target_classes: targets.clone() })?;
    let pred = segment_episode(&episode, &cfg.encoder, &cfg.head)?;

    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (i, (cloud, labels)) in episode.query().iter().zip(&pred.labels).enumerate() {
            write_file(&dir.join(format!("query_{i}.txt")), export_predictions(cloud, labels))?;
        }
    }
    let header = ReportHeader {
        seed: cfg.seed,
        n_way: episode.n_way(),
        k_shot: episode.k_shot(),
        method: "tfs3d".into(),
    };
    let truth: Option<Vec<Vec<i32>>> = episode.query_labels().into_iter().collect();
    let mut text = String::new();
    let mapping: Vec<String> = targets.iter().enumerate().map(|(i, c)| format!("{} = {c}", i + 1)).collect();
    let _ = writeln!(text, "# labels: 0 = background, {}", mapping.join(", "));
    match truth {
        Some(truth) => {
            let mut acc = MetricAccumulator::new();
            acc.accumulate(0, &pred.labels, &truth, &targets)?;
            let names = targets.iter().map(|&c| (c, format!("class{c}"))).collect();
            text += &summary_text(&header, &acc.miou(MiouMode::Global)?, &names);
        }
        None => {
            let _ = writeln!(text, "seed = {}\nmethod = \"tfs3d\"\nn_way = {}\nk_shot = {}", header.seed, header.n_way, header.k_shot);
        }
    }
    print!("{text}");
    Ok(())
}

pub fn train(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    iterations: Option<usize>,
    history: Option<&Path>,
) -> anyhow::Result<()> {
    let manifest = SplitManifest::load(manifest)?;
    let store = FileStore::new();
    let episodes = TrainEpisodes::new(&manifest, &store, cfg.episode_settings())?;
    let iters = iterations.unwrap_or(cfg.train.iterations);
    if iters == 0 {
        return Err(InputError("iterations must be >= 1".into()).into());
    }
    let outcome = tfs3d_core::quest::train(episodes.iter(), &cfg.encoder, &cfg.head, &cfg.quest, iters)?;
    write_checkpoint(out, &outcome.params)?;
    if let Some(path) = history {
        let mut csv = String::from("iteration,loss\n");
        for (i, l) in outcome.history.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l:e}");
        }
        write_file(path, csv)?;
    }
    let first = outcome.history.first().copied().unwrap_or(f64::NAN);
    let last = outcome.history.last().copied().unwrap_or(f64::NAN);
    println!("seed = {}\niterations = {iters}\nfirst_loss = {first:.6}\nlast_loss = {last:.6}", cfg.seed);
    Ok(())
}

pub struct EvalArgs {
    pub manifest: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub per_combination: usize,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> anyhow::Result<()> {
    let manifest = SplitManifest::load(&args.manifest)?;
    let store = FileStore::new();
    let episodes = TestEpisodes::new(&manifest, &store, cfg.episode_settings(), args.per_combination)?;
    let quest = args.checkpoint.as_deref().map(read_checkpoint).transpose()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .context("cannot start worker pool")?;

    // per-episode accumulators merge exactly, so the worker count never
    // changes the result
    let acc = pool.install(|| {
        (0..episodes.len())
            .into_par_iter()
            .map(|i| -> tfs3d_core::Result<MetricAccumulator> {
                let episode = episodes.episode(i)?;
                let feats = EpisodeFeatures::encode(&episode, &cfg.encoder)?;
                let pred = match &quest {
                    Some(p) => segment_with_quest(&feats, &cfg.head, &p.weights, &cfg.quest)?,
                    None => segment_features(&feats, &cfg.head)?,
                };
                let truth: Vec<Vec<i32>> = feats.query_labels.into_iter().map(|l| l.unwrap_or_default()).collect();
                let mut acc = MetricAccumulator::new();
                acc.accumulate(i as u64, &pred.labels, &truth, episode.target_classes())?;
                Ok(acc)
            })
            .try_reduce(MetricAccumulator::new, |a, b| a.merge(b))
    })?;

    let report = acc.miou(MiouMode::Global)?;
    let header = ReportHeader {
        seed: cfg.seed,
        n_way: cfg.episodes.n_way,
        k_shot: cfg.episodes.k_shot,
        method: if quest.is_some() { "tfs3d-t" } else { "tfs3d" }.into(),
    };
    let names: BTreeMap<i32, String> = manifest.classes.iter().map(|c| (c.id, c.name.clone())).collect();
    let summary = summary_text(&header, &report, &names);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_file(&dir.join("summary.txt"), &summary)?;
        write_file(&dir.join("classes.csv"), class_table_csv(&report))?;
        write_file(&dir.join("episodes.csv"), episode_log_csv(&acc))?;
    }
    print!("{summary}");
    Ok(())
}

pub fn synth(spec_path: &Path, out: &Path) -> anyhow::Result<()> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| InputError(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: DatasetSpec =
        toml::from_str(&text).map_err(|e| InputError(format!("spec {}: {e}", spec_path.display())))?;
    let ds = synth_dataset(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut histogram: BTreeMap<i32, usize> = BTreeMap::new();
    for (name, cloud) in &ds.blocks {
        write_block(&out.join(name), cloud)?;
        for &l in cloud.labels().unwrap_or_default() {
            *histogram.entry(l).or_default() += 1;
        }
    }
    ds.manifest.save(&out.join("manifest.toml"))?;
    println!("seed = {}\nblocks = {}", spec.seed, ds.blocks.len());
    for (class, points) in histogram {
        println!("class {class:>4} points = {points}");
    }
    Ok(())
}
