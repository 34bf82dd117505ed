mod common;

use std::collections::{BTreeMap, HashSet};

use common::{random_cloud, rng};
use tfs3d_core::episodes::{
    block_from_bytes, block_to_bytes, read_block, synth_dataset, write_block, DatasetSpec,
    EpisodeSettings, FileStore, MemoryStore, SplitManifest, SynthClass, TestEpisodes,
    TrainEpisodes,
};
use tfs3d_core::Error;

fn spec(blocks: usize) -> DatasetSpec {
    let colors = [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9], [0.9, 0.9, 0.1], [0.5, 0.5, 0.5], [0.1, 0.9, 0.9]];
    DatasetSpec {
        seed: 11,
        blocks,
        points_per_block: 300,
        classes_per_block: 2,
        sigma: 0.05,
        extent: 0.2,
        color_jitter: 0.02,
        threshold: 100,
        seen: vec![1, 2],
        unseen: vec![3, 4, 5, 6],
        classes: (1..=6)
            .map(|id| SynthClass { id, name: format!("c{id}"), color: colors[id as usize - 1] })
            .collect(),
    }
}

fn store(ds: &tfs3d_core::episodes::SynthDataset) -> MemoryStore {
    MemoryStore { blocks: ds.blocks.iter().cloned().collect() }
}

#[test]
fn block_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(1);
    let cloud = random_cloud(&mut r, 50, Some(4));
    for name in ["a.pcb", "a.txt"] {
        let path = dir.path().join(name);
        write_block(&path, &cloud).unwrap();
        let back = read_block(&path).unwrap();
        assert_eq!(block_to_bytes(&back), block_to_bytes(&cloud));
    }
    let bin = read_block(&dir.path().join("a.pcb")).unwrap();
    let txt = read_block(&dir.path().join("a.txt")).unwrap();
    assert_eq!(bin, txt);
    let bytes = block_to_bytes(&bin);
    assert_eq!(block_from_bytes(&bytes, dir.path()).unwrap(), bin);
}

#[test]
fn missing_file_is_io_error() {
    let err = read_block(std::path::Path::new("/nonexistent/block.pcb")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn protocol_counts_and_reproducibility() {
    let ds = synth_dataset(&spec(60)).unwrap();
    let st = store(&ds);
    let settings = EpisodeSettings::new(2, 1, 128, 5);
    let eps = TestEpisodes::new(&ds.manifest, &st, settings, 3).unwrap();
    assert_eq!(eps.combinations().len(), 6);
    assert_eq!(eps.len(), 18);
    let a: Vec<_> = eps.iter().map(|e| e.unwrap()).collect();
    let b: Vec<_> = eps.iter().map(|e| e.unwrap()).collect();
    assert_eq!(a, b);
    for (i, e) in a.iter().enumerate() {
        assert_eq!(e.target_classes(), eps.targets(i));
        assert!(e.support().iter().flatten().chain(e.query()).all(|c| c.len() == 128));
    }
    let other = TestEpisodes::new(&ds.manifest, &st, EpisodeSettings { seed: 6, ..settings }, 3).unwrap();
    assert_ne!(a[0], other.episode(0).unwrap());
}

#[test]
fn blocks_are_distinct_within_an_episode() {
    let ds = synth_dataset(&spec(40)).unwrap();
    let st = store(&ds);
    // more points than any block holds: each block's points come first, in order,
    // so the first point identifies the source block
    let settings = EpisodeSettings { n_way: 2, k_shot: 2, queries: 2, points: 400, seed: 2 };
    let eps = TestEpisodes::new(&ds.manifest, &st, settings, 10).unwrap();
    for e in eps.iter() {
        let e = e.unwrap();
        let mut used = HashSet::new();
        for c in e.support().iter().flatten().chain(e.query()) {
            let key = c.coords()[0].map(f64::to_bits);
            assert!(used.insert(key), "block reused within an episode");
        }
    }
}

#[test]
fn insufficient_blocks_name_the_class() {
    let mut ds = synth_dataset(&spec(30)).unwrap();
    let entry = ds.manifest.classes.iter_mut().find(|c| c.id == 4).unwrap();
    entry.blocks.truncate(1);
    let st = store(&ds);
    let err = TestEpisodes::new(&ds.manifest, &st, EpisodeSettings::new(2, 1, 64, 0), 1)
        .err()
        .unwrap();
    assert!(matches!(err, Error::Sampling { class: 4, .. }), "{err}");
}

#[test]
fn single_block_per_class_errors_or_stays_distinct() {
    let mut ds = synth_dataset(&spec(12)).unwrap();
    for c in &mut ds.manifest.classes {
        c.blocks.truncate(1);
    }
    let st = store(&ds);
    let settings = EpisodeSettings { n_way: 1, k_shot: 1, queries: 1, points: 64, seed: 0 };
    let err = TestEpisodes::new(&ds.manifest, &st, settings, 1).err().unwrap();
    assert!(matches!(err, Error::Sampling { .. }));
}

#[test]
fn training_stream_uses_seen_classes() {
    let ds = synth_dataset(&spec(40)).unwrap();
    let st = store(&ds);
    let train = TrainEpisodes::new(&ds.manifest, &st, EpisodeSettings::new(2, 1, 64, 3)).unwrap();
    for e in train.iter().take(5) {
        let e = e.unwrap();
        let mut t = e.target_classes().to_vec();
        t.sort_unstable();
        assert_eq!(t, vec![1, 2]);
        assert_eq!(e.query().len(), 2);
    }
}

#[test]
fn manifest_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&spec(20)).unwrap();
    for (p, c) in &ds.blocks {
        write_block(&dir.path().join(p), c).unwrap();
    }
    let path = dir.path().join("split.toml");
    ds.manifest.save(&path).unwrap();
    let loaded = SplitManifest::load(&path).unwrap();
    assert!(loaded.classes.iter().flat_map(|c| &c.blocks).all(|b| b.starts_with(dir.path())));
    let st = FileStore::new();
    let eps = TestEpisodes::new(&loaded, &st, EpisodeSettings::new(2, 1, 64, 1), 1).unwrap();
    assert!(eps.episode(0).is_ok());
}

#[test]
fn synthetic_budgets_and_determinism() {
    let a = synth_dataset(&spec(10)).unwrap();
    let b = synth_dataset(&spec(10)).unwrap();
    for ((pa, ca), (pb, cb)) in a.blocks.iter().zip(&b.blocks) {
        assert_eq!(pa, pb);
        assert_eq!(block_to_bytes(ca), block_to_bytes(cb));
        let mut hist = BTreeMap::new();
        for l in ca.labels().unwrap() {
            *hist.entry(*l).or_insert(0) += 1;
        }
        assert_eq!(hist.values().copied().collect::<Vec<_>>(), vec![150, 150]);
    }
}
