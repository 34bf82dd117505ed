//! Block ingestion, class splits, episode sampling and synthetic scenes.

pub mod block;
pub mod manifest;
pub mod sampler;
pub mod synth;

pub use block::{block_from_bytes, block_from_text, block_to_bytes, block_to_text, read_block, write_block};
pub use manifest::{ClassEntry, SplitManifest};
pub use sampler::{
    resample_cloud, BlockStore, EpisodeSettings, FileStore, MemoryStore, TestEpisodes,
    TrainEpisodes,
};
pub use synth::{synth_dataset, synth_scene, ClusterSpec, DatasetSpec, SynthClass, SynthDataset};
