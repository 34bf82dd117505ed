//! Few-shot 3D point-cloud segmentation with a training-free trigonometric
//! encoder, prototype matching, and an optional trainable query-guided
//! prototype adjustment.

pub mod encoder;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod frequencies;
pub mod head;
pub mod quest;
pub mod spatial;
pub mod types;

pub use encoder::{encode, EncoderConfig, PeMode};
pub use error::{Error, Result};
pub use head::{segment_episode, segment_features, EpisodeFeatures, HeadConfig, Prediction};
pub use quest::{QuestConfig, QuestParameters, QuestWeights};
pub use types::{
    remap_episode_labels, EncodedCloud, Episode, FeatureMatrix, PointCloud, PrototypeSet,
    RawEpisode, UNLABELED,
};
