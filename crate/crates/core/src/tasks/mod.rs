//! Datasets, class splits, episodic samplers and synthetic task generators.

mod dataset;
mod episode;
mod synthetic;

pub use dataset::{split_classes, ClassData, Dataset, SplitFractions, MIN_SPLIT_CLASSES};
pub(crate) use dataset::Reader;
pub use episode::{sample_any, sample_disjoint_pair, sample_episode, Episode, TaskPair};
pub use synthetic::{
    gen_synthetic, generate, nearest_center_accuracy, GeneratorKind, Synthetic, SyntheticSpec, MIN_SYNTHETIC_CLASSES,
};
