use serde::{Deserialize, Serialize};

use super::augment::{augment_set, AugmentConfig};
use super::split::{split_dataset, SplitRatios, Splits};
use super::synth::{synth_generate, SynthSpec};
use super::{preprocess, segment, Annotation, PreprocessConfig, Segment};
use crate::error::Result;

/// Everything needed to regenerate a dataset from a seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub synth: SynthSpec,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub split: SplitRatios,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltDataset {
    pub splits: Splits,
    pub annotations: Vec<Annotation>,
    /// Segment count before augmentation.
    pub raw_segments: usize,
}

/// Generate, preprocess, segment, augment and split.
pub fn build_dataset(cfg: &DatasetConfig, seed: u64) -> Result<BuiltDataset> {
    let recordings = synth_generate(&cfg.synth, seed)?;
    let mut segments: Vec<Segment> = Vec::new();
    let mut annotations = Vec::new();
    for r in recordings {
        let clean = preprocess(&r.recording, &cfg.preprocess)?;
        segments.extend(segment(&clean, &r.annotations)?);
        annotations.extend(r.annotations);
    }
    let raw_segments = segments.len();
    if segments.iter().all(Segment::is_clean) {
        log::warn!("generated dataset contains no artifacts");
    }
    let augmented = augment_set(&segments, &cfg.augment, seed)?;
    let splits = split_dataset(augmented, cfg.split, seed)?;
    Ok(BuiltDataset { splits, annotations, raw_segments })
}
