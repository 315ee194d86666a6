//! Signal preprocessing, segmentation, augmentation, splitting and a
//! synthetic EEG generator with ground-truth artifact intervals.

mod augment;
mod dataset;
mod filter;
mod pipeline;
mod resample;
mod segment;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment_mix, augment_set, augment_shift, AugmentConfig, MixOutcome};
pub use dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use filter::{apply_filter, design_bandpass, design_notch, padlen, Biquad, BiquadCascade, FilterMode};
pub use pipeline::{build_dataset, BuiltDataset, DatasetConfig};
pub use resample::resample;
pub use segment::{
    format_annotations, mask_runs, parse_annotations, segment, validate_mask, Annotation, Run,
};
pub use split::{split_dataset, SplitRatios, Splits};
pub use synth::{synth_generate, ArtifactRates, SynthRecording, SynthSpec};

/// Target sampling rate after preprocessing.
pub const SAMPLE_RATE: f64 = 250.0;
/// Samples per segment: 10 s at [`SAMPLE_RATE`].
pub const SEGMENT_LEN: usize = 2500;
pub const SEGMENT_SECONDS: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    #[default]
    None,
    Eye,
    Muscle,
    Electrode,
    Chewing,
    Shiver,
}

impl ArtifactKind {
    pub const ARTIFACTS: [ArtifactKind; 5] =
        [Self::Eye, Self::Muscle, Self::Electrode, Self::Chewing, Self::Shiver];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Self::None, Self::Eye, Self::Muscle, Self::Electrode, Self::Chewing, Self::Shiver]
            .get(code as usize)
            .copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Eye => "eye",
            Self::Muscle => "muscle",
            Self::Electrode => "electrode",
            Self::Chewing => "chewing",
            Self::Shiver => "shiver",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        (0..6)
            .filter_map(Self::from_code)
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("artifact_kind", format!("unknown kind {s:?}")))
    }
}

/// One channel of one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub patient_id: u32,
    pub channel_id: u32,
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl Recording {
    pub fn new(patient_id: u32, channel_id: u32, fs: f64, samples: Vec<f64>) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid("recording", format!("sampling rate {fs} must be positive")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("recording", "no samples"));
        }
        Ok(Self { patient_id, channel_id, fs, samples })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Preprocessing chain settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub mode: FilterMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { low_hz: 0.3, high_hz: 40.0, order: 2, notch_hz: 60.0, notch_q: 30.0, mode: FilterMode::ForwardBackward }
    }
}

impl PreprocessConfig {
    pub fn cascade(&self) -> Result<BiquadCascade> {
        let bp = design_bandpass(self.low_hz, self.high_hz, SAMPLE_RATE, self.order)?;
        Ok(bp.then(&design_notch(self.notch_hz, self.notch_q, SAMPLE_RATE)?))
    }
}

/// Resamples to [`SAMPLE_RATE`], then applies bandpass and notch.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    let resampled = resample(&rec.samples, rec.fs, SAMPLE_RATE)?;
    let filtered = apply_filter(&resampled, &cfg.cascade()?, cfg.mode)?;
    Recording::new(rec.patient_id, rec.channel_id, SAMPLE_RATE, filtered)
}

/// One 10 s training or evaluation sample. Labels are binary; runs clipped
/// by a window edge may be shorter than the artifact minimum, see
/// [`validate_mask`].
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Shape `[1, SEGMENT_LEN]`.
    pub x: Tensor<f32>,
    pub y: Vec<u8>,
    pub patient_id: u32,
    /// Not persisted in dataset files; loaded segments carry channel 0.
    pub channel_id: u32,
    pub artifact_kind: ArtifactKind,
}

impl Segment {
    pub fn new(x: Vec<f32>, y: Vec<u8>, patient_id: u32, channel_id: u32, artifact_kind: ArtifactKind) -> Result<Self> {
        if x.len() != SEGMENT_LEN || y.len() != SEGMENT_LEN {
            return Err(Error::shape(
                "segment",
                format!("expected {SEGMENT_LEN} samples and labels, got {} and {}", x.len(), y.len()),
            ));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("segment", format!("non-finite sample at {i}")));
        }
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::Label { index, value });
        }
        Ok(Self { x: Tensor::new(&[1, SEGMENT_LEN], x)?, y, patient_id, channel_id, artifact_kind })
    }

    pub fn artifact_count(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_clean(&self) -> bool {
        self.y.iter().all(|&v| v == 0)
    }
}
