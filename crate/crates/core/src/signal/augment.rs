use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Segment, SEGMENT_LEN};
use crate::error::{Error, Result};
use crate::rng::{derived, stream};

/// Circular shift of signal and mask together: sample `i` moves to
/// `(i + shift) mod T`.
pub fn augment_shift(seg: &Segment, shift: i64) -> Result<Segment> {
    let t = seg.y.len();
    if shift.unsigned_abs() as usize >= t {
        return Err(Error::invalid("augment_shift", format!("|shift| = {} must be below {t}", shift.abs())));
    }
    let k = shift.rem_euclid(t as i64) as usize;
    let mut x = seg.x.data().to_vec();
    let mut y = seg.y.clone();
    x.rotate_right(k);
    y.rotate_right(k);
    Segment::new(x, y, seg.patient_id, seg.channel_id, seg.artifact_kind)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixOutcome {
    pub segment: Segment,
    /// Set when the mix carries artifact labels without artifact signal.
    pub degenerate: bool,
}

/// Overlays the artifact run of `artifact` onto a clean segment of the same
/// patient and channel.
pub fn augment_mix(clean: &Segment, artifact: &Segment, gain: f64) -> Result<MixOutcome> {
    if clean.patient_id != artifact.patient_id || clean.channel_id != artifact.channel_id {
        return Err(Error::invalid(
            "augment_mix",
            format!(
                "sources differ: patient {} channel {} vs patient {} channel {}",
                clean.patient_id, clean.channel_id, artifact.patient_id, artifact.channel_id
            ),
        ));
    }
    if !clean.is_clean() {
        return Err(Error::invalid("augment_mix", "base segment contains artifact labels"));
    }
    if !gain.is_finite() {
        return Err(Error::invalid("augment_mix", format!("gain {gain} must be finite")));
    }
    let degenerate = gain == 0.0 && !artifact.is_clean();
    if degenerate {
        log::warn!("zero-gain mix for patient {}: labels without artifact signal", clean.patient_id);
    }
    let g = gain as f32;
    let x = clean
        .x
        .data()
        .iter()
        .zip(artifact.x.data())
        .zip(&artifact.y)
        .map(|((&c, &a), &m)| if m == 1 { c + g * a } else { c })
        .collect();
    let segment = Segment::new(x, artifact.y.clone(), clean.patient_id, clean.channel_id, artifact.artifact_kind)?;
    Ok(MixOutcome { segment, degenerate })
}

/// Augmentation policy applied to a segment set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Shifted copies added per artifact segment.
    pub shift_copies: usize,
    pub min_shift: usize,
    pub max_shift: usize,
    /// Probability that a clean segment spawns one mixed segment.
    pub mix_probability: f64,
    pub min_gain: f64,
    pub max_gain: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { shift_copies: 1, min_shift: 250, max_shift: 1250, mix_probability: 0.5, min_gain: 0.8, max_gain: 1.2 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_shift > self.max_shift || self.max_shift >= SEGMENT_LEN {
            return Err(Error::Config(format!(
                "shift range {}..={} must be ordered and below {SEGMENT_LEN}",
                self.min_shift, self.max_shift
            )));
        }
        if !(0.0..=1.0).contains(&self.mix_probability) {
            return Err(Error::Config(format!("mix probability {} outside [0, 1]", self.mix_probability)));
        }
        if !(self.min_gain <= self.max_gain) {
            return Err(Error::Config("gain range must be ordered".into()));
        }
        Ok(())
    }
}

/// Originals followed by shifted copies of artifact segments and mixes of
/// clean segments with artifact segments from the same patient and channel.
pub fn augment_set(segments: &[Segment], cfg: &AugmentConfig, seed: u64) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let mut rng = derived(seed, &[stream::AUGMENT]);
    let mut out = segments.to_vec();
    for seg in segments.iter().filter(|s| !s.is_clean()) {
        for _ in 0..cfg.shift_copies {
            let mag = rng.random_range(cfg.min_shift..=cfg.max_shift) as i64;
            let shift = if rng.random_bool(0.5) { mag } else { -mag };
            out.push(augment_shift(seg, shift)?);
        }
    }
    let mut sources: BTreeMap<(u32, u32), Vec<&Segment>> = BTreeMap::new();
    for seg in segments.iter().filter(|s| !s.is_clean()) {
        sources.entry((seg.patient_id, seg.channel_id)).or_default().push(seg);
    }
    for seg in segments.iter().filter(|s| s.is_clean()) {
        if !rng.random_bool(cfg.mix_probability) {
            continue;
        }
        let Some(pool) = sources.get(&(seg.patient_id, seg.channel_id)) else { continue };
        let src = pool[rng.random_range(0..pool.len())];
        let gain = rng.random_range(cfg.min_gain..=cfg.max_gain);
        out.push(augment_mix(seg, src, gain)?.segment);
    }
    Ok(out)
}
