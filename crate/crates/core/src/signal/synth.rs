//! Synthetic EEG-like recordings with injected artifacts and exact
//! ground-truth intervals.
//!
//! Each recording is split into aligned windows of [`SEGMENT_SECONDS`]; a
//! window holds at most one artifact, placed wholly inside it, so later
//! segmentation never clips a run.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::filter::{apply_filter, design_bandpass, FilterMode};
use super::{Annotation, ArtifactKind, Recording, SEGMENT_SECONDS};
use crate::error::{Error, Result};
use crate::rng::{derived, stream, SeededRng};

/// Probability per window that an artifact of each kind is injected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRates {
    pub eye: f64,
    pub muscle: f64,
    pub electrode: f64,
    pub chewing: f64,
    pub shiver: f64,
}

impl ArtifactRates {
    pub fn uniform(rate: f64) -> Self {
        Self { eye: rate, muscle: rate, electrode: rate, chewing: rate, shiver: rate }
    }

    pub fn get(&self, kind: ArtifactKind) -> f64 {
        match kind {
            ArtifactKind::None => 0.0,
            ArtifactKind::Eye => self.eye,
            ArtifactKind::Muscle => self.muscle,
            ArtifactKind::Electrode => self.electrode,
            ArtifactKind::Chewing => self.chewing,
            ArtifactKind::Shiver => self.shiver,
        }
    }

    pub fn total(&self) -> f64 {
        ArtifactKind::ARTIFACTS.iter().map(|&k| self.get(k)).sum()
    }
}

impl Default for ArtifactRates {
    fn default() -> Self {
        Self::uniform(0.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub patients: u32,
    pub channels: u32,
    pub minutes: f64,
    /// Native rates; each recording draws one.
    pub sample_rates: Vec<f64>,
    pub rates: ArtifactRates,
    pub min_run_s: f64,
    pub max_run_s: f64,
    pub background_std: f64,
    pub line_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            patients: 20,
            channels: 1,
            minutes: 2.0,
            sample_rates: vec![250.0, 256.0, 500.0],
            rates: ArtifactRates::default(),
            min_run_s: 0.5,
            max_run_s: 6.0,
            background_std: 1.0,
            line_noise: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patients == 0 || self.channels == 0 || !(self.minutes > 0.0) {
            return bad("generator needs patients, channels and a positive duration".into());
        }
        if self.sample_rates.is_empty() || self.sample_rates.iter().any(|&f| !(f >= 100.0)) {
            return bad("sample rates must be non-empty and at least 100 Hz".into());
        }
        let r = ArtifactKind::ARTIFACTS.map(|k| self.rates.get(k));
        if r.iter().any(|&v| !(0.0..=1.0).contains(&v)) || self.rates.total() > 1.0 + 1e-12 {
            return bad(format!("artifact rates {r:?} must lie in [0, 1] and sum to at most 1"));
        }
        if !(self.min_run_s > 0.0 && self.min_run_s <= self.max_run_s && self.max_run_s <= SEGMENT_SECONDS) {
            return bad(format!("run length range {}..{} s invalid", self.min_run_s, self.max_run_s));
        }
        if !(self.background_std > 0.0) || !(self.line_noise >= 0.0) {
            return bad("amplitudes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecording {
    pub recording: Recording,
    pub annotations: Vec<Annotation>,
}

/// Generates every (patient, channel) recording from its own seeded stream.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthRecording>> {
    spec.validate()?;
    let mut out = Vec::with_capacity((spec.patients * spec.channels) as usize);
    for p in 0..spec.patients {
        for c in 0..spec.channels {
            let mut rng = derived(seed, &[stream::SYNTH, p as u64, c as u64]);
            out.push(generate_one(spec, p, c, &mut rng)?);
        }
    }
    Ok(out)
}

fn generate_one(spec: &SynthSpec, patient: u32, channel: u32, rng: &mut SeededRng) -> Result<SynthRecording> {
    let fs = spec.sample_rates[rng.random_range(0..spec.sample_rates.len())];
    let n = (spec.minutes * 60.0 * fs).round() as usize;
    let scale = spec.background_std * rng.random_range(0.8..1.25);
    let mut x = background(n, fs, rng);
    x.iter_mut().for_each(|v| *v *= scale);

    let windows = (n as f64 / fs / SEGMENT_SECONDS).floor() as usize;
    let mut annotations = Vec::new();
    for w in 0..windows {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let Some(kind) = ArtifactKind::ARTIFACTS.into_iter().find(|&k| {
            acc += spec.rates.get(k);
            u < acc
        }) else {
            continue;
        };
        let len_s = rng.random_range(spec.min_run_s..=spec.max_run_s);
        let start_s = w as f64 * SEGMENT_SECONDS + rng.random_range(0.0..=SEGMENT_SECONDS - len_s);
        let end_s = start_s + len_s;
        let (s, e) = ((start_s * fs).round() as usize, ((end_s * fs).round() as usize).min(n));
        inject(kind, &mut x[s..e], fs, scale, rng)?;
        annotations.push(Annotation { patient_id: patient, channel_id: channel, start_s, end_s, kind });
    }

    let phase = rng.random_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        *v += spec.line_noise * (2.0 * PI * 60.0 * i as f64 / fs + phase).sin();
    }
    Ok(SynthRecording { recording: Recording::new(patient, channel, fs, x)?, annotations })
}

fn white(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn standardize(x: &mut [f64]) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let inv = if std > 0.0 { std.recip() } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}

/// Unit-variance mix of pink noise with alpha and beta rhythms.
fn background(n: usize, fs: f64, rng: &mut SeededRng) -> Vec<f64> {
    let mut pink = white(n, rng);
    let mut b = [0.0f64; 7];
    for v in pink.iter_mut() {
        let w = *v;
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        *v = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
        b[6] = w * 0.115926;
    }
    standardize(&mut pink);
    let (a_alpha, a_beta) = (rng.random_range(0.4..0.8), rng.random_range(0.15..0.35));
    let (p_alpha, p_beta) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let mut x: Vec<f64> = pink
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let t = i as f64 / fs;
            0.7 * p + a_alpha * (2.0 * PI * 10.0 * t + p_alpha).sin() + a_beta * (2.0 * PI * 20.0 * t + p_beta).sin()
        })
        .collect();
    standardize(&mut x);
    x
}

/// Unit-variance band-limited noise.
fn band_noise(n: usize, lo: f64, hi: f64, fs: f64, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let filt = design_bandpass(lo, hi.min(0.45 * fs), fs, 2)?;
    let mut x = apply_filter(&white(n, rng), &filt, FilterMode::Forward)?;
    standardize(&mut x);
    Ok(x)
}

fn inject(kind: ArtifactKind, x: &mut [f64], fs: f64, scale: f64, rng: &mut SeededRng) -> Result<()> {
    let n = x.len();
    let t = |i: usize| i as f64 / fs;
    match kind {
        ArtifactKind::None => {}
        ArtifactKind::Eye => {
            let f = rng.random_range(0.5..=2.0);
            let a = rng.random_range(3.0..=5.0) * scale;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for (i, v) in x.iter_mut().enumerate() {
                *v += sign * a * (PI * (2.0 * f * t(i)).fract()).sin();
            }
        }
        ArtifactKind::Muscle => {
            let a = rng.random_range(2.0..=4.0) * scale;
            for (v, e) in x.iter_mut().zip(band_noise(n, 20.0, 50.0, fs, rng)?) {
                *v += a * e;
            }
        }
        ArtifactKind::Electrode => {
            if rng.random_bool(0.5) {
                let level = x[0];
                x.fill(level);
            } else {
                let mut i = 0;
                while i < n {
                    let hold = ((rng.random_range(0.2..=0.6) * fs) as usize).max(1);
                    let level = rng.random_range(3.0..=6.0) * scale * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    x[i..(i + hold).min(n)].iter_mut().for_each(|v| *v += level);
                    i += hold;
                }
            }
        }
        ArtifactKind::Chewing => {
            let rate = rng.random_range(1.0..=2.0);
            let duty = rng.random_range(0.3..=0.5);
            let a = rng.random_range(3.0..=5.0) * scale;
            let noise = band_noise(n, 20.0, 40.0, fs, rng)?;
            for (i, (v, e)) in x.iter_mut().zip(noise).enumerate() {
                if (rate * t(i)).fract() < duty {
                    *v += a * e;
                }
            }
        }
        ArtifactKind::Shiver => {
            let f = rng.random_range(5.0..=8.0);
            let a = rng.random_range(2.0..=4.0) * scale;
            let phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                let envelope = 1.0 + 0.3 * (2.0 * PI * 0.7 * t(i)).sin();
                *v += a * envelope * (2.0 * PI * f * t(i) + phase).sin();
            }
        }
    }
    Ok(())
}
