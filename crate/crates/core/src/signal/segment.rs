use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ArtifactKind, Recording, Segment, SAMPLE_RATE, SEGMENT_LEN};
use crate::error::{Error, Result};

/// A labelled artifact interval in seconds from recording start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub patient_id: u32,
    pub channel_id: u32,
    pub start_s: f64,
    pub end_s: f64,
    pub kind: ArtifactKind,
}

impl Annotation {
    /// Sample range `[start, end)` at rate `fs`.
    pub fn sample_range(&self, fs: f64) -> (usize, usize) {
        ((self.start_s * fs).round() as usize, (self.end_s * fs).round() as usize)
    }
}

/// A maximal run of ones: `len` samples starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub len: usize,
}

/// Runs of ones in `mask`. With `circular`, a run touching both ends is
/// reported once, starting near the end and wrapping.
pub fn mask_runs(mask: &[u8], circular: bool) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] == 1 {
            let start = i;
            while i < mask.len() && mask[i] == 1 {
                i += 1;
            }
            runs.push(Run { start, len: i - start });
        } else {
            i += 1;
        }
    }
    if circular && runs.len() > 1 {
        let (first, last) = (runs[0], runs[runs.len() - 1]);
        if first.start == 0 && last.start + last.len == mask.len() {
            runs.remove(0);
            runs.last_mut().expect("at least one run").len += first.len;
        }
    }
    runs
}

/// Checks the artifact definition: binary labels, every run longer than one
/// sample.
pub fn validate_mask(mask: &[u8], circular: bool) -> Result<()> {
    if let Some((index, &value)) = mask.iter().enumerate().find(|(_, &v)| v > 1) {
        return Err(Error::Label { index, value });
    }
    if let Some(r) = mask_runs(mask, circular).iter().find(|r| r.len < 2) {
        return Err(Error::invalid("mask", format!("artifact run at {} has length {}", r.start, r.len)));
    }
    Ok(())
}

/// Cuts a preprocessed recording into non-overlapping windows of
/// [`SEGMENT_LEN`] samples, dropping the remainder. Only annotations matching
/// the recording's patient and channel are used.
pub fn segment(rec: &Recording, annotations: &[Annotation]) -> Result<Vec<Segment>> {
    if rec.fs != SAMPLE_RATE {
        return Err(Error::invalid("segment", format!("recording at {} Hz, expected {SAMPLE_RATE} Hz", rec.fs)));
    }
    let n = rec.samples.len();
    let duration = rec.duration_s();
    let mut mask = vec![0u8; n];
    let mut kinds = vec![ArtifactKind::None; n];
    for a in annotations.iter().filter(|a| a.patient_id == rec.patient_id && a.channel_id == rec.channel_id) {
        if !(a.start_s >= 0.0 && a.start_s < a.end_s && a.end_s <= duration + 0.5 / rec.fs) {
            return Err(Error::invalid(
                "segment",
                format!("annotation {}..{} s outside recording of {duration} s", a.start_s, a.end_s),
            ));
        }
        let (s, e) = a.sample_range(rec.fs);
        mask[s..e.min(n)].fill(1);
        kinds[s..e.min(n)].fill(a.kind);
    }

    (0..n / SEGMENT_LEN)
        .map(|w| {
            let span = w * SEGMENT_LEN..(w + 1) * SEGMENT_LEN;
            let mut counts = [0usize; 6];
            for &k in &kinds[span.clone()] {
                counts[k.code() as usize] += 1;
            }
            let kind = (1..6u8)
                .max_by_key(|&c| (counts[c as usize], std::cmp::Reverse(c)))
                .filter(|&c| counts[c as usize] > 0)
                .and_then(ArtifactKind::from_code)
                .unwrap_or(ArtifactKind::None);
            let x = rec.samples[span.clone()].iter().map(|&v| v as f32).collect();
            Segment::new(x, mask[span].to_vec(), rec.patient_id, rec.channel_id, kind)
        })
        .collect()
}

/// Parses `patient_id channel_id start_s end_s kind` lines. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let bad = |line: usize, detail: String| Error::corrupt("annotation", format!("line {line}: {detail}"));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(i + 1, format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, format!("{s:?}: {e}")));
            let id = |s: &str| s.parse::<u32>().map_err(|e| bad(i + 1, format!("{s:?}: {e}")));
            Ok(Annotation {
                patient_id: id(f[0])?,
                channel_id: id(f[1])?,
                start_s: num(f[2])?,
                end_s: num(f[3])?,
                kind: f[4].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
            })
        })
        .collect()
}

pub fn format_annotations(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        let _ = writeln!(out, "{} {} {} {} {}", a.patient_id, a.channel_id, a.start_s, a.end_s, a.kind);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(seconds: usize) -> Recording {
        Recording::new(4, 2, SAMPLE_RATE, (0..seconds * 250).map(|i| (i % 17) as f64).collect()).unwrap()
    }

    fn ann(start_s: f64, end_s: f64, kind: ArtifactKind) -> Annotation {
        Annotation { patient_id: 4, channel_id: 2, start_s, end_s, kind }
    }

    #[test]
    fn thirty_seconds_make_three_windows() {
        let segs = segment(&rec(30), &[]).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.is_clean() && s.artifact_kind == ArtifactKind::None));
        assert_eq!(segment(&rec(35), &[]).unwrap().len(), 3);
        assert_eq!(segs[1].x.data()[0], (2500 % 17) as f32);
    }

    #[test]
    fn annotation_maps_to_exact_indices() {
        let segs = segment(&rec(20), &[ann(12.0, 14.0, ArtifactKind::Muscle)]).unwrap();
        assert!(segs[0].is_clean());
        let ones: Vec<usize> = (0..SEGMENT_LEN).filter(|&i| segs[1].y[i] == 1).collect();
        assert_eq!(ones, (500..1000).collect::<Vec<_>>());
        assert_eq!(segs[1].artifact_kind, ArtifactKind::Muscle);
    }

    #[test]
    fn dominant_kind_labels_the_window() {
        let segs =
            segment(&rec(10), &[ann(1.0, 2.0, ArtifactKind::Eye), ann(3.0, 6.0, ArtifactKind::Shiver)]).unwrap();
        assert_eq!(segs[0].artifact_kind, ArtifactKind::Shiver);
    }

    #[test]
    fn out_of_bounds_annotations_fail() {
        assert!(segment(&rec(10), &[ann(9.0, 11.0, ArtifactKind::Eye)]).is_err());
        assert!(segment(&rec(10), &[ann(-1.0, 1.0, ArtifactKind::Eye)]).is_err());
        assert!(segment(&rec(10), &[ann(3.0, 3.0, ArtifactKind::Eye)]).is_err());
        let other = Annotation { patient_id: 9, ..ann(50.0, 60.0, ArtifactKind::Eye) };
        assert!(segment(&rec(10), &[ann(0.0, 10.0, ArtifactKind::Eye)]).unwrap()[0].artifact_count() == 2500);
        assert!(segment(&rec(10), &[other]).unwrap()[0].is_clean());
        let slow = Recording::new(4, 2, 500.0, vec![0.0; 5000]).unwrap();
        assert!(segment(&slow, &[]).is_err());
    }

    #[test]
    fn runs_and_validation() {
        let m = [1, 1, 0, 0, 1, 1, 1, 0, 1, 1];
        assert_eq!(mask_runs(&m, false), vec![Run { start: 0, len: 2 }, Run { start: 4, len: 3 }, Run { start: 8, len: 2 }]);
        assert_eq!(mask_runs(&m, true), vec![Run { start: 4, len: 3 }, Run { start: 8, len: 4 }]);
        assert_eq!(mask_runs(&[1, 1, 1], true), vec![Run { start: 0, len: 3 }]);
        assert!(validate_mask(&m, false).is_ok());
        assert!(validate_mask(&[1, 0, 0, 0, 1], false).is_err());
        assert!(validate_mask(&[1, 0, 0, 0, 1], true).is_ok());
        assert!(validate_mask(&[0, 2, 0], false).is_err());
    }

    #[test]
    fn annotation_text_round_trip() {
        let anns = vec![ann(0.1, 2.75, ArtifactKind::Chewing), ann(1.0 / 3.0, 9.0, ArtifactKind::Electrode)];
        let text = format_annotations(&anns);
        assert_eq!(parse_annotations(&text).unwrap(), anns);
        assert_eq!(parse_annotations("# header\n\n4 2 1 2 eye\n").unwrap().len(), 1);
        assert!(parse_annotations("4 2 1 eye").is_err());
        assert!(parse_annotations("4 2 1 2 blink").is_err());
        assert!(parse_annotations("x 2 1 2 eye").is_err());
    }

    proptest! {
        #[test]
        fn mask_mass_is_preserved(
            intervals in proptest::collection::vec((0u32..3700, 2u32..400), 0..6),
            extra in 0usize..2400,
        ) {
            let n = 15_000 + extra;
            let r = Recording::new(4, 2, SAMPLE_RATE, vec![0.0; n]).unwrap();
            let anns: Vec<Annotation> = intervals
                .iter()
                .map(|&(s, l)| {
                    let start = s as f64 * 0.016;
                    ann(start, (start + l as f64 * 0.016).min(n as f64 / 250.0), ArtifactKind::Eye)
                })
                .filter(|a| a.start_s < a.end_s)
                .collect();
            let mut truth = vec![false; n];
            for a in &anns {
                let (s, e) = (((a.start_s * 250.0).round()) as usize, ((a.end_s * 250.0).round()) as usize);
                for t in truth.iter_mut().take(e).skip(s) {
                    *t = true;
                }
            }
            let retained = (n / SEGMENT_LEN) * SEGMENT_LEN;
            let expected = truth[..retained].iter().filter(|&&b| b).count();
            let segs = segment(&r, &anns).unwrap();
            prop_assert_eq!(segs.iter().map(Segment::artifact_count).sum::<usize>(), expected);
        }
    }
}
