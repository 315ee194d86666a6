//! Binary dataset files, little-endian: magic, version, segment count, then
//! per segment the patient id, artifact kind code, samples as `f32` and the
//! mask packed eight labels per byte, least significant bit first.

use std::path::Path;

use super::{ArtifactKind, Segment, SEGMENT_LEN};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"E4GD";
pub const DATASET_VERSION: u32 = 1;
const MASK_BYTES: usize = SEGMENT_LEN.div_ceil(8);
const RECORD_BYTES: usize = 4 + 1 + 4 * SEGMENT_LEN + MASK_BYTES;

pub fn encode_dataset(segments: &[Segment]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + segments.len() * RECORD_BYTES);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    for s in segments {
        out.extend_from_slice(&s.patient_id.to_le_bytes());
        out.push(s.artifact_kind.code());
        for v in s.x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut mask = [0u8; MASK_BYTES];
        for (i, &b) in s.y.iter().enumerate() {
            mask[i / 8] |= (b & 1) << (i % 8);
        }
        out.extend_from_slice(&mask);
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Segment>> {
    let bad = |d: String| Error::corrupt("dataset", d);
    if bytes.len() < 12 || &bytes[..4] != DATASET_MAGIC {
        return Err(bad("missing E4GD header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = word(8) as usize;
    let expected = 12 + count * RECORD_BYTES;
    if bytes.len() != expected {
        return Err(bad(format!("{count} segments need {expected} bytes, file has {}", bytes.len())));
    }
    (0..count)
        .map(|k| {
            let rec = &bytes[12 + k * RECORD_BYTES..12 + (k + 1) * RECORD_BYTES];
            let patient = u32::from_le_bytes(rec[..4].try_into().expect("4 bytes"));
            let kind = ArtifactKind::from_code(rec[4]).ok_or_else(|| bad(format!("segment {k}: kind code {}", rec[4])))?;
            let x = rec[5..5 + 4 * SEGMENT_LEN]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let mask = &rec[5 + 4 * SEGMENT_LEN..];
            if mask[MASK_BYTES - 1] >> (SEGMENT_LEN % 8) != 0 {
                return Err(bad(format!("segment {k}: padding bits set")));
            }
            let y = (0..SEGMENT_LEN).map(|i| (mask[i / 8] >> (i % 8)) & 1).collect();
            Segment::new(x, y, patient, 0, kind).map_err(|e| bad(format!("segment {k}: {e}")))
        })
        .collect()
}

pub fn write_dataset(path: &Path, segments: &[Segment]) -> Result<()> {
    std::fs::write(path, encode_dataset(segments)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Segment>> {
    decode_dataset(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
