//! Binary checkpoint files, little-endian: magic, version, a length-prefixed
//! JSON block with configuration and history, then named `f32` tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Checkpoint, EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"E4GC";
pub const CHECKPOINT_VERSION: u32 = 1;
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    selection: String,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let header = Header {
        model: c.model.config().clone(),
        train: c.train_config.clone(),
        history: c.history.clone(),
        best_epoch: c.best_epoch,
        selection: c.selection.clone(),
        adam: c.adam.as_ref().map(|a| AdamHeader { t: a.t, beta1: a.beta1, beta2: a.beta2, eps: a.eps }),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut tensors = c.model.named_tensors();
    if let Some(a) = &c.adam {
        for (i, p) in c.model.params().iter().enumerate() {
            let shape = p.value.shape();
            tensors.push((format!("{ADAM_M}{}", p.name), Tensor::new(shape, a.m[i].clone()).expect("moment shape")));
            tensors.push((format!("{ADAM_V}{}", p.name), Tensor::new(shape, a.v[i].clone()).expect("moment shape")));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        push_tensor(&mut out, name, t);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::corrupt("checkpoint", format!("truncated: need {n} bytes at offset {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |d: String| Error::corrupt("checkpoint", d);
    let mut r = Reader { bytes, at: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("missing E4GC header".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("config block: {e}")))?;
    let count = r.u32()? as usize;
    let mut model_tensors = Vec::new();
    let mut moments = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| bad(format!("tensor name: {e}")))?;
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(4).ok_or_else(|| bad(format!("{name}: extent overflow")))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        if name.starts_with(ADAM_M) || name.starts_with(ADAM_V) {
            moments.push((name, t));
        } else {
            model_tensors.push((name, t));
        }
    }
    if r.at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    let model = Model::from_named_tensors(header.model, &model_tensors)?;
    let adam = match header.adam {
        None if moments.is_empty() => None,
        None => return Err(bad("optimizer moments without optimizer header".into())),
        Some(h) => {
            let lookup = |prefix: &str, p: &str| -> Result<Vec<f32>> {
                let key = format!("{prefix}{p}");
                moments
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, t)| t.data().to_vec())
                    .ok_or_else(|| bad(format!("missing {key}")))
            };
            let m = model.params().iter().map(|p| lookup(ADAM_M, &p.name)).collect::<Result<Vec<_>>>()?;
            let v = model.params().iter().map(|p| lookup(ADAM_V, &p.name)).collect::<Result<Vec<_>>>()?;
            for ((p, mi), vi) in model.params().iter().zip(&m).zip(&v) {
                if mi.len() != p.value.len() || vi.len() != p.value.len() {
                    return Err(bad(format!("optimizer moments for {} have wrong length", p.name)));
                }
            }
            Some(AdamState { m, v, t: h.t, beta1: h.beta1, beta2: h.beta2, eps: h.eps })
        }
    };
    Ok(Checkpoint {
        model,
        adam,
        history: header.history,
        train_config: header.train,
        best_epoch: header.best_epoch,
        selection: header.selection,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Phase;
    use crate::model::Variant;
    use crate::rng::seeded;

    fn sample() -> Checkpoint {
        let mut model = Model::build(ModelConfig::default(), &mut seeded(4)).unwrap();
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            p.value.data_mut().iter_mut().enumerate().for_each(|(j, v)| *v += (i * 31 + j) as f32 * 1e-3);
        }
        let mut adam = AdamState::new(model.params());
        adam.t = 17;
        adam.m.iter_mut().flatten().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-4);
        adam.v.iter_mut().flatten().enumerate().for_each(|(i, v)| *v = (i as f32).sqrt());
        Checkpoint {
            model,
            adam: Some(adam),
            history: vec![EpochRecord { epoch: 1, train_loss: 0.1 + 0.2, exit_losses: vec![1.0 / 3.0; 5], val_f1: 0.7 }],
            train_config: Some(TrainConfig::default()),
            best_epoch: 1,
            selection: super::super::SELECTION.into(),
        }
    }

    fn bits(c: &Checkpoint) -> Vec<(String, Vec<u32>)> {
        c.model.named_tensors().into_iter().map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect())).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = encode_checkpoint(&c);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(bits(&back), bits(&c));
        assert_eq!(back.adam, c.adam);
        assert_eq!(back.history, c.history);
        assert_eq!(back.train_config, c.train_config);
        assert_eq!(encode_checkpoint(&back), bytes);

        let x = Tensor::from_fn(&[1, 2500], |i| (i as f32 * 0.02).sin());
        let a = c.model.forward(&x, Phase::Eval, &mut seeded(0)).unwrap();
        let b = back.model.forward(&x, Phase::Eval, &mut seeded(0)).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.e4gc");
        save_checkpoint(&c, &p).unwrap();
        assert_eq!(bits(&load_checkpoint(&p).unwrap()), bits(&c));
    }

    #[test]
    fn untrained_vanilla_round_trip() {
        let model = Model::build(ModelConfig::default().with_variant(Variant::Vanilla), &mut seeded(2)).unwrap();
        let c = Checkpoint::untrained(model);
        let back = decode_checkpoint(&encode_checkpoint(&c)).unwrap();
        assert!(back.adam.is_none());
        assert_eq!(back.model.variant(), Variant::Vanilla);
        assert_eq!(bits(&back), bits(&c));
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = encode_checkpoint(&sample());
        for cut in [0, 3, 8, 100, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Corrupt { .. })), "cut {cut}");
        }
        let mut b = bytes.clone();
        b[1] = b'X';
        assert!(decode_checkpoint(&b).is_err());
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(decode_checkpoint(&b).is_err());
        let mut b = bytes;
        b.push(0);
        assert!(decode_checkpoint(&b).is_err());
    }
}
